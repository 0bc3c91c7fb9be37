//! Reference implementations used as test oracles. Each one is written
//! for clarity over speed and shares no code with the crate.

#![allow(dead_code)]

use std::collections::HashMap;

use malscan_core::Label;

/// Entropy from a hash-map histogram, via `log2 n - (1/n) Σ c log2 c`.
pub fn entropy_oracle(bytes: &[u8]) -> f64 {
    if bytes.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<u8, u64> = HashMap::new();
    for b in bytes {
        *counts.entry(*b).or_default() += 1;
    }
    let n = bytes.len() as f64;
    let weighted: f64 = counts.values().map(|&c| c as f64 * (c as f64).log2()).sum();
    (n.log2() - weighted / n).max(0.0)
}

fn h2(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    [p, 1.0 - p]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

/// Best root split by brute force over every column and every midpoint of
/// adjacent distinct values: highest gain, then lowest column, then lowest
/// threshold. `None` when no column has two distinct values.
pub fn exhaustive_root_split(rows: &[Vec<f64>], labels: &[Label]) -> Option<(usize, f64, f64)> {
    let n = rows.len();
    let total_mal = labels.iter().filter(|l| **l == Label::Malicious).count();
    let parent = h2(total_mal, n);
    let mut best: Option<(usize, f64, f64)> = None;
    for col in 0..rows[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|r| r[col]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let t = (pair[0] + pair[1]) / 2.0;
            let (mut ln, mut lm, mut rn, mut rm) = (0, 0, 0, 0);
            for (r, l) in rows.iter().zip(labels) {
                let m = usize::from(*l == Label::Malicious);
                if r[col] <= t {
                    ln += 1;
                    lm += m;
                } else {
                    rn += 1;
                    rm += m;
                }
            }
            let gain = parent - ln as f64 / n as f64 * h2(lm, ln) - rn as f64 / n as f64 * h2(rm, rn);
            let better = match best {
                None => true,
                Some((_, _, g)) => gain > g + 1e-12,
            };
            if better {
                best = Some((col, t, gain));
            }
        }
    }
    best
}

/// Bernoulli NB log posteriors `[malicious, benign]` evaluated directly from
/// counts with Laplace smoothing.
pub fn nb_log_posteriors(rows: &[Vec<f64>], labels: &[Label], x: &[f64]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (slot, class) in [Label::Malicious, Label::Benign].into_iter().enumerate() {
        let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, l)| **l == class).map(|(r, _)| r).collect();
        let nc = members.len() as f64;
        let mut lp = (nc / rows.len() as f64).ln();
        for (j, &xj) in x.iter().enumerate() {
            let set = members.iter().filter(|r| r[j] == 1.0).count() as f64;
            let theta = (set + 1.0) / (nc + 2.0);
            lp += if xj == 1.0 { theta.ln() } else { (1.0 - theta).ln() };
        }
        out[slot] = lp;
    }
    out
}

/// Solution of the one-class ν-SVM from a generic solver.
pub struct QpSolution {
    pub alphas: Vec<f64>,
    pub w: Vec<f64>,
    pub rho: f64,
}

impl QpSolution {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.rho
    }
}

/// Euclidean projection onto `{a : 0 <= a_i <= cap, Σ a_i = 1}` by bisection
/// on the shift `τ` in `a_i = clip(v_i - τ, 0, cap)`.
fn project_capped_simplex(v: &[f64], cap: f64) -> Vec<f64> {
    let mass = |tau: f64| v.iter().map(|&x| (x - tau).clamp(0.0, cap)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - cap - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|&x| (x - tau).clamp(0.0, cap)).collect()
}

/// Accelerated projected gradient on the dual `min ½ αᵀ X Xᵀ α`, then the
/// offset as the smallest minimizer of the primal in ρ over the candidate
/// scores. `x` must already be scaled the way the model scales its inputs.
pub fn qp_oracle(x: &[Vec<f64>], nu: f64, iterations: usize) -> QpSolution {
    let n = x.len();
    let d = x[0].len();
    let cap = 1.0 / (nu * n as f64);
    let gram: Vec<Vec<f64>> = x
        .iter()
        .map(|a| x.iter().map(|b| a.iter().zip(b).map(|(p, q)| p * q).sum()).collect())
        .collect();
    let lipschitz = gram.iter().flatten().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
    let mut alpha = project_capped_simplex(&vec![1.0 / n as f64; n], cap);
    let mut y = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let grad: Vec<f64> = gram.iter().map(|row| row.iter().zip(&y).map(|(g, a)| g * a).sum()).collect();
        let step: Vec<f64> = y.iter().zip(&grad).map(|(a, g)| a - g / lipschitz).collect();
        let next = project_capped_simplex(&step, cap);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next
            .iter()
            .zip(&alpha)
            .map(|(a, prev)| a + (t - 1.0) / t_next * (a - prev))
            .collect();
        alpha = next;
        t = t_next;
    }
    let mut w = vec![0.0; d];
    for (a, xi) in alpha.iter().zip(x) {
        for (wj, v) in w.iter_mut().zip(xi) {
            *wj += a * v;
        }
    }
    let scores: Vec<f64> = x.iter().map(|xi| w.iter().zip(xi).map(|(a, b)| a * b).sum()).collect();
    let primal = |rho: f64| -rho + cap * scores.iter().map(|&s| (rho - s).max(0.0)).sum::<f64>();
    let mut candidates = scores.clone();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rho = candidates[0];
    let mut best = primal(rho);
    for &c in &candidates[1..] {
        let v = primal(c);
        if v < best - 1e-12 * best.abs().max(1.0) {
            best = v;
            rho = c;
        }
    }
    QpSolution { alphas: alpha, w, rho }
}

/// Population standard deviation per column, 1 where a column is constant.
pub fn column_scale_oracle(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len())
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

/// Gzip tarball of `(path, content)` entries in the order given.
pub fn tarball(entries: &[(&str, &[u8])], mtime: u64) -> Vec<u8> {
    let mut builder = tar::Builder::new(flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default()));
    for (path, content) in entries {
        let mut header = tar::Header::new_gnu();
        header.set_path(path).unwrap();
        header.set_size(content.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(mtime);
        header.set_cksum();
        builder.append(&header, *content).unwrap();
    }
    builder.into_inner().unwrap().finish().unwrap()
}
