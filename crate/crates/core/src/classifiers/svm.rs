//! Linear one-class SVM trained on benign rows only.
//!
//! The dual of the ν-parameterized one-class program is
//!
//! ```text
//! minimize   ½ ‖Σ αᵢ xᵢ‖²
//! subject to 0 ≤ αᵢ ≤ 1/(νn),  Σ αᵢ = 1
//! ```
//!
//! solved here by sequential minimal optimization: each step moves weight
//! between the most violating pair of coefficients (second-order working
//! set selection), which keeps the equality constraint satisfied exactly.
//! With a linear kernel the weight vector `w = Σ αᵢ xᵢ` is maintained
//! explicitly. The offset is then taken from the primal: `ρ` is the
//! smallest minimizer of `-ρ + (1/(νn)) Σ max(0, ρ - w·xᵢ)`, i.e. the
//! `⌈νn⌉`-th smallest training score, which bounds the fraction of training
//! points with a negative decision value by ν.
//!
//! Inputs are divided by their per-column standard deviation (columns with
//! no spread are left as is). They are not centered: the linear one-class
//! hyperplane separates the data from the origin, and centering would put
//! the origin inside the data.

use serde::{Deserialize, Serialize};

use super::{check_width, ClassifierError, Label};
use crate::vectorizer::EncodedRow;
use crate::Scalar;

/// Recompute the gradient from scratch this often to stop drift.
const REFRESH_EVERY: usize = 2048;
/// Iterations between attempts to drop idle coefficients from the active set.
const SHRINK_EVERY: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub nu: f64,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.001,
            tolerance: 1e-8,
            max_iterations: 10_000_000,
        }
    }
}

impl SvmConfig {
    pub fn with_nu(nu: f64) -> Self {
        Self { nu, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OneClassSvmModel<T> {
    pub nu: T,
    pub weights: Vec<T>,
    pub rho: T,
    /// Per-column divisor applied before the dot product.
    pub scale: Vec<T>,
}

/// A trained model together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct SvmFit<T> {
    pub model: OneClassSvmModel<T>,
    pub alphas: Vec<T>,
    pub upper_bound: T,
    pub iterations: usize,
    pub violation: T,
}

impl<T: Scalar> OneClassSvmModel<T> {
    pub fn standardize(&self, row: &EncodedRow<T>) -> Vec<T> {
        row.values.iter().zip(&self.scale).map(|(&v, &s)| v / s).collect()
    }

    pub fn decision(&self, row: &EncodedRow<T>) -> Result<T, ClassifierError> {
        check_width(row, self.weights.len())?;
        let score: T = row
            .values
            .iter()
            .zip(&self.scale)
            .zip(&self.weights)
            .map(|((&v, &s), &w)| v / s * w)
            .sum();
        Ok(score - self.rho)
    }

    /// Flags strictly negative decision values; the boundary is benign.
    pub fn predict(&self, row: &EncodedRow<T>) -> Result<Label, ClassifierError> {
        Ok(if self.decision(row)? < T::zero() {
            Label::Malicious
        } else {
            Label::Benign
        })
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Per-column standard deviation, 1 for columns without spread.
pub(crate) fn column_scale<T: Scalar>(rows: &[EncodedRow<T>], width: usize) -> Vec<T> {
    let n = T::of_usize(rows.len());
    (0..width)
        .map(|j| {
            let mean = rows.iter().map(|r| r.values[j]).sum::<T>() / n;
            let var = rows.iter().map(|r| (r.values[j] - mean).powi(2)).sum::<T>() / n;
            let sd = var.sqrt();
            if sd > T::epsilon() * (T::one() + mean.abs()) {
                sd
            } else {
                T::one()
            }
        })
        .collect()
}

/// Smallest minimizer of the primal objective in ρ for fixed scores.
pub(crate) fn offset_from_scores<T: Scalar>(scores: &[T], nu: T) -> T {
    let n = scores.len();
    let k = (nu * T::of_usize(n) - T::of(1e-9)).ceil().to_usize().unwrap_or(1);
    let idx = k.clamp(1, n) - 1;
    let mut sorted = scores.to_vec();
    sorted.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted[idx]
}

pub fn train_ocsvm<T: Scalar>(
    benign_rows: &[EncodedRow<T>],
    config: SvmConfig,
) -> Result<SvmFit<T>, ClassifierError> {
    if !(config.nu > 0.0 && config.nu <= 1.0) {
        return Err(ClassifierError::InvalidParameter(format!(
            "nu must be in (0, 1], got {}",
            config.nu
        )));
    }
    let n = benign_rows.len();
    if n < 2 {
        return Err(ClassifierError::TooFewSamples(format!(
            "one-class SVM needs at least 2 rows, got {n}"
        )));
    }
    let width = benign_rows[0].len();
    for r in benign_rows {
        check_width(r, width)?;
    }

    let scale = column_scale(benign_rows, width);
    // row-major, one row per `width` values
    let x: Vec<T> = benign_rows
        .iter()
        .flat_map(|r| r.values.iter().zip(&scale).map(|(&v, &s)| v / s))
        .collect();
    let row = |t: usize| &x[t * width..(t + 1) * width];
    let norms: Vec<T> = (0..n).map(|t| dot(row(t), row(t))).collect();

    let nu = T::of(config.nu);
    let upper = T::one() / (nu * T::of_usize(n));
    // fill the first ⌊νn⌋ coefficients to the bound, put the remainder on the next
    let mut alphas = vec![T::zero(); n];
    let mut remaining = T::one();
    for a in alphas.iter_mut() {
        if remaining <= T::zero() {
            break;
        }
        *a = upper.min(remaining);
        remaining = remaining - *a;
    }

    let weights = |alphas: &[T]| -> Vec<T> {
        let mut w = vec![T::zero(); width];
        for (t, a) in alphas.iter().enumerate() {
            if *a > T::zero() {
                for (wj, &v) in w.iter_mut().zip(row(t)) {
                    *wj = *wj + *a * v;
                }
            }
        }
        w
    };
    let mut w = weights(&alphas);
    // the gradient of the dual is the score x·w
    let mut grad: Vec<T> = (0..n).map(|t| dot(row(t), &w)).collect();

    let tol = T::of(config.tolerance.max(100.0 * T::epsilon().as_f64()));
    let tau = T::of(1e-12);
    let mut iterations = 0;
    // Shrinking: coefficients stuck at a bound whose score puts them on
    // the wrong side of every candidate are left out of selection and
    // gradient updates. Optimality is always confirmed on the full set.
    let mut active: Vec<usize> = (0..n).collect();
    let mut since_shrink = 0;
    let violation = loop {
        // i: lowest gradient among coefficients that can still grow
        let mut i = usize::MAX;
        let mut g_min = T::infinity();
        let mut g_max = T::neg_infinity();
        for &t in &active {
            if alphas[t] < upper && grad[t] < g_min {
                g_min = grad[t];
                i = t;
            }
            if alphas[t] > T::zero() && grad[t] > g_max {
                g_max = grad[t];
            }
        }
        // j: second-order choice among coefficients that can shrink
        let mut j = usize::MAX;
        let mut best_obj = T::zero();
        if i != usize::MAX {
            let xi = row(i);
            for &t in &active {
                if alphas[t] <= T::zero() {
                    continue;
                }
                let diff = grad[t] - g_min;
                if diff > T::zero() {
                    let mut curvature = norms[i] + norms[t] - (dot(xi, row(t)) + dot(xi, row(t)));
                    if curvature <= T::zero() {
                        curvature = tau;
                    }
                    let obj = diff * diff / curvature;
                    if obj > best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        let gap = if i == usize::MAX || g_max == T::neg_infinity() {
            T::zero()
        } else {
            g_max - g_min
        };
        if gap <= tol || j == usize::MAX {
            if active.len() == n {
                break gap.max(T::zero());
            }
            // converged on the active set: refresh everything and re-check
            w = weights(&alphas);
            grad = (0..n).map(|t| dot(row(t), &w)).collect();
            active = (0..n).collect();
            since_shrink = 0;
            continue;
        }
        if iterations >= config.max_iterations {
            return Err(ClassifierError::ConvergenceFailure {
                iterations,
                violation: gap.as_f64(),
            });
        }
        iterations += 1;
        since_shrink += 1;

        let mut curvature = norms[i] + norms[j] - (dot(row(i), row(j)) + dot(row(i), row(j)));
        if curvature <= T::zero() {
            curvature = tau;
        }
        let room_i = upper - alphas[i];
        let room_j = alphas[j];
        let delta = ((grad[j] - grad[i]) / curvature).min(room_i).min(room_j);
        alphas[i] = if delta == room_i { upper } else { alphas[i] + delta };
        alphas[j] = if delta == room_j { T::zero() } else { alphas[j] - delta };

        let step: Vec<T> = row(i).iter().zip(row(j)).map(|(&a, &b)| delta * (a - b)).collect();
        for (wk, &s) in w.iter_mut().zip(&step) {
            *wk = *wk + s;
        }
        for &t in &active {
            grad[t] = grad[t] + dot(row(t), &step);
        }
        if iterations % REFRESH_EVERY == 0 {
            w = weights(&alphas);
            for &t in &active {
                grad[t] = dot(row(t), &w);
            }
        }
        if since_shrink >= SHRINK_EVERY {
            since_shrink = 0;
            active.retain(|&t| {
                let idle_low = alphas[t] <= T::zero() && grad[t] > g_max;
                let idle_high = alphas[t] >= upper && grad[t] < g_min;
                !(idle_low || idle_high)
            });
        }
    };

    let w = weights(&alphas);
    let grad: Vec<T> = (0..n).map(|t| dot(row(t), &w)).collect();
    let rho = offset_from_scores(&grad, nu);
    Ok(SvmFit {
        model: OneClassSvmModel {
            nu,
            weights: w,
            rho,
            scale,
        },
        alphas,
        upper_bound: upper,
        iterations,
        violation,
    })
}
