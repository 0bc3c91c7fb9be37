//! Binary decision tree grown greedily on information gain.

use serde::{Deserialize, Serialize};

use super::{check_width, ClassifierError, Label, LabeledDataset};
use crate::vectorizer::EncodedRow;
use crate::Scalar;

/// Gains closer than this are treated as equal for tie-breaking.
const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
#[serde(bound = "T: Scalar")]
pub enum TreeNode<T> {
    /// Rows with `value[column] <= threshold` go left.
    Split {
        column: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        class: Label,
        malicious: usize,
        benign: usize,
    },
}

/// Nodes are stored flat; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DecisionTreeModel<T> {
    pub width: usize,
    pub nodes: Vec<TreeNode<T>>,
    pub config: TreeConfig,
}

impl<T: Scalar> DecisionTreeModel<T> {
    pub fn predict(&self, row: &EncodedRow<T>) -> Result<Label, ClassifierError> {
        check_width(row, self.width)?;
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { class, .. } => return Ok(*class),
                TreeNode::Split {
                    column,
                    threshold,
                    left,
                    right,
                } => at = if row.values[*column] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn root_split(&self) -> Option<(usize, T)> {
        match self.nodes.first()? {
            TreeNode::Split { column, threshold, .. } => Some((*column, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[TreeNode<T>], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn binary_entropy<T: Scalar>(malicious: usize, total: usize) -> T {
    if total == 0 || malicious == 0 || malicious == total {
        return T::zero();
    }
    let p = T::of_usize(malicious) / T::of_usize(total);
    let q = T::one() - p;
    -(p * p.log2() + q * q.log2())
}

fn weighted_child_entropy<T: Scalar>(left_mal: usize, left_n: usize, right_mal: usize, right_n: usize) -> T {
    let n = T::of_usize(left_n + right_n);
    T::of_usize(left_n) / n * binary_entropy::<T>(left_mal, left_n)
        + T::of_usize(right_n) / n * binary_entropy::<T>(right_mal, right_n)
}

/// `H(parent) - |L|/n H(L) - |R|/n H(R)` in bits, for indices into `labels`.
pub fn information_gain<T: Scalar>(labels: &[Label], left: &[usize], right: &[usize]) -> T {
    let mal = |idx: &[usize]| idx.iter().filter(|&&i| labels[i].is_malicious()).count();
    let (lm, rm) = (mal(left), mal(right));
    let n = left.len() + right.len();
    binary_entropy::<T>(lm + rm, n) - weighted_child_entropy::<T>(lm, left.len(), rm, right.len())
}

fn majority(malicious: usize, benign: usize) -> Label {
    if malicious >= benign {
        Label::Malicious
    } else {
        Label::Benign
    }
}

struct Candidate<T> {
    column: usize,
    threshold: T,
    gain: T,
}

pub fn train_tree<T: Scalar>(data: &LabeledDataset<T>) -> Result<DecisionTreeModel<T>, ClassifierError> {
    train_tree_with(data, TreeConfig::default())
}

pub fn train_tree_with<T: Scalar>(
    data: &LabeledDataset<T>,
    config: TreeConfig,
) -> Result<DecisionTreeModel<T>, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let min_leaf = config.min_samples_leaf.max(1);
    let width = data.width();
    let mut nodes: Vec<TreeNode<T>> = Vec::new();
    // (node slot, row indices, depth)
    let mut pending: Vec<(usize, Vec<usize>, usize)> = Vec::new();
    nodes.push(placeholder());
    pending.push((0, (0..data.len()).collect(), 0));

    let mut order: Vec<usize> = Vec::with_capacity(data.len());
    while let Some((slot, idx, depth)) = pending.pop() {
        let mal = idx.iter().filter(|&&i| data.labels[i].is_malicious()).count();
        let ben = idx.len() - mal;
        let leaf = TreeNode::Leaf {
            class: majority(mal, ben),
            malicious: mal,
            benign: ben,
        };
        let depth_capped = config.max_depth.is_some_and(|d| depth >= d);
        if mal == 0 || ben == 0 || depth_capped || idx.len() < 2 * min_leaf {
            nodes[slot] = leaf;
            continue;
        }

        let parent_h = binary_entropy::<T>(mal, idx.len());
        let mut best: Option<Candidate<T>> = None;
        for column in 0..width {
            let value = |i: usize| data.rows[i].values[column];
            order.clear();
            order.extend_from_slice(&idx);
            order.sort_by(|&a, &b| value(a).partial_cmp(&value(b)).unwrap_or(std::cmp::Ordering::Equal));
            let mut left_mal = 0;
            for k in 0..order.len() - 1 {
                if data.labels[order[k]].is_malicious() {
                    left_mal += 1;
                }
                let (lo, hi) = (value(order[k]), value(order[k + 1]));
                if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                    continue;
                }
                let left_n = k + 1;
                let right_n = order.len() - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let gain = parent_h
                    - weighted_child_entropy::<T>(left_mal, left_n, mal - left_mal, right_n);
                if best.as_ref().is_none_or(|b| gain > b.gain + T::of(GAIN_EPS)) {
                    best = Some(Candidate {
                        column,
                        threshold: midpoint(lo, hi),
                        gain,
                    });
                }
            }
        }

        let Some(best) = best else {
            nodes[slot] = leaf;
            continue;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| data.rows[i].values[best.column] <= best.threshold);
        let left = nodes.len();
        nodes.push(placeholder());
        let right = nodes.len();
        nodes.push(placeholder());
        nodes[slot] = TreeNode::Split {
            column: best.column,
            threshold: best.threshold,
            left,
            right,
        };
        pending.push((right, right_idx, depth + 1));
        pending.push((left, left_idx, depth + 1));
    }
    Ok(DecisionTreeModel { width, nodes, config })
}

fn placeholder<T>() -> TreeNode<T> {
    TreeNode::Leaf {
        class: Label::Benign,
        malicious: 0,
        benign: 0,
    }
}

/// Midpoint that is guaranteed to separate `lo` from `hi`.
fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let mid = lo + (hi - lo) / T::of(2.0);
    if mid < hi {
        mid
    } else {
        lo
    }
}
