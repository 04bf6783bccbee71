//! Stage-2 refinement: a binary CART classifier with Gini impurity.
//!
//! Greedy splits at midpoints of sorted distinct feature values, ties broken
//! by lower feature index then lower threshold, so fitting is deterministic
//! and invariant to input sample order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Gini,
}

/// Tree hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub criterion: Criterion,
}

impl Default for DtConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_samples_leaf: 5,
            criterion: Criterion::Gini,
        }
    }
}

impl DtConfig {
    pub fn new(max_depth: usize, min_samples_leaf: usize) -> Result<Self> {
        if max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be >= 1".into()));
        }
        if min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        Ok(Self {
            max_depth,
            min_samples_leaf,
            criterion: Criterion::Gini,
        })
    }
}

/// Internal nodes route `x[feature_index] <= threshold` to the left child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        label: u8,
        class_counts: [usize; 2],
    },
}

/// A fitted tree plus the feature dimension it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub num_features: usize,
}

/// Gini impurity of a binary count pair: 0 when pure, 0.5 at 50/50.
pub fn gini_impurity(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Fits a binary CART tree. Labels must be 0 or 1.
pub fn fit_tree(data: &[(Vec<f64>, u8)], cfg: &DtConfig) -> Result<DecisionTree> {
    if data.is_empty() {
        return Err(Error::EmptyInput("decision tree training data"));
    }
    let dim = data[0].0.len();
    for (x, label) in data {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
                context: "decision tree sample",
            });
        }
        if *label > 1 {
            return Err(Error::LabelOutOfRange {
                label: *label as usize,
                num_classes: 2,
            });
        }
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let root = build_node(data, &indices, dim, 0, cfg);
    Ok(DecisionTree {
        root,
        num_features: dim,
    })
}

fn counts_of(data: &[(Vec<f64>, u8)], indices: &[usize]) -> [usize; 2] {
    let mut counts = [0usize; 2];
    for &i in indices {
        counts[data[i].1 as usize] += 1;
    }
    counts
}

fn leaf(counts: [usize; 2]) -> TreeNode {
    // Majority label; ties resolve to 0 (known).
    let label = u8::from(counts[1] > counts[0]);
    TreeNode::Leaf {
        label,
        class_counts: counts,
    }
}

fn build_node(
    data: &[(Vec<f64>, u8)],
    indices: &[usize],
    dim: usize,
    depth: usize,
    cfg: &DtConfig,
) -> TreeNode {
    let counts = counts_of(data, indices);
    let impurity = gini_impurity(counts);
    if impurity == 0.0 || depth >= cfg.max_depth || indices.len() < 2 * cfg.min_samples_leaf {
        return leaf(counts);
    }

    let Some(split) = best_split(data, indices, dim, counts, impurity, cfg) else {
        return leaf(counts);
    };

    let (mut left_idx, mut right_idx) = (Vec::new(), Vec::new());
    for &i in indices {
        if data[i].0[split.feature] <= split.threshold {
            left_idx.push(i);
        } else {
            right_idx.push(i);
        }
    }
    TreeNode::Internal {
        feature_index: split.feature,
        threshold: split.threshold,
        left: Box::new(build_node(data, &left_idx, dim, depth + 1, cfg)),
        right: Box::new(build_node(data, &right_idx, dim, depth + 1, cfg)),
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

/// Best (feature, threshold) by Gini-impurity decrease. Candidates sit at
/// midpoints of consecutive distinct values; both children must respect
/// `min_samples_leaf`. Zero-decrease splits are still taken on impure nodes
/// (needed to untangle parity-style data), so the only hard requirement is
/// that a valid candidate exists.
fn best_split(
    data: &[(Vec<f64>, u8)],
    indices: &[usize],
    dim: usize,
    counts: [usize; 2],
    impurity: f64,
    cfg: &DtConfig,
) -> Option<Split> {
    let n = indices.len();
    let mut best: Option<Split> = None;

    for feature in 0..dim {
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by(|&a, &b| {
            data[a].0[feature]
                .partial_cmp(&data[b].0[feature])
                .expect("features are finite")
        });

        let mut left = [0usize; 2];
        for w in 0..n - 1 {
            let i = order[w];
            left[data[i].1 as usize] += 1;
            let v = data[i].0[feature];
            let next = data[order[w + 1]].0[feature];
            if v == next {
                continue;
            }
            let left_n = w + 1;
            let right_n = n - left_n;
            if left_n < cfg.min_samples_leaf || right_n < cfg.min_samples_leaf {
                continue;
            }
            let right = [counts[0] - left[0], counts[1] - left[1]];
            let weighted = (left_n as f64 * gini_impurity(left)
                + right_n as f64 * gini_impurity(right))
                / n as f64;
            let decrease = (impurity - weighted).max(0.0);
            let threshold = v + (next - v) / 2.0;

            let better = match &best {
                None => true,
                Some(b) => {
                    decrease > b.decrease
                        || (decrease == b.decrease
                            && (feature < b.feature
                                || (feature == b.feature && threshold < b.threshold)))
                }
            };
            if better {
                best = Some(Split {
                    feature,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best
}

impl DecisionTree {
    /// Routes a sample to its leaf label.
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        if x.len() != self.num_features {
            return Err(Error::DimensionMismatch {
                expected: self.num_features,
                got: x.len(),
                context: "decision tree input",
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { label, .. } => return Ok(*label),
                TreeNode::Internal {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature_index] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Longest internal path; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }

    /// Textual dump, one node per line, children indented under parents.
    pub fn dump(&self) -> String {
        fn walk(node: &TreeNode, indent: usize, out: &mut String) {
            let pad = "  ".repeat(indent);
            match node {
                TreeNode::Leaf {
                    label,
                    class_counts,
                } => {
                    out.push_str(&format!(
                        "{pad}leaf {label} (known {}, unknown {})\n",
                        class_counts[0], class_counts[1]
                    ));
                }
                TreeNode::Internal {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    out.push_str(&format!("{pad}split f{feature_index} <= {threshold}\n"));
                    walk(left, indent + 1, out);
                    walk(right, indent + 1, out);
                }
            }
        }
        let mut out = String::new();
        walk(&self.root, 0, &mut out);
        out
    }
}
