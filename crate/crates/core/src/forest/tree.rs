//! Greedy CART-style classification tree with Gini splits.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "T: Scalar")]
pub enum TreeNode<T: Scalar> {
    /// Rows with `x[feature] < threshold` go left, the rest right.
    Split {
        feature: usize,
        threshold: T,
        left: Box<TreeNode<T>>,
        right: Box<TreeNode<T>>,
    },
    /// `class_counts` is indexed like the model's label universe.
    Leaf { class_counts: Vec<u32>, label: usize },
}

impl<T: Scalar> TreeNode<T> {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_label(&self, x: &[T]) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { label, .. } => return *label,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    fn visit_splits(&self, f: &mut impl FnMut(usize)) {
        if let TreeNode::Split {
            feature, left, right, ..
        } = self
        {
            f(*feature);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DecisionTree<T: Scalar> {
    pub root: TreeNode<T>,
    /// Sorted feature indices this tree may split on.
    pub feature_subset: Vec<usize>,
    pub max_depth: usize,
    pub oob_accuracy: Option<f64>,
}

impl<T: Scalar> DecisionTree<T> {
    pub fn predict_index(&self, x: &[T]) -> usize {
        self.root.leaf_label(x)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Feature index and threshold of the root split, if the root splits.
    pub fn root_split(&self) -> Option<(usize, T)> {
        match &self.root {
            TreeNode::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }

    /// Features used by at least one internal node.
    pub fn split_features(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.root.visit_splits(&mut |f| out.push(f));
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

/// Index of the largest count; the first (lexicographically smallest label)
/// wins ties.
pub(crate) fn argmax_first(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Split purity score `sum(L_c^2)/n_L + sum(R_c^2)/n_R`, kept as an exact
/// fraction. Maximizing it minimizes weighted Gini impurity.
#[derive(Debug, Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(left_sq: u128, n_left: u128, right_sq: u128, n_right: u128) -> Self {
        Purity {
            num: left_sq * n_right + right_sq * n_left,
            den: n_left * n_right,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Split<T> {
    feature: usize,
    threshold: T,
    purity: Purity,
}

fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let two = T::one() + T::one();
    let mid = lo + (hi - lo) / two;
    // adjacent floats: keep `lo` strictly left of the threshold
    if mid > lo {
        mid
    } else {
        hi
    }
}

fn best_split<T: Scalar>(
    x: &[Vec<T>],
    y: &[usize],
    n_classes: usize,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split<T>> {
    let n = rows.len();
    let mut best: Option<Split<T>> = None;
    let mut pairs: Vec<(T, usize)> = Vec::with_capacity(n);
    let mut total = vec![0u64; n_classes];
    for &r in rows {
        total[y[r]] += 1;
    }
    for &f in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x[r][f], y[r])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        let mut left = vec![0u64; n_classes];
        // running sums of squared class counts on each side
        let mut left_sq: u128 = 0;
        let mut right_sq: u128 = total.iter().map(|&c| (c as u128) * (c as u128)).sum();
        for i in 0..n - 1 {
            let c = pairs[i].1;
            let l = left[c] as u128;
            let r = (total[c] - left[c]) as u128;
            left_sq += 2 * l + 1;
            right_sq -= 2 * r - 1;
            left[c] += 1;
            let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
            if lo >= hi || lo.is_nan() || hi.is_nan() {
                continue;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let purity = Purity::of(left_sq, n_left as u128, right_sq, n_right as u128);
            if best
                .as_ref()
                .is_none_or(|b| purity.cmp(&b.purity) == Ordering::Greater)
            {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    purity,
                });
            }
        }
    }
    best
}

fn grow<T: Scalar>(
    x: &[Vec<T>],
    y: &[usize],
    n_classes: usize,
    rows: &mut [usize],
    features: &[usize],
    params: &TreeParams,
    depth: usize,
) -> TreeNode<T> {
    let mut counts = vec![0u32; n_classes];
    for &r in rows.iter() {
        counts[y[r]] += 1;
    }
    let label = argmax_first(&counts);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let min_leaf = params.min_samples_leaf.max(1);
    if pure || depth >= params.max_depth || rows.len() < 2 * min_leaf {
        return TreeNode::Leaf {
            class_counts: counts,
            label,
        };
    }
    let Some(split) = best_split(x, y, n_classes, rows, features, min_leaf) else {
        return TreeNode::Leaf {
            class_counts: counts,
            label,
        };
    };
    let mut cut = 0;
    for i in 0..rows.len() {
        if x[rows[i]][split.feature] < split.threshold {
            rows.swap(i, cut);
            cut += 1;
        }
    }
    let (l, r) = rows.split_at_mut(cut);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(x, y, n_classes, l, features, params, depth + 1)),
        right: Box::new(grow(x, y, n_classes, r, features, params, depth + 1)),
    }
}

/// Grows one tree top-down on the rows listed in `in_bag` (repeats count
/// with multiplicity), splitting only on `feature_subset`.
///
/// At each node every midpoint between consecutive distinct values of every
/// subset feature is scored by weighted Gini impurity; the best one wins, with
/// ties going to the earlier feature, then the smaller threshold. Growth stops
/// at `max_depth`, at a pure node, or when no split leaves `min_samples_leaf`
/// rows on both sides.
pub fn train_tree<T: Scalar>(
    x: &[Vec<T>],
    y: &[usize],
    n_classes: usize,
    in_bag: &[usize],
    feature_subset: &[usize],
    params: &TreeParams,
) -> DecisionTree<T> {
    let mut subset = feature_subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    let mut rows = in_bag.to_vec();
    let root = if rows.is_empty() {
        TreeNode::Leaf {
            class_counts: vec![0; n_classes],
            label: 0,
        }
    } else {
        grow(x, y, n_classes, &mut rows, &subset, params, 0)
    };
    DecisionTree {
        root,
        feature_subset: subset,
        max_depth: params.max_depth,
        oob_accuracy: None,
    }
}
