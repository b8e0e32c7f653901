//! Random forest classifier.
//!
//! Each tree `i` draws from its own ChaCha8 stream: the generator is seeded
//! with `seed` via `seed_from_u64` and switched to stream `i`. From that
//! stream the tree takes, in order, `n` bootstrap indices (`random_range(0..n)`)
//! and then its feature subset (`rand::seq::index::sample`, sorted). Rows are
//! put in a canonical order before bagging, so the model depends only on the
//! multiset of training rows, the parameters and the seed.

mod majority;
mod tree;

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::LabeledInstance;
use crate::profiling::FeatureVector;
use crate::scalar::Scalar;

pub use majority::{train_majority, MajorityModel};
pub use tree::{train_tree, DecisionTree, TreeNode, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features drawn per tree; `None` means `ceil(sqrt(F))`.
    #[serde(default)]
    pub features_per_tree: Option<usize>,
    pub min_samples_leaf: usize,
    pub seed: u64,
    /// When false every tree trains on all rows exactly once (no OOB data).
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 16,
            features_per_tree: None,
            min_samples_leaf: 1,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn resolved_features_per_tree(&self, n_features: usize) -> usize {
        self.features_per_tree
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .max(1)
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if n_features == 0 {
            return Err(Error::Config("dataset has no features".into()));
        }
        let k = self.resolved_features_per_tree(n_features);
        if k > n_features {
            return Err(Error::Config(format!(
                "features_per_tree {k} exceeds the {n_features} available features"
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generator for tree `index` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n` indices uniformly with replacement; returns them with the sorted
/// indices never drawn.
pub fn bootstrap_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let in_bag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut seen = vec![false; n];
    for &i in &in_bag {
        seen[i] = true;
    }
    let oob = (0..n).filter(|&i| !seen[i]).collect();
    (in_bag, oob)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RandomForestModel<T: Scalar> {
    pub format_version: u32,
    pub params: ForestParams,
    pub feature_schema: Vec<String>,
    /// Sorted class labels; tree leaves refer to positions in this list.
    pub label_universe: Vec<String>,
    /// Set when training data held fewer than two classes.
    pub degenerate: bool,
    pub trees: Vec<DecisionTree<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub label_index: usize,
    /// Share of trees voting for each label, aligned with the label universe.
    pub vote_fractions: Vec<f64>,
}

fn row_cmp<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Trains a forest on rows `x` with string targets `y`.
///
/// Tree `i` bootstraps the (canonically ordered) rows, draws its feature
/// subset without replacement, grows a depth-limited tree and records its
/// accuracy on its out-of-bag rows. Trees train in parallel; the result does
/// not depend on scheduling.
pub fn train_forest<T: Scalar, S: AsRef<str>>(
    x: &[Vec<T>],
    y: &[S],
    feature_schema: &[String],
    params: &ForestParams,
) -> Result<RandomForestModel<T>> {
    let n_features = feature_schema.len();
    params.validate(n_features)?;
    if x.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Invalid(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if let Some(r) = x.iter().position(|r| r.len() != n_features) {
        return Err(Error::Invalid(format!("row {r} has {} values, schema has {n_features}", x[r].len())));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite feature value".into()));
    }

    let label_universe: Vec<String> = y
        .iter()
        .map(|s| s.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let degenerate = label_universe.len() < 2;
    if degenerate {
        log::warn!("training data has a single class; the model is constant");
    }

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| row_cmp(&x[a], &x[b]).then_with(|| y[a].as_ref().cmp(y[b].as_ref())));
    let rows: Vec<Vec<T>> = order.iter().map(|&i| x[i].clone()).collect();
    let labels: Vec<usize> = order
        .iter()
        .map(|&i| label_universe.binary_search_by(|l| l.as_str().cmp(y[i].as_ref())).unwrap_or(0))
        .collect();

    let n = rows.len();
    let k = params.resolved_features_per_tree(n_features);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
    };
    let n_classes = label_universe.len();
    let trees: Vec<DecisionTree<T>> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree_rng(params.seed, i as u64);
            let (in_bag, oob) = if params.bootstrap {
                bootstrap_sample(n, &mut rng)
            } else {
                ((0..n).collect(), Vec::new())
            };
            let mut subset = sample_indices(&mut rng, n_features, k).into_vec();
            subset.sort_unstable();
            let mut tree = train_tree(&rows, &labels, n_classes, &in_bag, &subset, &tree_params);
            if !oob.is_empty() {
                let hits = oob
                    .iter()
                    .filter(|&&r| tree.predict_index(&rows[r]) == labels[r])
                    .count();
                tree.oob_accuracy = Some(hits as f64 / oob.len() as f64);
            }
            tree
        })
        .collect();

    Ok(RandomForestModel {
        format_version: MODEL_FORMAT_VERSION,
        params: params.clone(),
        feature_schema: feature_schema.to_vec(),
        label_universe,
        degenerate,
        trees,
    })
}

/// Trains on labeled instances, converting features to `T`.
pub fn train_on_instances<T: Scalar>(
    data: &[LabeledInstance],
    params: &ForestParams,
) -> Result<RandomForestModel<T>> {
    let schema = data
        .first()
        .map(|d| d.features.schema.clone())
        .ok_or_else(|| Error::Invalid("cannot train on an empty dataset".into()))?;
    let x = data
        .iter()
        .map(|d| Ok(d.features.aligned_to(&schema)?.into_iter().map(T::of).collect()))
        .collect::<Result<Vec<Vec<T>>>>()?;
    let y: Vec<&str> = data.iter().map(|d| d.target.as_str()).collect();
    train_forest(&x, &y, &schema, params)
}

impl<T: Scalar> RandomForestModel<T> {
    /// Majority vote over trees on a row already ordered like the schema.
    pub fn predict_row(&self, x: &[T]) -> Prediction {
        let mut votes = vec![0u32; self.label_universe.len()];
        for t in &self.trees {
            votes[t.predict_index(x)] += 1;
        }
        let label_index = tree::argmax_first(&votes);
        let n = self.trees.len() as f64;
        Prediction {
            label: self.label_universe[label_index].clone(),
            label_index,
            vote_fractions: votes.iter().map(|&v| f64::from(v) / n).collect(),
        }
    }

    /// Predicts a feature vector, binding features by name.
    pub fn predict<U: Scalar>(&self, x: &FeatureVector<U>) -> Result<Prediction> {
        let row: Vec<T> = x
            .aligned_to(&self.feature_schema)?
            .into_iter()
            .map(|v| T::of(v.as_f64()))
            .collect();
        Ok(self.predict_row(&row))
    }

    /// Per-feature contrast of OOB accuracy between trees that could use the
    /// feature and trees that could not, sorted best first (ties by name).
    pub fn feature_importance(&self) -> Result<Vec<(String, f64)>> {
        let scored: Vec<(&DecisionTree<T>, f64)> = self
            .trees
            .iter()
            .filter_map(|t| t.oob_accuracy.map(|a| (t, a)))
            .collect();
        if scored.is_empty() {
            return Err(Error::Invalid(
                "no tree has out-of-bag data; train on a larger dataset with bootstrap enabled".into(),
            ));
        }
        let mean = |v: &[f64]| {
            if v.is_empty() {
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let mut out: Vec<(String, f64)> = self
            .feature_schema
            .iter()
            .enumerate()
            .map(|(f, name)| {
                let (with, without): (Vec<_>, Vec<_>) = scored
                    .iter()
                    .partition(|(t, _)| t.feature_subset.binary_search(&f).is_ok());
                let with: Vec<f64> = with.iter().map(|(_, a)| *a).collect();
                let without: Vec<f64> = without.iter().map(|(_, a)| *a).collect();
                let score = match (mean(&with), mean(&without)) {
                    (Some(a), Some(b)) => a - b,
                    _ => 0.0,
                };
                (name.clone(), score)
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }

    /// Mean OOB accuracy over trees that have OOB data.
    pub fn mean_oob_accuracy(&self) -> Option<f64> {
        let v: Vec<f64> = self.trees.iter().filter_map(|t| t.oob_accuracy).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}_pki")).collect()
    }

    fn leaf(label: usize) -> DecisionTree<f64> {
        DecisionTree {
            root: TreeNode::Leaf {
                class_counts: vec![0, 0],
                label,
            },
            feature_subset: vec![0],
            max_depth: 1,
            oob_accuracy: Some(0.5),
        }
    }

    fn voting(labels: &[usize]) -> RandomForestModel<f64> {
        RandomForestModel {
            format_version: MODEL_FORMAT_VERSION,
            params: ForestParams::default(),
            feature_schema: schema(1),
            label_universe: vec!["A".into(), "B".into()],
            degenerate: false,
            trees: labels.iter().map(|&l| leaf(l)).collect(),
        }
    }

    #[test]
    fn vote_counting() {
        let p = voting(&[0, 0, 1]).predict_row(&[0.0]);
        assert_eq!(p.label, "A");
        assert!((p.vote_fractions[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.vote_fractions[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = voting(&[0, 1]).predict_row(&[0.0]);
        assert_eq!(p.label, "A");
        assert_eq!(p.vote_fractions, vec![0.5, 0.5]);
    }

    #[test]
    fn constant_labels_give_constant_model() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let y = vec!["icc"; 10];
        let m = train_forest(&x, &y, &schema(2), &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
        assert!(m.degenerate);
        for r in &x {
            let p = m.predict_row(r);
            assert_eq!(p.label, "icc");
            assert_eq!(p.vote_fractions, vec![1.0]);
        }
    }

    #[test]
    fn bootstrap_of_one() {
        let (bag, oob) = bootstrap_sample(1, &mut tree_rng(3, 0));
        assert_eq!(bag, vec![0]);
        assert!(oob.is_empty());
        let a = bootstrap_sample(50, &mut tree_rng(9, 4));
        let b = bootstrap_sample(50, &mut tree_rng(9, 4));
        assert_eq!(a, b);
        assert_ne!(a, bootstrap_sample(50, &mut tree_rng(9, 5)));
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let x = vec![vec![1.0f64], vec![2.0]];
        let y = ["a", "b"];
        for p in [
            ForestParams { n_trees: 0, ..Default::default() },
            ForestParams { max_depth: 0, ..Default::default() },
            ForestParams { features_per_tree: Some(2), ..Default::default() },
        ] {
            assert!(matches!(train_forest(&x, &y, &schema(1), &p), Err(Error::Config(_))));
        }
    }

    #[test]
    fn predict_reports_schema_mismatch() {
        let m = voting(&[0]);
        let fv = FeatureVector::new(
            crate::corpus::KernelKey::new("k", "L"),
            crate::corpus::ArchTag::new("a").unwrap(),
            vec!["other_pki".into()],
            vec![1.0],
        )
        .unwrap();
        assert!(matches!(m.predict(&fv), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn importance_is_zero_without_contrast() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<&str> = (0..40).map(|i| if i < 20 { "a" } else { "b" }).collect();
        let p = ForestParams { n_trees: 10, features_per_tree: Some(2), ..Default::default() };
        let m = train_forest(&x, &y, &schema(2), &p).unwrap();
        let imp = m.feature_importance().unwrap();
        assert!(imp.iter().all(|(_, s)| *s == 0.0));
        assert_eq!(imp[0].0, "f0_pki");
    }

    #[test]
    fn importance_needs_oob() {
        let x = vec![vec![1.0f64], vec![2.0]];
        let p = ForestParams { n_trees: 2, bootstrap: false, ..Default::default() };
        let m = train_forest(&x, &["a", "b"], &schema(1), &p).unwrap();
        assert!(m.feature_importance().is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64) / 7.0, (i * i) as f64 / 3.0]).collect();
        let y: Vec<&str> = (0..30).map(|i| ["x", "y", "z"][i % 3]).collect();
        let p = ForestParams { n_trees: 7, seed: 11, ..Default::default() };
        let m = train_forest(&x, &y, &schema(2), &p).unwrap();
        let back = RandomForestModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["format_version"] = 99.into();
        assert!(RandomForestModel::<f64>::from_json(&v.to_string()).is_err());
    }

    proptest! {
        #[test]
        fn vote_fractions_sum_to_one(
            seed in 0u64..1000,
            rows in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0usize..3), 2..40),
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
            let y: Vec<String> = rows.iter().map(|r| format!("c{}", r.2)).collect();
            let p = ForestParams { n_trees: 9, seed, ..Default::default() };
            let m = train_forest(&x, &y, &schema(2), &p).unwrap();
            for r in &x {
                let pr = m.predict_row(r);
                let s: f64 = pr.vote_fractions.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(m.label_universe.contains(&pr.label));
            }
        }

        #[test]
        fn row_order_does_not_change_model(
            seed in 0u64..1000,
            rows in proptest::collection::vec((0u8..6, 0u8..6, 0usize..3), 2..30),
            rot in 0usize..30,
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0 as f64, r.1 as f64]).collect();
            let y: Vec<String> = rows.iter().map(|r| format!("c{}", r.2)).collect();
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.rotate_left(rot % x.len());
            idx.reverse();
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let ys: Vec<String> = idx.iter().map(|&i| y[i].clone()).collect();
            let p = ForestParams { n_trees: 5, seed, ..Default::default() };
            let a = train_forest(&x, &y, &schema(2), &p).unwrap();
            let b = train_forest(&xs, &ys, &schema(2), &p).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn every_split_uses_the_tree_subset(
            seed in 0u64..1000,
            rows in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0usize..2), 4..40),
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1, r.2, r.3]).collect();
            let y: Vec<String> = rows.iter().map(|r| format!("c{}", r.4)).collect();
            let p = ForestParams { n_trees: 6, max_depth: 3, seed, ..Default::default() };
            let m = train_forest(&x, &y, &schema(4), &p).unwrap();
            for t in &m.trees {
                prop_assert_eq!(t.feature_subset.len(), 2);
                prop_assert!(t.depth() <= 3);
                for f in t.split_features() {
                    prop_assert!(t.feature_subset.contains(&f));
                }
            }
        }
    }
}
