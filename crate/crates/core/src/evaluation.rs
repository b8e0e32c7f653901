//! Train/validation protocol and reported metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{join_dataset, ArchTag, KernelInstance};
use crate::error::{Error, Result};
use crate::forest::{train_majority, train_on_instances, ForestParams, RandomForestModel};
use crate::harness::{assemble_dataset, LabeledInstance, Measurement, ModelKind, Roster};
use crate::profiling::FeatureVector;
use crate::scalar::Scalar;
use crate::tabular::write_table;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Uniform random partition of `0..n`: `round(train_fraction * n)` training
/// indices, the rest validation, both sorted.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} must lie strictly between 0 and 1",
            spec.train_fraction
        )));
    }
    if n < 4 {
        return Err(Error::Invalid(format!("cannot split {n} instances (need at least 4)")));
    }
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Invalid(format!(
            "train fraction {} of {n} leaves an empty side",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, val) = idx.split_at(n_train);
    let (mut train, mut val) = (train.to_vec(), val.to_vec());
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split<I: Clone>(data: &[I], spec: &SplitSpec) -> Result<(Vec<I>, Vec<I>)> {
    let (t, v) = split_indices(data.len(), spec)?;
    Ok((
        t.iter().map(|&i| data[i].clone()).collect(),
        v.iter().map(|&i| data[i].clone()).collect(),
    ))
}

/// Actual-by-predicted count table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[actual][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::Invalid("confusion matrix must be square and match its labels".into()));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Table with actual classes as rows, predicted as columns, and marginal
    /// totals on the right and bottom.
    pub fn render(&self) -> String {
        let width = self
            .labels
            .iter()
            .map(String::len)
            .chain([6, self.total().to_string().len()])
            .max()
            .unwrap_or(6)
            + 2;
        let mut s = String::new();
        let _ = writeln!(s, "{:>w$}  Predicted", "", w = width);
        let _ = write!(s, "{:>w$}", "Actual", w = width);
        for l in &self.labels {
            let _ = write!(s, "{l:>width$}");
        }
        let _ = writeln!(s, "{:>width$}", "");
        for (label, (row, sum)) in self.labels.iter().zip(self.counts.iter().zip(self.row_sums())) {
            let _ = write!(s, "{label:>width$}");
            for c in row {
                let _ = write!(s, "{c:>width$}");
            }
            let _ = writeln!(s, "{sum:>width$}");
        }
        let _ = write!(s, "{:>w$}", "", w = width);
        for c in self.column_sums() {
            let _ = write!(s, "{c:>width$}");
        }
        let _ = writeln!(s, "{:>width$}", self.total());
        s
    }
}

pub fn confusion<S: AsRef<str>>(
    predictions: &[S],
    truth: &[S],
    label_universe: &[String],
) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} instances",
            predictions.len(),
            truth.len()
        )));
    }
    let index: BTreeMap<&str, usize> = label_universe
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let find = |l: &str| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("label `{l}` is not in the label universe")))
    };
    let n = label_universe.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (p, t) in predictions.iter().zip(truth) {
        counts[find(t.as_ref())?][find(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: label_universe.to_vec(),
        counts,
    })
}

/// Exact overall accuracy, trace over total.
pub fn accuracy(matrix: &ConfusionMatrix) -> Result<Ratio<u64>> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Invalid("accuracy of an empty confusion matrix".into()));
    }
    Ok(Ratio::new(matrix.correct(), total))
}

/// Integer percent, rounding halves up.
pub fn percent_half_up(r: Ratio<u64>) -> u64 {
    (200 * r.numer() + r.denom()) / (2 * r.denom())
}

pub fn percent_half_up_f64(x: f64) -> i64 {
    (x * 100.0 + 0.5).floor() as i64
}

/// Mann-Whitney AUC of `scores` for the positive instances; tied scores earn
/// half credit.
pub fn binary_auc<T: Scalar>(scores: &[T], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Invalid("scores and truth differ in length".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined("truth holds a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    // midranks (1-based, doubled to stay integral)
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank_x2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum_x2 += midrank_x2;
            }
        }
        i = j + 1;
    }
    let p = n_pos as u128;
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub value: f64,
    /// Classes left out of the macro average for lacking positives or
    /// negatives.
    pub skipped: Vec<usize>,
}

/// Unweighted macro average of one-vs-rest AUCs over classes that have both
/// positive and negative instances.
pub fn auc<T: Scalar>(scores: &[Vec<T>], truth: &[usize]) -> Result<AucResult> {
    if scores.len() != truth.len() {
        return Err(Error::Invalid("scores and truth differ in length".into()));
    }
    if truth.is_empty() {
        return Err(Error::AucUndefined("no instances".into()));
    }
    if truth.iter().all(|&t| t == truth[0]) {
        return Err(Error::AucUndefined("truth holds a single class".into()));
    }
    let n_classes = scores.iter().map(Vec::len).max().unwrap_or(0);
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..n_classes {
        let col: Vec<T> = scores.iter().map(|r| r.get(c).copied().unwrap_or_else(T::zero)).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        match binary_auc(&col, &pos) {
            Ok(v) => values.push(v),
            Err(Error::AucUndefined(_)) => skipped.push(c),
            Err(e) => return Err(e),
        }
    }
    Ok(AucResult {
        value: values.iter().sum::<f64>() / values.len() as f64,
        skipped,
    })
}

pub fn geomean<T: Scalar>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Invalid("geometric mean of nothing".into()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > T::zero())) {
        return Err(Error::Invalid(format!("geometric mean of non-positive value {v}")));
    }
    let n = T::of(values.len() as f64);
    Ok((values.iter().map(|v| v.ln()).fold(T::zero(), |a, b| a + b) / n).exp())
}

/// Per-instance `t_baseline / t_predicted`.
pub fn speedup_ratios<S: AsRef<str>>(
    validation: &[LabeledInstance],
    predictions: &[S],
    baseline: &str,
) -> Result<Vec<f64>> {
    if validation.len() != predictions.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} instances",
            predictions.len(),
            validation.len()
        )));
    }
    validation
        .iter()
        .zip(predictions)
        .map(|(inst, pred)| {
            let time = |c: &str| {
                inst.per_candidate_time.get(c).copied().ok_or_else(|| {
                    Error::Invalid(format!("{}: no time recorded for `{c}`", inst.key()))
                })
            };
            Ok(time(baseline)? / time(pred.as_ref())?)
        })
        .collect()
}

/// Geometric mean speedup of using each predicted optimizer instead of
/// `baseline`.
pub fn geomean_speedup<S: AsRef<str>>(
    validation: &[LabeledInstance],
    predictions: &[S],
    baseline: &str,
) -> Result<f64> {
    geomean(&speedup_ratios(validation, predictions, baseline)?)
}

/// Largest and smallest per-instance speedup over `baseline`.
pub fn speedup_extremes<S: AsRef<str>>(
    validation: &[LabeledInstance],
    predictions: &[S],
    baseline: &str,
) -> Result<(f64, f64)> {
    let r = speedup_ratios(validation, predictions, baseline)?;
    if r.is_empty() {
        return Err(Error::Invalid("no instances".into()));
    }
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = r.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((max, min))
}

/// Where predictions come from. The non-forest variants are test hooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionSource {
    Forest(ForestParams),
    /// Always the true target.
    Oracle,
    /// Always this label.
    Constant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    Random,
    /// Round `i` validates on the `i`-th block of one shuffled permutation,
    /// so validation sets never overlap. Test hook.
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub rounds: usize,
    pub split: SplitSpec,
    pub source: PredictionSource,
    #[serde(default)]
    pub split_mode: SplitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub kernel_id: String,
    pub dataset_variant: String,
    pub actual: String,
    pub predicted: String,
    pub majority_predicted: String,
    /// Class scores aligned with the report's label list.
    pub scores: Vec<f64>,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub label: String,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
    /// Mean of the per-round majority accuracies (union reports only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_round_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_kind: ModelKind,
    pub profile_arch: String,
    pub label_arch: String,
    pub n_instances: usize,
    pub correct: u64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub auc_note: String,
    pub confusion: ConfusionMatrix,
    pub geomean_speedup_over: BTreeMap<String, f64>,
    /// Per candidate: (largest gain, largest slowdown) as speedup ratios.
    pub extremes: BTreeMap<String, (f64, f64)>,
    pub majority: MajorityBaseline,
    pub predictions: Vec<PredictionRow>,
}

fn build_report(
    kind: ModelKind,
    arch: (&str, &str),
    labels: &[String],
    instances: &[&LabeledInstance],
    rows: Vec<PredictionRow>,
) -> Result<EvaluationReport> {
    let preds: Vec<&str> = rows.iter().map(|r| r.predicted.as_str()).collect();
    let truth: Vec<&str> = rows.iter().map(|r| r.actual.as_str()).collect();
    let matrix = confusion(&preds, &truth, labels)?;
    accuracy(&matrix)?;

    let truth_idx: Vec<usize> = truth
        .iter()
        .map(|t| labels.iter().position(|l| l == t).unwrap_or(0))
        .collect();
    let scores: Vec<Vec<f64>> = rows.iter().map(|r| r.scores.clone()).collect();
    let (auc_value, auc_note) = match auc(&scores, &truth_idx) {
        Ok(a) if a.skipped.is_empty() => (Some(a.value), "macro one-vs-rest".to_string()),
        Ok(a) => {
            let names: Vec<&str> = a.skipped.iter().map(|&i| labels[i].as_str()).collect();
            (
                Some(a.value),
                format!("macro one-vs-rest; skipped classes without positives or negatives: {}", names.join(", ")),
            )
        }
        Err(Error::AucUndefined(why)) => (None, format!("undefined: {why}")),
        Err(e) => return Err(e),
    };

    let owned: Vec<LabeledInstance> = instances.iter().map(|i| (*i).clone()).collect();
    let candidates: BTreeSet<&String> = instances
        .iter()
        .flat_map(|i| i.per_candidate_time.keys())
        .filter(|c| instances.iter().all(|i| i.per_candidate_time.contains_key(*c)))
        .collect();
    let mut geo = BTreeMap::new();
    let mut extremes = BTreeMap::new();
    for c in candidates {
        geo.insert(c.clone(), geomean_speedup(&owned, &preds, c)?);
        extremes.insert(c.clone(), speedup_extremes(&owned, &preds, c)?);
    }

    let maj_label = train_majority(&rows.iter().map(|r| r.majority_predicted.as_str()).collect::<Vec<_>>())?
        .majority_label;
    let maj_correct = rows.iter().filter(|r| r.majority_predicted == r.actual).count() as u64;
    let n = rows.len() as u64;
    Ok(EvaluationReport {
        model_kind: kind,
        profile_arch: arch.0.to_string(),
        label_arch: arch.1.to_string(),
        n_instances: rows.len(),
        correct: matrix.correct(),
        accuracy: matrix.correct() as f64 / matrix.total() as f64,
        auc: auc_value,
        auc_note,
        confusion: matrix,
        geomean_speedup_over: geo,
        extremes,
        majority: MajorityBaseline {
            label: maj_label,
            correct: maj_correct,
            total: n,
            accuracy: maj_correct as f64 / n as f64,
            mean_round_accuracy: None,
        },
        predictions: rows,
    })
}

enum Trained {
    Forest(RandomForestModel<f64>),
    Oracle,
    Constant(String),
}

fn round_splits(n: usize, spec: &TrialSpec) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    match spec.split_mode {
        SplitMode::Random => (0..spec.rounds)
            .map(|i| {
                let s = SplitSpec {
                    seed: spec.split.seed.wrapping_add(i as u64),
                    ..spec.split
                };
                split_indices(n, &s)
            })
            .collect(),
        SplitMode::Disjoint => {
            let (_, first_val) = split_indices(n, &spec.split)?;
            let block = first_val.len();
            if block * spec.rounds > n {
                return Err(Error::Invalid(format!(
                    "{} disjoint validation blocks of {block} exceed {n} instances",
                    spec.rounds
                )));
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.split.seed));
            Ok((0..spec.rounds)
                .map(|i| {
                    let mut val = perm[i * block..(i + 1) * block].to_vec();
                    val.sort_unstable();
                    let mut train: Vec<usize> = (0..n).filter(|x| val.binary_search(x).is_err()).collect();
                    train.sort_unstable();
                    (train, val)
                })
                .collect())
        }
    }
}

/// Per-round reports plus one report over the union of unique validation
/// instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsReport {
    pub format_version: u32,
    pub base_seed: u64,
    pub union_policy: String,
    pub auc_flavor: String,
    pub rounds: Vec<EvaluationReport>,
    pub union: EvaluationReport,
}

/// Runs `rounds` split/train/predict cycles with seeds `seed + i` and
/// aggregates the union of validation instances. An instance validated in
/// several rounds keeps the prediction from the latest one.
pub fn repeated_trials(
    dataset: &[LabeledInstance],
    kind: ModelKind,
    spec: &TrialSpec,
) -> Result<TrialsReport> {
    if spec.rounds == 0 {
        return Err(Error::Config("at least one trial round is required".into()));
    }
    let first = dataset
        .first()
        .ok_or_else(|| Error::Invalid("no labeled instances to evaluate".into()))?;
    let arch = (first.features.profile_arch.name.clone(), first.label_arch.name.clone());
    let arch = (arch.0.as_str(), arch.1.as_str());
    let labels: Vec<String> = dataset
        .iter()
        .map(|d| d.target.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let label_pos = |l: &str| labels.iter().position(|x| x == l);

    let splits = round_splits(dataset.len(), spec)?;
    let mut rounds = Vec::with_capacity(spec.rounds);
    // keyed by dataset position; rows are unique kernel instances
    let mut union: BTreeMap<usize, PredictionRow> = BTreeMap::new();
    for (round, (train_idx, val_idx)) in splits.into_iter().enumerate() {
        let train: Vec<LabeledInstance> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
        let majority = train_majority(&train.iter().map(|t| t.target.as_str()).collect::<Vec<_>>())?;
        let model = match &spec.source {
            PredictionSource::Forest(p) => {
                let params = ForestParams {
                    seed: p.seed.wrapping_add(round as u64),
                    ..p.clone()
                };
                Trained::Forest(train_on_instances(&train, &params)?)
            }
            PredictionSource::Oracle => Trained::Oracle,
            PredictionSource::Constant(l) => Trained::Constant(l.clone()),
        };
        let mut rows = Vec::with_capacity(val_idx.len());
        for &i in &val_idx {
            let inst = &dataset[i];
            let one_hot = |l: &str| {
                let mut s = vec![0.0; labels.len()];
                if let Some(p) = label_pos(l) {
                    s[p] = 1.0;
                }
                s
            };
            let (predicted, scores) = match &model {
                Trained::Forest(m) => {
                    let p = m.predict(&inst.features)?;
                    let mut s = vec![0.0; labels.len()];
                    for (l, v) in m.label_universe.iter().zip(&p.vote_fractions) {
                        if let Some(pos) = label_pos(l) {
                            s[pos] = *v;
                        }
                    }
                    (p.label, s)
                }
                Trained::Oracle => (inst.target.clone(), one_hot(&inst.target)),
                Trained::Constant(l) => (l.clone(), one_hot(l)),
            };
            let row = PredictionRow {
                kernel_id: inst.key().kernel_id.clone(),
                dataset_variant: inst.key().dataset_variant.clone(),
                actual: inst.target.clone(),
                predicted,
                majority_predicted: majority.predict(&inst.features).to_string(),
                scores,
                round,
            };
            union.insert(i, row.clone());
            rows.push(row);
        }
        let insts: Vec<&LabeledInstance> = val_idx.iter().map(|&i| &dataset[i]).collect();
        rounds.push(build_report(kind, arch, &labels, &insts, rows)?);
    }

    let (idx, rows): (Vec<usize>, Vec<PredictionRow>) = union.into_iter().unzip();
    let insts: Vec<&LabeledInstance> = idx.iter().map(|&i| &dataset[i]).collect();
    let mut union_report = build_report(kind, arch, &labels, &insts, rows)?;
    union_report.majority.mean_round_accuracy =
        Some(rounds.iter().map(|r| r.majority.accuracy).sum::<f64>() / rounds.len() as f64);
    Ok(TrialsReport {
        format_version: REPORT_FORMAT_VERSION,
        base_seed: spec.split.seed,
        union_policy: "unique validation instances; latest round's prediction kept".into(),
        auc_flavor: "macro-averaged one-vs-rest, Mann-Whitney with half credit for ties".into(),
        rounds,
        union: union_report,
    })
}

/// Evaluates features profiled on `profile_arch` against labels measured on
/// `label_arch`. The pipeline is the same as for a single machine.
#[allow(clippy::too_many_arguments)]
pub fn cross_arch_evaluate(
    instances: &[KernelInstance],
    features: &[FeatureVector],
    timings: &[Measurement],
    profile_arch: &ArchTag,
    label_arch: &ArchTag,
    kind: ModelKind,
    roster: &Roster,
    threshold: f64,
    spec: &TrialSpec,
) -> Result<TrialsReport> {
    let feats: Vec<FeatureVector> = features
        .iter()
        .filter(|f| f.profile_arch.name == profile_arch.name)
        .cloned()
        .collect();
    let times: Vec<Measurement> = timings
        .iter()
        .filter(|m| m.label_arch.name == label_arch.name)
        .cloned()
        .collect();
    let joined = join_dataset(instances, &feats, &times, &kind.required_timings(roster))?;
    let (data, _) = assemble_dataset(&joined.rows, kind, roster, threshold)?;
    if data.is_empty() {
        return Err(Error::Invalid(format!(
            "no instances pair features from {profile_arch} with labels from {label_arch}"
        )));
    }
    repeated_trials(&data, kind, spec)
}

impl EvaluationReport {
    /// Human-readable summary; percentages rounded half up.
    pub fn render(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "== {title} ({}; features {} / labels {}) ==", self.model_kind, self.profile_arch, self.label_arch);
        let _ = writeln!(
            s,
            "instances: {}  accuracy: {}% ({}/{})",
            self.n_instances,
            percent_half_up(Ratio::new(self.confusion.correct(), self.confusion.total().max(1))),
            self.confusion.correct(),
            self.confusion.total()
        );
        match self.auc {
            Some(a) => {
                let _ = writeln!(s, "AUC: {a:.3} ({})", self.auc_note);
            }
            None => {
                let _ = writeln!(s, "AUC: n/a ({})", self.auc_note);
            }
        }
        let _ = write!(
            s,
            "majority classifier ({}): {}% ({}/{})",
            self.majority.label,
            percent_half_up_f64(self.majority.accuracy),
            self.majority.correct,
            self.majority.total
        );
        if let Some(m) = self.majority.mean_round_accuracy {
            let _ = write!(s, "; per-round mean {}%", percent_half_up_f64(m));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "\n{}", self.confusion.render());
        let _ = writeln!(s, "{:<12}{:>12}{:>12}{:>12}", "over", "geomean", "max gain", "max slow");
        for (c, g) in &self.geomean_speedup_over {
            let (hi, lo) = self.extremes[c];
            let _ = writeln!(s, "{c:<12}{g:>11.4}x{hi:>11.3}x{lo:>11.3}x");
        }
        s
    }
}

impl TrialsReport {
    pub fn render(&self) -> String {
        let mut s = self.union.render("union of validation sets");
        let _ = writeln!(s, "\n{}; AUC is {}.", self.union_policy, self.auc_flavor);
        for (i, r) in self.rounds.iter().enumerate() {
            let _ = writeln!(
                s,
                "round {i}: {} instances, accuracy {}%, majority {}%",
                r.n_instances,
                percent_half_up_f64(r.accuracy),
                percent_half_up_f64(r.majority.accuracy)
            );
        }
        s
    }

    /// `candidate,geomean` rows for bar charts.
    pub fn write_plot_csv(&self, path: &Path, preamble: Option<&str>) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .union
            .geomean_speedup_over
            .iter()
            .map(|(c, g)| vec![c.clone(), g.to_string()])
            .collect();
        write_table(path, preamble, &["candidate".into(), "geomean".into()], &rows)
    }
}
