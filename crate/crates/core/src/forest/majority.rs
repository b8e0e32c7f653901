use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature-agnostic baseline: always predicts the most frequent training
/// target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityModel {
    pub majority_label: String,
    pub training_histogram: BTreeMap<String, usize>,
}

/// Mode of the training targets; ties go to the lexicographically smallest
/// label.
pub fn train_majority<S: AsRef<str>>(targets: &[S]) -> Result<MajorityModel> {
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    for t in targets {
        *hist.entry(t.as_ref().to_string()).or_default() += 1;
    }
    let mut best: Option<(&String, usize)> = None;
    for (label, &n) in &hist {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((label, n));
        }
    }
    let majority_label = best
        .map(|(l, _)| l.clone())
        .ok_or_else(|| Error::Invalid("majority baseline needs at least one instance".into()))?;
    Ok(MajorityModel {
        majority_label,
        training_histogram: hist,
    })
}

impl MajorityModel {
    pub fn predict<X: ?Sized>(&self, _x: &X) -> &str {
        &self.majority_label
    }
}
