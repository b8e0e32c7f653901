//! Kernel registry and the join of counter features with timing records.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Measurement, Mode};
use crate::profiling::FeatureVector;
use crate::tabular::{resolve, Table};

/// Identity of one dataset row: a kernel at one input-size configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KernelKey {
    pub kernel_id: String,
    pub dataset_variant: String,
}

impl KernelKey {
    pub fn new(kernel_id: impl Into<String>, dataset_variant: impl Into<String>) -> Self {
        KernelKey {
            kernel_id: kernel_id.into(),
            dataset_variant: dataset_variant.into(),
        }
    }
}

impl fmt::Display for KernelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kernel_id, self.dataset_variant)
    }
}

/// Machine tag: where counters were profiled or where timings were taken.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArchTag {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

impl ArchTag {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Config("architecture tag must have a name".into()));
        }
        Ok(ArchTag {
            name,
            description: String::new(),
        })
    }
}

impl fmt::Display for ArchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelInstance {
    pub key: KernelKey,
    pub suite: String,
    /// Standalone C translation unit; absent in replay-only corpora.
    pub source_path: Option<PathBuf>,
}

/// Reads a corpus manifest (`kernel_id, suite, dataset_variant, source_path`).
///
/// Any malformed row or duplicated `(kernel_id, dataset_variant)` rejects the
/// whole manifest.
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<KernelInstance>> {
    let table = Table::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let id_col = table.column("kernel_id")?;
    let suite_col = table.column("suite")?;
    let variant_col = table.column("dataset_variant")?;
    let source_col = table.find("source_path");

    let mut seen: HashMap<KernelKey, u64> = HashMap::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let kernel_id = &row[id_col];
        let variant = &row[variant_col];
        if kernel_id.is_empty() {
            return Err(table.error(*line, "empty kernel_id"));
        }
        if variant.is_empty() {
            return Err(table.error(*line, "empty dataset_variant"));
        }
        let key = KernelKey::new(kernel_id.as_str(), variant.as_str());
        if let Some(first) = seen.insert(key.clone(), *line) {
            return Err(Error::DuplicateKey(format!(
                "{key} (lines {first} and {line} of {})",
                manifest_path.display()
            )));
        }
        let source_path = source_col
            .map(|c| row[c].as_str())
            .filter(|s| !s.is_empty())
            .map(|s| resolve(base, s));
        out.push(KernelInstance {
            key,
            suite: row[suite_col].clone(),
            source_path,
        });
    }
    Ok(out)
}

/// A corpus instance with its features and summarized timings, prior to
/// target assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedRow {
    pub instance: KernelInstance,
    pub features: FeatureVector,
    pub label_arch: ArchTag,
    pub serial: BTreeMap<String, f64>,
    pub parallel: BTreeMap<String, f64>,
}

impl JoinedRow {
    pub fn times(&self, mode: Mode) -> &BTreeMap<String, f64> {
        match mode {
            Mode::Serial => &self.serial,
            Mode::Parallel => &self.parallel,
        }
    }
}

/// A corpus row left out of a dataset, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Omission {
    pub key: KernelKey,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Joined {
    pub rows: Vec<JoinedRow>,
    pub omissions: Vec<Omission>,
}

/// Joins corpus instances with feature vectors and timing summaries.
///
/// `required` lists the `(candidate, mode)` timings a row must have. Rows
/// missing features or a required timing are reported in
/// [`Joined::omissions`]; feature or timing rows naming a kernel outside the
/// corpus are a hard error.
pub fn join_dataset(
    instances: &[KernelInstance],
    features: &[FeatureVector],
    timings: &[Measurement],
    required: &[(String, Mode)],
) -> Result<Joined> {
    let known: BTreeSet<&KernelKey> = instances.iter().map(|i| &i.key).collect();

    let mut orphans: BTreeSet<String> = BTreeSet::new();
    for k in features.iter().map(|f| &f.key).chain(timings.iter().map(|m| &m.key)) {
        if !known.contains(k) {
            orphans.insert(k.to_string());
        }
    }
    if !orphans.is_empty() {
        return Err(Error::UnknownKernel(
            orphans.into_iter().collect::<Vec<_>>().join(", "),
        ));
    }

    let mut by_key: HashMap<&KernelKey, &FeatureVector> = HashMap::new();
    for f in features {
        if by_key.insert(&f.key, f).is_some() {
            return Err(Error::DuplicateKey(format!("{} in feature rows", f.key)));
        }
    }

    type Cell<'a> = (&'a KernelKey, Mode, &'a str);
    let mut cells: HashMap<Cell<'_>, &Measurement> = HashMap::new();
    for m in timings {
        if cells.insert((&m.key, m.mode, &m.candidate), m).is_some() {
            return Err(Error::DuplicateKey(format!(
                "{} {} {} in timing records",
                m.key, m.candidate, m.mode
            )));
        }
    }

    let mut out = Joined::default();
    for inst in instances {
        let Some(fv) = by_key.get(&inst.key) else {
            out.omissions.push(Omission {
                key: inst.key.clone(),
                reason: "no counter sample".into(),
            });
            continue;
        };
        let mine: Vec<&Measurement> = timings.iter().filter(|m| m.key == inst.key).collect();
        let missing: Vec<String> = required
            .iter()
            .filter(|(c, mode)| !cells.contains_key(&(&inst.key, *mode, c.as_str())))
            .map(|(c, mode)| format!("{c}/{mode}"))
            .collect();
        if mine.is_empty() || !missing.is_empty() {
            let reason = if mine.is_empty() {
                "no timing records".to_string()
            } else {
                format!("missing timings: {}", missing.join(", "))
            };
            out.omissions.push(Omission {
                key: inst.key.clone(),
                reason,
            });
            continue;
        }
        let label_arch = mine[0].label_arch.clone();
        if let Some(other) = mine.iter().find(|m| m.label_arch != label_arch) {
            return Err(Error::Invalid(format!(
                "{}: timings mix label architectures {} and {}",
                inst.key, label_arch, other.label_arch
            )));
        }
        let mut row = JoinedRow {
            instance: inst.clone(),
            features: (*fv).clone(),
            label_arch,
            serial: BTreeMap::new(),
            parallel: BTreeMap::new(),
        };
        for m in mine {
            let target = match m.mode {
                Mode::Serial => &mut row.serial,
                Mode::Parallel => &mut row.parallel,
            };
            target.insert(m.candidate.clone(), m.summary_seconds);
        }
        out.rows.push(row);
    }
    Ok(out)
}
