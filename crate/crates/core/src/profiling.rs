//! Hardware counter collection, per-kilo-instruction normalization and
//! low-activity filtering.
//!
//! Counters come from one baseline build per kernel (no loop transformations,
//! no vector or parallel code generation). The same feature vectors feed every
//! downstream model; only the targets change.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::corpus::{ArchTag, KernelInstance, KernelKey};
use crate::error::{Error, Result};
use crate::harness::{compile, RunLog};
use crate::scalar::Scalar;
use crate::tabular::{write_table, Table};

/// Suffix appended to counter names to form feature names.
pub const PKI_SUFFIX: &str = "_pki";
/// Column holding the retired-instruction count in counter files.
pub const INSTRUCTIONS_COLUMN: &str = "instructions_retired";

const FIXED_COLUMNS: [&str; 3] = ["kernel_id", "dataset_variant", "profile_arch"];

/// Counter families whose absence is worth a warning before training: CPI
/// (cycles over instructions), D-TLB, memory loads and stores, the three cache
/// levels and stall cycles.
pub const CRUCIAL_FAMILIES: [(&str, &[&str]); 8] = [
    ("cycles", &["cycle"]),
    ("d-tlb", &["dtlb", "d_tlb", "d-tlb"]),
    ("loads", &["load"]),
    ("stores", &["store"]),
    ("l1", &["l1"]),
    ("l2", &["l2"]),
    ("l3", &["l3", "llc"]),
    ("stalls", &["stall"]),
];

fn is_instruction_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    let base = lower.trim_end_matches(PKI_SUFFIX);
    base == "instructions" || base == INSTRUCTIONS_COLUMN || base == "inst_retired.any"
}

/// Raw counts for one kernel instance from one profiling run (or the mean of
/// several recorded runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCounterSample {
    pub key: KernelKey,
    pub profile_arch: ArchTag,
    pub instructions_retired: f64,
    pub counters: BTreeMap<String, f64>,
}

impl RawCounterSample {
    pub fn new(
        key: KernelKey,
        profile_arch: ArchTag,
        instructions_retired: f64,
        counters: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let bad = |message: String| Error::InvalidSample {
            key: key.to_string(),
            message,
        };
        if !(instructions_retired.is_finite() && instructions_retired >= 0.0) {
            return Err(bad(format!("instructions_retired = {instructions_retired}")));
        }
        for (name, v) in &counters {
            if is_instruction_name(name) {
                return Err(bad(format!(
                    "counter `{name}` duplicates the instruction count"
                )));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(bad(format!("counter `{name}` = {v}")));
            }
        }
        Ok(RawCounterSample {
            key,
            profile_arch,
            instructions_retired,
            counters,
        })
    }
}

/// PKI-normalized counters for one kernel instance; the model input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T: Scalar = f64> {
    pub key: KernelKey,
    pub profile_arch: ArchTag,
    pub schema: Vec<String>,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(
        key: KernelKey,
        profile_arch: ArchTag,
        schema: Vec<String>,
        values: Vec<T>,
    ) -> Result<Self> {
        let bad = |message: String| Error::InvalidSample {
            key: key.to_string(),
            message,
        };
        if schema.len() != values.len() {
            return Err(bad(format!(
                "{} feature names but {} values",
                schema.len(),
                values.len()
            )));
        }
        if let Some(name) = schema.iter().find(|n| is_instruction_name(n)) {
            return Err(bad(format!("instruction count `{name}` is not a feature")));
        }
        if let Some((n, v)) = schema
            .iter()
            .zip(&values)
            .find(|(_, v)| !(v.is_finite() && **v >= T::zero()))
        {
            return Err(bad(format!("feature `{n}` = {v}")));
        }
        Ok(FeatureVector {
            key,
            profile_arch,
            schema,
            values,
        })
    }

    /// Values rearranged to follow `schema`, binding by feature name.
    pub fn aligned_to(&self, schema: &[String]) -> Result<Vec<T>> {
        if self.schema.as_slice() == schema {
            return Ok(self.values.clone());
        }
        let mine: BTreeMap<&str, T> = self
            .schema
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
            .collect();
        let wanted: BTreeSet<&str> = schema.iter().map(String::as_str).collect();
        let missing: Vec<String> = schema
            .iter()
            .filter(|n| !mine.contains_key(n.as_str()))
            .cloned()
            .collect();
        let extra: Vec<String> = self
            .schema
            .iter()
            .filter(|n| !wanted.contains(n.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::SchemaMismatch { missing, extra });
        }
        Ok(schema.iter().map(|n| mine[n.as_str()]).collect())
    }
}

/// Divides every counter by the retired-instruction count and scales by 1000.
///
/// The instruction count itself is not emitted. Features come out in sorted
/// counter-name order, named `<counter>_pki`.
pub fn normalize_pki<T: Scalar>(sample: &RawCounterSample) -> Result<FeatureVector<T>> {
    if sample.instructions_retired <= 0.0 {
        return Err(Error::ZeroInstructions(sample.key.to_string()));
    }
    let instructions = T::of(sample.instructions_retired);
    let thousand = T::of(1000.0);
    let (schema, values) = sample
        .counters
        .iter()
        .map(|(name, &count)| {
            (
                format!("{name}{PKI_SUFFIX}"),
                thousand * T::of(count) / instructions,
            )
        })
        .unzip();
    FeatureVector::new(sample.key.clone(), sample.profile_arch.clone(), schema, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub sample: RawCounterSample,
    pub reason: String,
}

/// Splits samples into those with at least `min_instructions` retired
/// instructions and the rest.
pub fn filter_low_activity(
    samples: Vec<RawCounterSample>,
    min_instructions: u64,
) -> (Vec<RawCounterSample>, Vec<Dropped>) {
    let threshold = min_instructions as f64;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for s in samples {
        if s.instructions_retired >= threshold {
            kept.push(s);
        } else {
            let reason = format!(
                "instructions_retired {} below minimum {}",
                s.instructions_retired, min_instructions
            );
            dropped.push(Dropped { sample: s, reason });
        }
    }
    (kept, dropped)
}

/// Crucial counter families with no matching feature in `schema`.
pub fn missing_crucial_families(schema: &[String]) -> Vec<&'static str> {
    CRUCIAL_FAMILIES
        .iter()
        .filter(|(_, patterns)| {
            !schema.iter().any(|name| {
                let lower = name.to_ascii_lowercase();
                patterns.iter().any(|p| lower.contains(p))
            })
        })
        .map(|(family, _)| *family)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Live,
    Replay,
}

/// Per-invocation settings for [`ProfilerBackend::collect`].
#[derive(Debug, Clone, Default)]
pub struct ProfileRun {
    /// Where baseline executables are written (live backends).
    pub build_dir: PathBuf,
}

/// Source of raw counter samples.
pub trait ProfilerBackend {
    fn name(&self) -> &str;
    fn capability(&self) -> Capability;
    fn profile_arch(&self) -> &ArchTag;
    fn collect(&self, instance: &KernelInstance, run: &ProfileRun) -> Result<RawCounterSample>;
}

/// Serves samples from a recorded counter file.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    name: String,
    arch: ArchTag,
    samples: BTreeMap<KernelKey, RawCounterSample>,
}

impl ReplayBackend {
    /// Loads a recording. Rows tagged with another architecture are ignored;
    /// repeated rows for one kernel are averaged.
    pub fn load(path: &Path, arch: ArchTag) -> Result<Self> {
        let rows = read_counter_csv(path)?;
        let mut groups: BTreeMap<KernelKey, Vec<RawCounterSample>> = BTreeMap::new();
        for s in rows.into_iter().filter(|s| s.profile_arch.name == arch.name) {
            groups.entry(s.key.clone()).or_default().push(s);
        }
        let samples = groups
            .into_iter()
            .map(|(k, g)| average_samples(g).map(|s| (k, s)))
            .collect::<Result<_>>()?;
        Ok(ReplayBackend {
            name: format!("replay:{}", path.display()),
            arch,
            samples,
        })
    }

    pub fn from_samples(arch: ArchTag, samples: Vec<RawCounterSample>) -> Result<Self> {
        let mut groups: BTreeMap<KernelKey, Vec<RawCounterSample>> = BTreeMap::new();
        for s in samples {
            groups.entry(s.key.clone()).or_default().push(s);
        }
        let samples = groups
            .into_iter()
            .map(|(k, g)| average_samples(g).map(|s| (k, s)))
            .collect::<Result<_>>()?;
        Ok(ReplayBackend {
            name: "replay".into(),
            arch,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn average_samples(group: Vec<RawCounterSample>) -> Result<RawCounterSample> {
    let n = group.len() as f64;
    let first = &group[0];
    let names: BTreeSet<&String> = first.counters.keys().collect();
    if let Some(odd) = group
        .iter()
        .find(|s| s.counters.keys().collect::<BTreeSet<_>>() != names)
    {
        return Err(Error::InvalidSample {
            key: odd.key.to_string(),
            message: "repeated recording rows disagree on counter set".into(),
        });
    }
    if group.len() == 1 {
        return Ok(group.into_iter().next().unwrap_or_else(|| unreachable!()));
    }
    let instructions = group.iter().map(|s| s.instructions_retired).sum::<f64>() / n;
    let counters = names
        .iter()
        .map(|name| {
            let mean = group.iter().map(|s| s.counters[*name]).sum::<f64>() / n;
            ((*name).clone(), mean)
        })
        .collect();
    RawCounterSample::new(first.key.clone(), first.profile_arch.clone(), instructions, counters)
}

impl ProfilerBackend for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn capability(&self) -> Capability {
        Capability::Replay
    }

    fn profile_arch(&self) -> &ArchTag {
        &self.arch
    }

    fn collect(&self, instance: &KernelInstance, _run: &ProfileRun) -> Result<RawCounterSample> {
        self.samples
            .get(&instance.key)
            .cloned()
            .ok_or_else(|| Error::Profiler {
                backend: self.name.clone(),
                key: instance.key.to_string(),
                message: format!("no recorded sample for {}", instance.key),
            })
    }
}

/// Builds the baseline executable and runs it under `perf stat` (or any tool
/// speaking its `-x,` CSV output on stderr).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveBackend {
    pub profile_arch: ArchTag,
    pub compiler: String,
    pub flags: Vec<String>,
    /// Profiler invocation up to (not including) the `-e` event list.
    pub perf_command: Vec<String>,
    pub events: Vec<String>,
    /// Event whose count becomes `instructions_retired`.
    pub instructions_event: String,
}

impl LiveBackend {
    pub fn new(profile_arch: ArchTag) -> Self {
        LiveBackend {
            profile_arch,
            compiler: "icc".into(),
            flags: vec!["-O1".into(), "-no-vec".into()],
            perf_command: vec!["perf".into(), "stat".into(), "-x".into(), ",".into()],
            events: default_events(),
            instructions_event: "instructions".into(),
        }
    }
}

/// Generic perf event names covering the crucial counter families.
pub fn default_events() -> Vec<String> {
    [
        "instructions",
        "cycles",
        "dTLB-load-misses",
        "dTLB-store-misses",
        "L1-dcache-loads",
        "L1-dcache-load-misses",
        "L1-dcache-stores",
        "l2_rqsts.miss",
        "LLC-loads",
        "LLC-load-misses",
        "cycle_activity.stalls_total",
        "branches",
        "branch-misses",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl ProfilerBackend for LiveBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn capability(&self) -> Capability {
        Capability::Live
    }

    fn profile_arch(&self) -> &ArchTag {
        &self.profile_arch
    }

    fn collect(&self, instance: &KernelInstance, run: &ProfileRun) -> Result<RawCounterSample> {
        let fail = |message: String| Error::Profiler {
            backend: "live".into(),
            key: instance.key.to_string(),
            message,
        };
        let source = instance
            .source_path
            .as_ref()
            .ok_or_else(|| fail("kernel has no source_path".into()))?;
        let mut log = RunLog::default();
        let exe = compile(
            "baseline",
            &self.compiler,
            &self.flags,
            source,
            &run.build_dir,
            &mut log,
        )?;
        let (program, args) = self
            .perf_command
            .split_first()
            .ok_or_else(|| Error::Config("empty perf_command".into()))?;
        let output = Command::new(program)
            .args(args)
            .arg("-e")
            .arg(self.events.join(","))
            .arg("--")
            .arg(&exe)
            .output()
            .map_err(|e| fail(format!("cannot start `{program}`: {e}")))?;
        if !output.status.success() {
            return Err(Error::Run {
                executable: exe,
                message: format!(
                    "{} exited with {}: {}",
                    instance.key,
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                ),
            });
        }
        let counts = parse_perf_stat(&String::from_utf8_lossy(&output.stderr)).map_err(fail)?;
        sample_from_counts(instance.key.clone(), self.profile_arch.clone(), counts, &self.instructions_event)
            .map_err(|e| fail(e.to_string()))
    }
}

/// Parses `perf stat -x,` output into event name → count.
pub fn parse_perf_stat(text: &str) -> std::result::Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            continue;
        }
        let (value, event) = (fields[0], fields[2]);
        if value.starts_with('<') {
            return Err(format!("event {event}: {value}"));
        }
        let Ok(v) = value.parse::<f64>() else {
            continue;
        };
        out.insert(event.to_string(), v);
    }
    if out.is_empty() {
        return Err("profiler produced no counter lines".into());
    }
    Ok(out)
}

fn sample_from_counts(
    key: KernelKey,
    arch: ArchTag,
    mut counts: BTreeMap<String, f64>,
    instructions_event: &str,
) -> Result<RawCounterSample> {
    let instr_name = counts
        .keys()
        .find(|k| k.split(':').next() == Some(instructions_event))
        .cloned()
        .ok_or_else(|| Error::InvalidSample {
            key: key.to_string(),
            message: format!("no `{instructions_event}` count"),
        })?;
    let instructions = counts.remove(&instr_name).unwrap_or(0.0);
    let counters = counts
        .into_iter()
        .map(|(k, v)| (sanitize_counter_name(&k), v))
        .collect();
    RawCounterSample::new(key, arch, instructions, counters)
}

/// Maps an event spelling onto a column-safe counter name.
pub fn sanitize_counter_name(event: &str) -> String {
    event
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Reads a counter file: `kernel_id, dataset_variant, profile_arch,
/// instructions_retired`, then one column per raw counter.
pub fn read_counter_csv(path: &Path) -> Result<Vec<RawCounterSample>> {
    let table = Table::read(path)?;
    let id = table.column("kernel_id")?;
    let variant = table.column("dataset_variant")?;
    let arch = table.column("profile_arch")?;
    let instr = table.column(INSTRUCTIONS_COLUMN)?;
    let counter_cols: Vec<(usize, &String)> = table
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !FIXED_COLUMNS.contains(&h.as_str()) && *h != INSTRUCTIONS_COLUMN)
        .collect();
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let instructions = table.parse_f64(*line, INSTRUCTIONS_COLUMN, &row[instr])?;
        let mut counters = BTreeMap::new();
        for (c, name) in &counter_cols {
            counters.insert((*name).clone(), table.parse_f64(*line, name, &row[*c])?);
        }
        let sample = RawCounterSample::new(
            KernelKey::new(row[id].as_str(), row[variant].as_str()),
            ArchTag::new(row[arch].as_str()).map_err(|e| table.error(*line, e.to_string()))?,
            instructions,
            counters,
        )
        .map_err(|e| table.error(*line, e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_counter_csv(path: &Path, preamble: Option<&str>, samples: &[RawCounterSample]) -> Result<()> {
    let names: BTreeSet<&String> = samples.iter().flat_map(|s| s.counters.keys()).collect();
    let mut headers: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    headers.push(INSTRUCTIONS_COLUMN.into());
    headers.extend(names.iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let mut r = vec![
                s.key.kernel_id.clone(),
                s.key.dataset_variant.clone(),
                s.profile_arch.name.clone(),
                s.instructions_retired.to_string(),
            ];
            r.extend(
                names
                    .iter()
                    .map(|n| s.counters.get(*n).map(f64::to_string).unwrap_or_default()),
            );
            r
        })
        .collect();
    write_table(path, preamble, &headers, &rows)
}

/// Reads a feature file. Feature columns are those ending in `_pki`; the
/// resulting schema is sorted by name regardless of column order.
pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    let table = Table::read(path)?;
    let id = table.column("kernel_id")?;
    let variant = table.column("dataset_variant")?;
    let arch = table.column("profile_arch")?;
    let mut cols: Vec<(usize, String)> = table
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.ends_with(PKI_SUFFIX))
        .map(|(i, h)| (i, h.clone()))
        .collect();
    cols.sort_by(|a, b| a.1.cmp(&b.1));
    let schema: Vec<String> = cols.iter().map(|(_, n)| n.clone()).collect();
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let values = cols
            .iter()
            .map(|(c, n)| table.parse_f64(*line, n, &row[*c]))
            .collect::<Result<Vec<f64>>>()?;
        let fv = FeatureVector::new(
            KernelKey::new(row[id].as_str(), row[variant].as_str()),
            ArchTag::new(row[arch].as_str()).map_err(|e| table.error(*line, e.to_string()))?,
            schema.clone(),
            values,
        )
        .map_err(|e| table.error(*line, e.to_string()))?;
        out.push(fv);
    }
    Ok(out)
}

pub fn write_feature_csv(path: &Path, preamble: Option<&str>, features: &[FeatureVector]) -> Result<()> {
    let schema: Vec<String> = match features.first() {
        Some(f) => f.schema.clone(),
        None => Vec::new(),
    };
    if let Some(odd) = features.iter().find(|f| f.schema != schema) {
        return Err(Error::Invalid(format!(
            "{}: feature schema differs from the first row",
            odd.key
        )));
    }
    let mut headers: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    headers.extend(schema.iter().cloned());
    let rows: Vec<Vec<String>> = features
        .iter()
        .map(|f| {
            let mut r = vec![
                f.key.kernel_id.clone(),
                f.key.dataset_variant.clone(),
                f.profile_arch.name.clone(),
            ];
            r.extend(f.values.iter().map(f64::to_string));
            r
        })
        .collect();
    write_table(path, preamble, &headers, &rows)
}
