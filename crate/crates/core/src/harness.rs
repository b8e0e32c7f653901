//! Building kernels with each candidate optimizer, timing them and deriving
//! target labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ArchTag, JoinedRow, KernelInstance, KernelKey, Omission};
use crate::error::{Error, Result};
use crate::profiling::{FeatureVector, PKI_SUFFIX};
use crate::tabular::{write_table, Table};

/// Default speedup margin for the profitability label.
pub const DEFAULT_PROFIT_THRESHOLD: f64 = 0.05;
const TIME_PREFIX: &str = "time:";
// Absorbs round-off in `serial / parallel` so that an exact 5% gain counts.
const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Serial,
    Parallel,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Serial => "serial",
            Mode::Parallel => "parallel",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(Mode::Serial),
            "parallel" => Ok(Mode::Parallel),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// A named toolchain configuration: compiler plus fixed flag set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerCandidate {
    pub name: String,
    pub compiler_command: String,
    #[serde(default)]
    pub version_expected: String,
    pub serial_flags: Vec<String>,
    /// Flags appended to `serial_flags` for auto-parallelized builds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel_flags: Option<Vec<String>>,
}

impl OptimizerCandidate {
    pub fn supports_parallel(&self) -> bool {
        self.parallel_flags.is_some()
    }

    pub fn flags(&self, mode: Mode) -> Result<Vec<String>> {
        let mut flags = self.serial_flags.clone();
        if mode == Mode::Parallel {
            let extra = self.parallel_flags.as_ref().ok_or_else(|| {
                Error::Config(format!("{} does not support auto-parallelization", self.name))
            })?;
            flags.extend(extra.iter().cloned());
        }
        Ok(flags)
    }
}

/// The set of candidate optimizers; the class-label universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    #[serde(rename = "candidate")]
    pub candidates: Vec<OptimizerCandidate>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Roster {
    /// clang 6.0.0, gcc 5.4.0, icc 18.0.0 and polly 6.0.0 with their fixed
    /// flag sets; icc and polly also auto-parallelize.
    fn default() -> Self {
        Roster {
            candidates: vec![
                OptimizerCandidate {
                    name: "clang".into(),
                    compiler_command: "clang".into(),
                    version_expected: "6.0.0".into(),
                    serial_flags: strings(&["-Ofast", "-march=native"]),
                    parallel_flags: None,
                },
                OptimizerCandidate {
                    name: "gcc".into(),
                    compiler_command: "gcc".into(),
                    version_expected: "5.4.0".into(),
                    serial_flags: strings(&["-Ofast", "-march=native"]),
                    parallel_flags: None,
                },
                OptimizerCandidate {
                    name: "icc".into(),
                    compiler_command: "icc".into(),
                    version_expected: "18.0.0".into(),
                    serial_flags: strings(&["-Ofast", "-xHost"]),
                    parallel_flags: Some(strings(&["-parallel"])),
                },
                OptimizerCandidate {
                    name: "polly".into(),
                    compiler_command: "clang".into(),
                    version_expected: "6.0.0".into(),
                    // clang only accepts the polly options behind -mllvm
                    serial_flags: strings(&[
                        "-O3",
                        "-march=native",
                        "-mllvm",
                        "-polly",
                        "-mllvm",
                        "-polly-vectorizer=stripmine",
                        "-mllvm",
                        "-polly-tiling",
                    ]),
                    parallel_flags: Some(strings(&["-mllvm", "-polly-parallel", "-lgomp"])),
                },
            ],
        }
    }
}

impl Roster {
    pub fn new(candidates: Vec<OptimizerCandidate>) -> Result<Self> {
        let roster = Roster { candidates };
        roster.validate()?;
        Ok(roster)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let roster: Roster = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        roster.validate()?;
        Ok(roster)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.candidates {
            if c.name.is_empty() {
                return Err(Error::Config("candidate with empty name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate candidate `{}`", c.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&OptimizerCandidate> {
        self.candidates.iter().find(|c| c.name == name)
    }

    /// Candidates that can be built in `mode`.
    pub fn for_mode(&self, mode: Mode) -> impl Iterator<Item = &OptimizerCandidate> {
        self.candidates
            .iter()
            .filter(move |c| mode == Mode::Serial || c.supports_parallel())
    }

    pub fn names(&self, mode: Mode) -> Vec<String> {
        self.for_mode(mode).map(|c| c.name.clone()).collect()
    }
}

/// Verbatim record of every command executed.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub lines: Vec<String>,
}

impl RunLog {
    pub fn record(&mut self, line: impl Into<String>) {
        let line = line.into();
        log::info!("{line}");
        self.lines.push(line);
    }

    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for l in &self.lines {
            writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Looks `program` up the way a shell would.
pub fn find_executable(program: &str) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|d| d.join(program))
            .find(|c| c.is_file())
    })
}

fn quote(arg: &str) -> String {
    if !arg.is_empty() && arg.chars().all(|c| c.is_ascii_alphanumeric() || "-_=./:,+".contains(c)) {
        arg.to_string()
    } else {
        format!("'{}'", arg.replace('\'', r"'\''"))
    }
}

/// Compiles `source` into a content-addressed executable under `build_dir`.
///
/// The path depends on the compiler, flags and source bytes, so identical
/// builds are reused and concurrent distinct builds never collide.
pub fn compile(
    label: &str,
    compiler: &str,
    flags: &[String],
    source: &Path,
    build_dir: &Path,
    log: &mut RunLog,
) -> Result<PathBuf> {
    if find_executable(compiler).is_none() {
        return Err(Error::Config(format!("compiler `{compiler}` not found on PATH")));
    }
    let code = fs::read(source).map_err(|e| Error::io(source, e))?;
    let mut h = Sha256::new();
    h.update(compiler.as_bytes());
    for f in flags {
        h.update([0u8]);
        h.update(f.as_bytes());
    }
    h.update([1u8]);
    h.update(&code);
    let digest: String = h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect();
    let stem = source.file_stem().and_then(|s| s.to_str()).unwrap_or("kernel");
    fs::create_dir_all(build_dir).map_err(|e| Error::io(build_dir, e))?;
    let out = build_dir.join(format!("{stem}-{label}-{digest}"));

    let mut cmd = Command::new(compiler);
    cmd.args(flags).arg(source).arg("-o").arg(&out);
    let line = std::iter::once(compiler.to_string())
        .chain(flags.iter().cloned())
        .chain([
            source.display().to_string(),
            "-o".into(),
            out.display().to_string(),
        ])
        .map(|a| quote(&a))
        .collect::<Vec<_>>()
        .join(" ");
    log.record(line);
    if out.is_file() {
        return Ok(out);
    }
    let output = cmd.output().map_err(|e| Error::Config(format!("cannot run `{compiler}`: {e}")))?;
    if !output.status.success() {
        return Err(Error::Build {
            candidate: label.to_string(),
            source_path: source.to_path_buf(),
            output: format!(
                "{}\n{}{}",
                output.status,
                String::from_utf8_lossy(&output.stdout),
                String::from_utf8_lossy(&output.stderr)
            ),
        });
    }
    Ok(out)
}

/// Builds `instance` with `candidate` in `mode`.
pub fn build(
    candidate: &OptimizerCandidate,
    instance: &KernelInstance,
    mode: Mode,
    build_dir: &Path,
    log: &mut RunLog,
) -> Result<PathBuf> {
    let flags = candidate.flags(mode)?;
    let source = instance.source_path.as_ref().ok_or_else(|| {
        Error::Config(format!("{} has no source_path to build", instance.key))
    })?;
    compile(
        &format!("{}-{mode}", candidate.name),
        &candidate.compiler_command,
        &flags,
        source,
        build_dir,
        log,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryStat {
    #[default]
    Median,
    Min,
    Mean,
}

impl SummaryStat {
    /// Summarizes a non-empty list of run times. The median of an even count
    /// is the mean of the two middle values.
    pub fn summarize(self, times: &[f64]) -> Result<f64> {
        if times.is_empty() {
            return Err(Error::Measurement("no run times".into()));
        }
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        Ok(match self {
            SummaryStat::Min => sorted[0],
            SummaryStat::Mean => sorted.iter().sum::<f64>() / n as f64,
            SummaryStat::Median if n % 2 == 1 => sorted[n / 2],
            SummaryStat::Median => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
        })
    }
}

/// Wall-clock times of one kernel built by one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub key: KernelKey,
    pub candidate: String,
    pub mode: Mode,
    pub label_arch: ArchTag,
    pub run_times_seconds: Vec<f64>,
    pub summary_seconds: f64,
}

impl Measurement {
    pub fn new(
        key: KernelKey,
        candidate: impl Into<String>,
        mode: Mode,
        label_arch: ArchTag,
        run_times_seconds: Vec<f64>,
        stat: SummaryStat,
    ) -> Result<Self> {
        if let Some(t) = run_times_seconds.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::Measurement(format!("{key}: run time {t} is not positive")));
        }
        let summary_seconds = stat.summarize(&run_times_seconds)?;
        Ok(Measurement {
            key,
            candidate: candidate.into(),
            mode,
            label_arch,
            run_times_seconds,
            summary_seconds,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TimingOptions {
    pub repetitions: usize,
    pub summary: SummaryStat,
    /// Thread count for parallel runs; defaults to the physical core count.
    pub threads: Option<usize>,
}

impl Default for TimingOptions {
    fn default() -> Self {
        TimingOptions {
            repetitions: 5,
            summary: SummaryStat::Median,
            threads: None,
        }
    }
}

/// Number of distinct (package, core) pairs, falling back to the logical
/// CPU count.
pub fn physical_cores() -> usize {
    let logical = std::thread::available_parallelism().map_or(1, |n| n.get());
    let Ok(info) = fs::read_to_string("/proc/cpuinfo") else {
        return logical;
    };
    let mut cores = BTreeSet::new();
    let mut package = String::new();
    for line in info.lines() {
        if let Some((k, v)) = line.split_once(':') {
            match k.trim() {
                "physical id" => package = v.trim().to_string(),
                "core id" => {
                    cores.insert((package.clone(), v.trim().to_string()));
                }
                _ => {}
            }
        }
    }
    if cores.is_empty() {
        logical
    } else {
        cores.len()
    }
}

/// Runs `executable` `repetitions` times and records wall-clock times.
///
/// Parallel runs get one OpenMP thread per physical core, bound to cores.
pub fn time_kernel(
    executable: &Path,
    key: &KernelKey,
    candidate: &str,
    mode: Mode,
    label_arch: &ArchTag,
    opts: &TimingOptions,
) -> Result<Measurement> {
    if opts.repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let threads = opts.threads.unwrap_or_else(physical_cores).to_string();
    let mut times = Vec::with_capacity(opts.repetitions);
    for _ in 0..opts.repetitions {
        let mut cmd = Command::new(executable);
        match mode {
            Mode::Serial => {
                cmd.env("OMP_NUM_THREADS", "1");
            }
            Mode::Parallel => {
                cmd.env("OMP_NUM_THREADS", &threads)
                    .env("OMP_PLACES", "cores")
                    .env("OMP_PROC_BIND", "spread")
                    .env("KMP_AFFINITY", "granularity=core,scatter");
            }
        }
        let start = Instant::now();
        let out = cmd.output().map_err(|e| Error::Run {
            executable: executable.to_path_buf(),
            message: e.to_string(),
        })?;
        let elapsed = start.elapsed().as_secs_f64();
        if !out.status.success() {
            return Err(Error::Run {
                executable: executable.to_path_buf(),
                message: format!("exited with {}", out.status),
            });
        }
        if elapsed <= 0.0 {
            return Err(Error::Measurement(format!("{key}: zero elapsed time")));
        }
        times.push(elapsed);
    }
    Measurement::new(key.clone(), candidate, mode, label_arch.clone(), times, opts.summary)
}

/// Candidate with the smallest time; ties go to the lexicographically
/// smallest name.
pub fn argmin_label(times: &BTreeMap<String, f64>) -> Result<String> {
    // BTreeMap iterates names in order, so the first strict minimum wins ties.
    let mut best: Option<(&String, f64)> = None;
    for (name, &t) in times {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Measurement(format!("{name}: time {t} is not positive")));
        }
        if best.is_none_or(|(_, b)| t < b) {
            best = Some((name, t));
        }
    }
    best.map(|(n, _)| n.clone())
        .ok_or_else(|| Error::Invalid("no candidate times to label".into()))
}

/// Most-suited optimizer for `mode`. In parallel mode only candidates able
/// to auto-parallelize are eligible.
pub fn label_most_suited(times: &BTreeMap<String, f64>, mode: Mode, roster: &Roster) -> Result<String> {
    let eligible: BTreeMap<String, f64> = times
        .iter()
        .filter(|(name, _)| match mode {
            Mode::Serial => true,
            Mode::Parallel => roster.get(name).is_some_and(OptimizerCandidate::supports_parallel),
        })
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    argmin_label(&eligible)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Profitability {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "NO")]
    No,
}

impl Profitability {
    pub fn as_str(self) -> &'static str {
        match self {
            Profitability::Yes => "YES",
            Profitability::No => "NO",
        }
    }
}

impl fmt::Display for Profitability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// YES when the fastest parallel build beats `serial_best_time` by at least
/// `threshold` (a fraction: 0.05 means a 1.05x speedup).
pub fn label_profitability(
    serial_best_time: f64,
    parallel_times: &BTreeMap<String, f64>,
    threshold: f64,
) -> Result<Profitability> {
    if !(serial_best_time.is_finite() && serial_best_time > 0.0) {
        return Err(Error::Measurement(format!("serial time {serial_best_time} is not positive")));
    }
    let mut best = f64::INFINITY;
    for (name, &t) in parallel_times {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Measurement(format!("{name}: time {t} is not positive")));
        }
        best = best.min(t);
    }
    if best.is_infinite() {
        return Ok(Profitability::No);
    }
    let speedup = serial_best_time / best;
    Ok(if speedup + BOUNDARY_EPS >= 1.0 + threshold {
        Profitability::Yes
    } else {
        Profitability::No
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SerialSelect,
    ParallelSelect,
    Profitability,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::SerialSelect,
        ModelKind::ParallelSelect,
        ModelKind::Profitability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SerialSelect => "serial-select",
            ModelKind::ParallelSelect => "parallel-select",
            ModelKind::Profitability => "profitability",
        }
    }

    /// Timings a row needs before it can be labeled for this kind.
    pub fn required_timings(self, roster: &Roster) -> Vec<(String, Mode)> {
        let serial = roster.names(Mode::Serial).into_iter().map(|n| (n, Mode::Serial));
        let parallel = roster.names(Mode::Parallel).into_iter().map(|n| (n, Mode::Parallel));
        match self {
            ModelKind::SerialSelect => serial.collect(),
            ModelKind::ParallelSelect => parallel.collect(),
            ModelKind::Profitability => serial.chain(parallel).collect(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Feature vector plus target, with the per-candidate times needed to score
/// predictions.
///
/// For profitability rows `per_candidate_time` maps `NO` to the best serial
/// time and `YES` to the best parallel time, so predictions can be scored by
/// the same speedup machinery as optimizer selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub features: FeatureVector,
    pub label_arch: ArchTag,
    pub per_candidate_time: BTreeMap<String, f64>,
    pub target: String,
}

impl LabeledInstance {
    pub fn key(&self) -> &KernelKey {
        &self.features.key
    }
}

/// Assigns targets for `kind`. Features are copied unchanged; only the
/// target and time map differ between kinds.
pub fn assemble_dataset(
    rows: &[JoinedRow],
    kind: ModelKind,
    roster: &Roster,
    threshold: f64,
) -> Result<(Vec<LabeledInstance>, Vec<Omission>)> {
    let required = kind.required_timings(roster);
    let mut out = Vec::with_capacity(rows.len());
    let mut omissions = Vec::new();
    for row in rows {
        let missing: Vec<String> = required
            .iter()
            .filter(|(c, m)| !row.times(*m).contains_key(c))
            .map(|(c, m)| format!("{c}/{m}"))
            .collect();
        if !missing.is_empty() {
            omissions.push(Omission {
                key: row.instance.key.clone(),
                reason: format!("missing timings: {}", missing.join(", ")),
            });
            continue;
        }
        let pick = |mode: Mode| -> BTreeMap<String, f64> {
            roster
                .names(mode)
                .into_iter()
                .map(|n| {
                    let t = row.times(mode)[&n];
                    (n, t)
                })
                .collect()
        };
        let (times, target) = match kind {
            ModelKind::SerialSelect => {
                let t = pick(Mode::Serial);
                let label = label_most_suited(&t, Mode::Serial, roster)?;
                (t, label)
            }
            ModelKind::ParallelSelect => {
                let t = pick(Mode::Parallel);
                let label = label_most_suited(&t, Mode::Parallel, roster)?;
                (t, label)
            }
            ModelKind::Profitability => {
                let serial = pick(Mode::Serial);
                let parallel = pick(Mode::Parallel);
                let best_serial = serial.values().copied().fold(f64::INFINITY, f64::min);
                let label = label_profitability(best_serial, &parallel, threshold)?;
                let mut t = BTreeMap::new();
                t.insert(Profitability::No.to_string(), best_serial);
                if let Some(bp) = parallel.values().copied().reduce(f64::min) {
                    t.insert(Profitability::Yes.to_string(), bp);
                }
                (t, label.to_string())
            }
        };
        out.push(LabeledInstance {
            features: row.features.clone(),
            label_arch: row.label_arch.clone(),
            per_candidate_time: times,
            target,
        });
    }
    Ok((out, omissions))
}

const TIMING_COLUMNS: [&str; 7] = [
    "kernel_id",
    "dataset_variant",
    "label_arch",
    "optimizer",
    "mode",
    "run_index",
    "seconds",
];

/// Writes one row per individual run.
pub fn write_timing_csv(path: &Path, preamble: Option<&str>, measurements: &[Measurement]) -> Result<()> {
    let headers = strings(&TIMING_COLUMNS);
    let rows: Vec<Vec<String>> = measurements
        .iter()
        .flat_map(|m| {
            m.run_times_seconds.iter().enumerate().map(move |(i, t)| {
                vec![
                    m.key.kernel_id.clone(),
                    m.key.dataset_variant.clone(),
                    m.label_arch.name.clone(),
                    m.candidate.clone(),
                    m.mode.to_string(),
                    i.to_string(),
                    t.to_string(),
                ]
            })
        })
        .collect();
    write_table(path, preamble, &headers, &rows)
}

/// Reads per-run timing rows and summarizes each
/// (kernel, label_arch, optimizer, mode) cell with `stat`.
pub fn read_timing_csv(path: &Path, stat: SummaryStat) -> Result<Vec<Measurement>> {
    let table = Table::read(path)?;
    let col = |n: &str| table.column(n);
    let (id, variant, arch, opt, mode, idx, secs) = (
        col("kernel_id")?,
        col("dataset_variant")?,
        col("label_arch")?,
        col("optimizer")?,
        col("mode")?,
        col("run_index")?,
        col("seconds")?,
    );
    type CellKey = (KernelKey, String, String, Mode);
    let mut cells: BTreeMap<CellKey, BTreeMap<u64, f64>> = BTreeMap::new();
    let mut order: Vec<CellKey> = Vec::new();
    for (line, row) in &table.rows {
        let m: Mode = row[mode].parse().map_err(|e: Error| table.error(*line, e.to_string()))?;
        let run: u64 = row[idx]
            .parse()
            .map_err(|_| table.error(*line, format!("bad run_index `{}`", row[idx])))?;
        let t = table.parse_f64(*line, "seconds", &row[secs])?;
        let k = (
            KernelKey::new(row[id].as_str(), row[variant].as_str()),
            row[arch].clone(),
            row[opt].clone(),
            m,
        );
        let cell = cells.entry(k.clone()).or_default();
        if cell.is_empty() {
            order.push(k.clone());
        }
        if cell.insert(run, t).is_some() {
            return Err(table.error(*line, format!("duplicate run_index {run} for {}", k.0)));
        }
    }
    order
        .into_iter()
        .map(|k| {
            let times: Vec<f64> = cells[&k].values().copied().collect();
            let arch = ArchTag::new(k.1.as_str())?;
            Measurement::new(k.0, k.2, k.3, arch, times, stat)
        })
        .collect()
}

/// Writes a labeled dataset: identity columns, `target`, the `_pki` feature
/// columns and one `time:<candidate>` column per timed candidate.
pub fn write_labeled_csv(path: &Path, preamble: Option<&str>, rows: &[LabeledInstance]) -> Result<()> {
    let schema: Vec<String> = rows.first().map(|r| r.features.schema.clone()).unwrap_or_default();
    let cands: BTreeSet<&String> = rows.iter().flat_map(|r| r.per_candidate_time.keys()).collect();
    let mut headers = strings(&["kernel_id", "dataset_variant", "profile_arch", "label_arch", "target"]);
    headers.extend(schema.iter().cloned());
    headers.extend(cands.iter().map(|c| format!("{TIME_PREFIX}{c}")));
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        if r.features.schema != schema {
            return Err(Error::Invalid(format!("{}: feature schema differs", r.key())));
        }
        let mut line = vec![
            r.key().kernel_id.clone(),
            r.key().dataset_variant.clone(),
            r.features.profile_arch.name.clone(),
            r.label_arch.name.clone(),
            r.target.clone(),
        ];
        line.extend(r.features.values.iter().map(f64::to_string));
        line.extend(
            cands
                .iter()
                .map(|c| r.per_candidate_time.get(*c).map(f64::to_string).unwrap_or_default()),
        );
        out.push(line);
    }
    write_table(path, preamble, &headers, &out)
}

pub fn read_labeled_csv(path: &Path) -> Result<Vec<LabeledInstance>> {
    let table = Table::read(path)?;
    let id = table.column("kernel_id")?;
    let variant = table.column("dataset_variant")?;
    let parch = table.column("profile_arch")?;
    let larch = table.column("label_arch")?;
    let target = table.column("target")?;
    let mut feats: Vec<(usize, String)> = table
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.ends_with(PKI_SUFFIX))
        .map(|(i, h)| (i, h.clone()))
        .collect();
    feats.sort_by(|a, b| a.1.cmp(&b.1));
    let schema: Vec<String> = feats.iter().map(|(_, n)| n.clone()).collect();
    let times: Vec<(usize, String)> = table
        .headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(TIME_PREFIX).map(|c| (i, c.to_string())))
        .collect();
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let values = feats
            .iter()
            .map(|(c, n)| table.parse_f64(*line, n, &row[*c]))
            .collect::<Result<Vec<_>>>()?;
        let mut per = BTreeMap::new();
        for (c, name) in &times {
            if !row[*c].is_empty() {
                per.insert(name.clone(), table.parse_f64(*line, name, &row[*c])?);
            }
        }
        let wrap = |e: Error| table.error(*line, e.to_string());
        let features = FeatureVector::new(
            KernelKey::new(row[id].as_str(), row[variant].as_str()),
            ArchTag::new(row[parch].as_str()).map_err(wrap)?,
            schema.clone(),
            values,
        )
        .map_err(wrap)?;
        if row[target].is_empty() {
            return Err(table.error(*line, "empty target"));
        }
        out.push(LabeledInstance {
            features,
            label_arch: ArchTag::new(row[larch].as_str()).map_err(wrap)?,
            per_candidate_time: per,
            target: row[target].clone(),
        });
    }
    Ok(out)
}
