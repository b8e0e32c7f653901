//! Pipeline commands behind the `headroom` binary.
//!
//! Each command reads its inputs from the run configuration (or the output
//! directory of an earlier command), writes stamped artifacts into the
//! output directory and returns a short human-readable summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use headroom_core::config::{BackendKind, RunConfig};
use headroom_core::corpus::{join_dataset, load_corpus};
use headroom_core::evaluation::{repeated_trials, PredictionSource, SplitMode, TrialSpec, TrialsReport};
use headroom_core::forest::{train_majority, train_on_instances, MajorityModel, MODEL_FORMAT_VERSION};
use headroom_core::harness::{
    assemble_dataset, build, find_executable, read_labeled_csv, read_timing_csv, time_kernel,
    write_labeled_csv, write_timing_csv, Measurement, Mode, ModelKind, Roster, RunLog, TimingOptions,
};
use headroom_core::profiling::{
    filter_low_activity, missing_crucial_families, normalize_pki, read_feature_csv, write_counter_csv,
    write_feature_csv, LiveBackend, ProfileRun, ProfilerBackend, ReplayBackend,
};
use headroom_core::{Error, Features, Forest};
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    /// The command finished but some items failed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_config() => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub model_kind: Option<ModelKind>,
    pub skip_missing: bool,
    pub out_dir: Option<PathBuf>,
}

pub fn load_config(path: &Path, o: &Overrides) -> Result<RunConfig> {
    require(path, "config file")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(m) = o.mode {
        cfg.mode = m;
    }
    if let Some(k) = o.model_kind {
        cfg.model_kind = k;
    }
    if o.skip_missing {
        cfg.skip_missing = true;
    }
    if let Some(d) = &o.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    Ok(cfg.out_dir.join(name))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())).into())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn roster(cfg: &RunConfig) -> Result<Roster> {
    match &cfg.roster {
        Some(p) => {
            require(p, "roster")?;
            Ok(Roster::load(p)?)
        }
        None => Ok(Roster::default()),
    }
}

fn features_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("features.csv")
}

fn timings_path(cfg: &RunConfig, mode: Mode) -> PathBuf {
    let configured = match mode {
        Mode::Serial => &cfg.timings.serial,
        Mode::Parallel => &cfg.timings.parallel,
    };
    configured
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("timings_{mode}.csv")))
}

fn labeled_path(cfg: &RunConfig, kind: ModelKind) -> PathBuf {
    cfg.out_dir.join(format!("labeled_{kind}.csv"))
}

/// Profiles every corpus kernel once and writes raw counters and PKI
/// features.
pub fn cmd_profile(cfg: &RunConfig) -> Result<String> {
    require(&cfg.corpus, "corpus manifest")?;
    let instances = load_corpus(&cfg.corpus)?;
    let arch = cfg.profile_arch_tag()?;
    let backend: Box<dyn ProfilerBackend> = match cfg.profiler.backend {
        BackendKind::Replay => {
            let rec = cfg
                .profiler
                .recording
                .as_ref()
                .ok_or_else(|| Error::Config("replay backend needs profiler.recording".into()))?;
            require(rec, "counter recording")?;
            Box::new(ReplayBackend::load(rec, arch)?)
        }
        BackendKind::Live => Box::new(LiveBackend {
            compiler: cfg.profiler.compiler.clone(),
            flags: cfg.profiler.flags.clone(),
            perf_command: cfg.profiler.perf_command.clone(),
            events: cfg.profiler.events.clone(),
            instructions_event: cfg.profiler.instructions_event.clone(),
            ..LiveBackend::new(arch)
        }),
    };
    let run = ProfileRun {
        build_dir: cfg.out_dir.join("build"),
    };

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for inst in &instances {
        match backend.collect(inst, &run) {
            Ok(s) => samples.push(s),
            Err(e) => {
                log::error!("{}: {e}", inst.key);
                failures.push(format!("{}: {e}", inst.key));
            }
        }
    }
    let stamp = cfg.stamp();
    write_counter_csv(&out_file(cfg, "counters.csv")?, Some(&stamp), &samples)?;
    let (kept, dropped) = filter_low_activity(samples, cfg.min_instructions);
    let features = kept
        .iter()
        .map(normalize_pki)
        .collect::<headroom_core::Result<Vec<Features>>>()?;
    write_feature_csv(&out_file(cfg, "features.csv")?, Some(&stamp), &features)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "profiled {} kernels with {}: {} kept, {} dropped (min_instructions {})",
        instances.len(),
        backend.name(),
        features.len(),
        dropped.len(),
        cfg.min_instructions
    );
    for d in &dropped {
        let _ = writeln!(s, "  dropped {}: {}", d.sample.key, d.reason);
    }
    if !failures.is_empty() {
        print!("{s}");
        return Err(CliError::Failed(format!(
            "{} kernel(s) failed to profile:\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }
    Ok(s)
}

/// Builds and times every kernel with every eligible candidate.
pub fn cmd_measure(cfg: &RunConfig) -> Result<String> {
    let mode = cfg.mode;
    require(&cfg.corpus, "corpus manifest")?;
    let roster = roster(cfg)?;
    let instances = load_corpus(&cfg.corpus)?;
    let arch = cfg.label_arch_tag()?;
    let mut log = RunLog::default();
    let mut candidates = Vec::new();
    for c in roster.for_mode(mode) {
        if find_executable(&c.compiler_command).is_some() {
            candidates.push(c);
        } else if cfg.skip_missing {
            log::warn!("skipping {}: `{}` not found", c.name, c.compiler_command);
            log.record(format!("# skipped {}: {} not found", c.name, c.compiler_command));
        } else {
            return Err(Error::Config(format!(
                "compiler `{}` for candidate {} not found (use --skip-missing to leave it out)",
                c.compiler_command, c.name
            ))
            .into());
        }
    }
    let opts = TimingOptions {
        repetitions: cfg.repetitions,
        summary: cfg.summary,
        threads: None,
    };
    let build_dir = cfg.out_dir.join("build");
    let mut measured: Vec<Measurement> = Vec::new();
    let mut failed: Vec<Vec<String>> = Vec::new();
    for inst in &instances {
        for c in &candidates {
            let cell = build(c, inst, mode, &build_dir, &mut log)
                .and_then(|exe| time_kernel(&exe, &inst.key, &c.name, mode, &arch, &opts));
            match cell {
                Ok(m) => measured.push(m),
                Err(e) => {
                    log::warn!("{} {} {mode}: {e}", inst.key, c.name);
                    log.record(format!("# failed {} {}: {e}", inst.key, c.name));
                    failed.push(vec![
                        inst.key.kernel_id.clone(),
                        inst.key.dataset_variant.clone(),
                        c.name.clone(),
                        mode.to_string(),
                        e.to_string().replace('\n', " "),
                    ]);
                }
            }
        }
    }
    let stamp = cfg.stamp();
    write_timing_csv(&out_file(cfg, &format!("timings_{mode}.csv"))?, Some(&stamp), &measured)?;
    let failed_path = out_file(cfg, &format!("failed_{mode}.csv"))?;
    let mut f = format!("# {stamp}\nkernel_id,dataset_variant,optimizer,mode,error\n");
    for row in &failed {
        let quoted: Vec<String> = row.iter().map(|v| format!("\"{}\"", v.replace('"', "\"\""))).collect();
        let _ = writeln!(f, "{}", quoted.join(","));
    }
    write_text(&failed_path, &f)?;
    let log_path = out_file(cfg, &format!("measure_{mode}.log"))?;
    let _ = fs::remove_file(&log_path);
    log.append_to(&log_path)?;
    Ok(format!(
        "{mode}: {} cells timed, {} failed ({} kernels x {} candidates)\n",
        measured.len(),
        failed.len(),
        instances.len(),
        candidates.len()
    ))
}

/// Joins features with timings and writes the labeled dataset for the
/// configured model kind.
pub fn cmd_label(cfg: &RunConfig) -> Result<String> {
    let kind = cfg.model_kind;
    require(&cfg.corpus, "corpus manifest")?;
    let roster = roster(cfg)?;
    let required = kind.required_timings(&roster);
    let mut modes: Vec<Mode> = required.iter().map(|(_, m)| *m).collect();
    modes.dedup();
    let fpath = features_path(cfg);
    require(&fpath, "feature file")?;
    for m in &modes {
        require(&timings_path(cfg, *m), "timing file")?;
    }

    let instances = load_corpus(&cfg.corpus)?;
    let features: Vec<Features> = read_feature_csv(&fpath)?
        .into_iter()
        .filter(|f| f.profile_arch.name == cfg.profile_arch)
        .collect();
    let mut timings = Vec::new();
    for m in &modes {
        timings.extend(
            read_timing_csv(&timings_path(cfg, *m), cfg.summary)?
                .into_iter()
                .filter(|t| t.label_arch.name == cfg.label_arch && t.mode == *m),
        );
    }
    let joined = join_dataset(&instances, &features, &timings, &required)?;
    let (data, more) = assemble_dataset(&joined.rows, kind, &roster, cfg.profit_threshold)?;
    let stamp = cfg.stamp();
    write_labeled_csv(&out_file(cfg, &format!("labeled_{kind}.csv"))?, Some(&stamp), &data)?;

    let mut hist: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &data {
        *hist.entry(d.target.as_str()).or_default() += 1;
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{kind}: {} labeled instances (features {}, labels {})",
        data.len(),
        cfg.profile_arch,
        cfg.label_arch
    );
    for (label, n) in &hist {
        let _ = writeln!(s, "  {label:<12} {n}");
    }
    let omissions: Vec<_> = joined.omissions.iter().chain(&more).collect();
    if !omissions.is_empty() {
        let _ = writeln!(s, "omitted {}:", omissions.len());
        for o in &omissions {
            let _ = writeln!(s, "  {}: {}", o.key, o.reason);
        }
    }
    let mut log = format!("# {stamp}\n");
    if kind == ModelKind::Profitability {
        let _ = writeln!(
            log,
            "profitability: serial baseline is the fastest serial time over all candidates; \
             YES when baseline / fastest parallel time >= {}",
            1.0 + cfg.profit_threshold
        );
    }
    log.push_str(&s);
    write_text(&out_file(cfg, &format!("label_{kind}.log"))?, &log)?;
    Ok(s)
}

/// Serialized forest plus majority baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_hash: String,
    pub seed: u64,
    pub model_kind: ModelKind,
    pub profile_arch: String,
    pub label_arch: String,
    pub forest: Forest,
    pub majority: MajorityModel,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ModelFile = serde_json::from_str(&text).map_err(Error::from)?;
        if m.forest.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "{}: model format version {} is not supported",
                path.display(),
                m.forest.format_version
            ))
            .into());
        }
        Ok(m)
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let kind = cfg.model_kind;
    let lpath = labeled_path(cfg, kind);
    require(&lpath, "labeled dataset")?;
    let data = read_labeled_csv(&lpath)?;
    let forest: Forest = train_on_instances(&data, &cfg.forest_params())?;
    let majority = train_majority(&data.iter().map(|d| d.target.as_str()).collect::<Vec<_>>())?;

    let mut s = String::new();
    let _ = writeln!(s, "# {}", cfg.stamp());
    let _ = writeln!(s, "{kind}: trained {} trees on {} instances", forest.trees.len(), data.len());
    for (label, n) in &majority.training_histogram {
        let _ = writeln!(s, "  {label:<12} {n}");
    }
    let _ = writeln!(s, "majority label: {}", majority.majority_label);
    if forest.degenerate {
        log::warn!("training data has a single class; the model always predicts it");
        let _ = writeln!(s, "warning: degenerate model (single class)");
    }
    let missing = missing_crucial_families(&forest.feature_schema);
    if !missing.is_empty() {
        log::warn!("feature schema lacks counter families: {}", missing.join(", "));
        let _ = writeln!(s, "warning: no features for {}", missing.join(", "));
    }
    let oob: Vec<f64> = forest.trees.iter().filter_map(|t| t.oob_accuracy).collect();
    match forest.mean_oob_accuracy() {
        Some(mean) => {
            let min = oob.iter().copied().fold(f64::INFINITY, f64::min);
            let max = oob.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                s,
                "OOB accuracy: mean {mean:.4} min {min:.4} max {max:.4} over {} trees",
                oob.len()
            );
        }
        None => {
            let _ = writeln!(s, "OOB accuracy: n/a");
        }
    }
    let mut body = String::new();
    let _ = writeln!(body, "per-tree OOB accuracy:");
    for (i, t) in forest.trees.iter().enumerate() {
        match t.oob_accuracy {
            Some(a) => {
                let _ = writeln!(body, "  tree {i:>3}: {a:.4} (depth {})", t.depth());
            }
            None => {
                let _ = writeln!(body, "  tree {i:>3}: n/a (depth {})", t.depth());
            }
        }
    }
    match forest.feature_importance() {
        Ok(imp) => {
            let _ = writeln!(s, "feature importance:");
            for (name, v) in imp {
                let _ = writeln!(s, "  {name:<32} {v:+.4}");
            }
        }
        Err(e) => {
            let _ = writeln!(s, "feature importance unavailable: {e}");
        }
    }

    let file = ModelFile {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        model_kind: kind,
        profile_arch: cfg.profile_arch.clone(),
        label_arch: cfg.label_arch.clone(),
        forest,
        majority,
    };
    let json = serde_json::to_string_pretty(&file).map_err(Error::from)?;
    write_text(&out_file(cfg, &format!("model_{kind}.json"))?, &(json + "\n"))?;
    write_text(&out_file(cfg, &format!("train_{kind}.txt"))?, &format!("{s}{body}"))?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub report: TrialsReport,
}

/// Runs the repeated split/train/validate protocol on the labeled dataset.
/// `source` replaces the forest with a prediction hook when given.
pub fn cmd_evaluate(cfg: &RunConfig, source: Option<PredictionSource>) -> Result<String> {
    let kind = cfg.model_kind;
    let lpath = labeled_path(cfg, kind);
    require(&lpath, "labeled dataset")?;
    let data = read_labeled_csv(&lpath)?;
    let spec = TrialSpec {
        rounds: cfg.trials,
        split: cfg.split_spec(),
        source: source.unwrap_or_else(|| PredictionSource::Forest(cfg.forest_params())),
        split_mode: SplitMode::Random,
    };
    let report = repeated_trials(&data, kind, &spec)?;
    let stamp = cfg.stamp();
    let file = ReportFile {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        report,
    };
    let json = serde_json::to_string_pretty(&file).map_err(Error::from)?;
    write_text(&out_file(cfg, &format!("report_{kind}.json"))?, &(json + "\n"))?;
    let text = format!("# {stamp}\n{}", file.report.render());
    write_text(&out_file(cfg, &format!("report_{kind}.txt"))?, &text)?;
    file.report
        .write_plot_csv(&out_file(cfg, &format!("plot_{kind}.csv"))?, Some(&stamp))?;
    Ok(file.report.union.render("all rounds"))
}

/// Predicts every row of a feature file with a trained model. Features bind
/// by name, so column order does not matter.
pub fn cmd_predict(model: &Path, features: &Path, output: &Path) -> Result<String> {
    require(model, "model file")?;
    require(features, "feature file")?;
    let m = ModelFile::load(model)?;
    let text = fs::read_to_string(features).map_err(|e| Error::io(features, e))?;
    let blank = text.lines().all(|l| l.trim().is_empty() || l.starts_with('#'));
    let rows = if blank { Vec::new() } else { read_feature_csv(features)? };
    let stamp = format!("config_hash={} seed={}", m.config_hash, m.seed);
    let universe = &m.forest.label_universe;
    let mut out = format!("# {stamp}\nkernel_id,dataset_variant,predicted");
    for l in universe {
        let _ = write!(out, ",vote:{l}");
    }
    out.push('\n');
    for r in &rows {
        let p = m.forest.predict(r)?;
        let _ = write!(out, "{},{},{}", r.key.kernel_id, r.key.dataset_variant, p.label);
        for v in &p.vote_fractions {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_text(output, &out)?;
    Ok(format!("{} predictions written to {}\n", rows.len(), output.display()))
}

/// Parses the hidden `--predictor` hook of `evaluate`: `forest`, `oracle` or
/// `constant:<label>`.
pub fn parse_predictor(s: &str, cfg: &RunConfig) -> Result<PredictionSource> {
    match s.split_once(':') {
        None if s == "forest" => Ok(PredictionSource::Forest(cfg.forest_params())),
        None if s == "oracle" => Ok(PredictionSource::Oracle),
        Some(("constant", label)) if !label.is_empty() => Ok(PredictionSource::Constant(label.into())),
        _ => Err(Error::Config(format!("unknown predictor `{s}`")).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::DuplicateKey("k".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::Measurement("m".into())).exit_code(), 1);
        assert_eq!(CliError::Failed("f".into()).exit_code(), 1);
    }

    #[test]
    fn predictor_hooks() {
        let cfg = RunConfig::default();
        assert_eq!(parse_predictor("oracle", &cfg).unwrap(), PredictionSource::Oracle);
        assert_eq!(
            parse_predictor("constant:icc", &cfg).unwrap(),
            PredictionSource::Constant("icc".into())
        );
        assert!(matches!(parse_predictor("forest", &cfg).unwrap(), PredictionSource::Forest(_)));
        assert!(parse_predictor("constant:", &cfg).is_err());
    }

    #[test]
    fn overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 1\nmode = \"parallel\"\nmodel_kind = \"profitability\"\n[profiler]\nrecording = \"r.csv\"\n").unwrap();
        let cfg = load_config(&path, &Overrides::default()).unwrap();
        assert_eq!((cfg.seed, cfg.mode, cfg.model_kind), (1, Mode::Parallel, ModelKind::Profitability));
        let o = Overrides {
            seed: Some(9),
            mode: Some(Mode::Serial),
            model_kind: Some(ModelKind::SerialSelect),
            skip_missing: true,
            out_dir: Some("/elsewhere".into()),
        };
        let cfg2 = load_config(&path, &o).unwrap();
        assert_eq!((cfg2.seed, cfg2.mode, cfg2.model_kind), (9, Mode::Serial, ModelKind::SerialSelect));
        assert!(cfg2.skip_missing);
        assert_eq!(cfg2.out_dir, PathBuf::from("/elsewhere"));
        // the output directory does not enter the hash
        let mut cfg3 = cfg2.clone();
        cfg3.out_dir = "/other".into();
        assert_eq!(cfg2.hash(), cfg3.hash());
    }
}
