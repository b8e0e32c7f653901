//! Run configuration shared by every pipeline command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ArchTag;
use crate::error::{Error, Result};
use crate::evaluation::SplitSpec;
use crate::forest::ForestParams;
use crate::harness::{Mode, ModelKind, SummaryStat, DEFAULT_PROFIT_THRESHOLD};
use crate::profiling::{default_events, LiveBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    #[default]
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilerConfig {
    pub backend: BackendKind,
    /// Recorded counter file for the replay backend.
    pub recording: Option<PathBuf>,
    pub compiler: String,
    pub flags: Vec<String>,
    pub perf_command: Vec<String>,
    pub events: Vec<String>,
    pub instructions_event: String,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        let live = LiveBackend::new(ArchTag {
            name: "host".into(),
            description: String::new(),
        });
        ProfilerConfig {
            backend: BackendKind::Replay,
            recording: None,
            compiler: live.compiler,
            flags: live.flags,
            perf_command: live.perf_command,
            events: default_events(),
            instructions_event: live.instructions_event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub features_per_tree: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestConfig {
            n_trees: p.n_trees,
            max_depth: p.max_depth,
            features_per_tree: p.features_per_tree,
            min_samples_leaf: p.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingPaths {
    pub serial: Option<PathBuf>,
    pub parallel: Option<PathBuf>,
}

/// Everything a pipeline command needs. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Candidate roster; the built-in four-compiler roster when absent.
    pub roster: Option<PathBuf>,
    pub profiler: ProfilerConfig,
    pub profile_arch: String,
    pub label_arch: String,
    pub seed: u64,
    /// Timing mode for `measure`.
    pub mode: Mode,
    pub model_kind: ModelKind,
    /// Leave out candidates whose compiler is not installed.
    pub skip_missing: bool,
    pub repetitions: usize,
    pub summary: SummaryStat,
    pub min_instructions: u64,
    pub profit_threshold: f64,
    pub forest: ForestConfig,
    pub train_fraction: f64,
    pub trials: usize,
    pub timings: TimingPaths,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus.csv"),
            roster: None,
            profiler: ProfilerConfig::default(),
            profile_arch: "host".into(),
            label_arch: "host".into(),
            seed: 0,
            mode: Mode::Serial,
            model_kind: ModelKind::SerialSelect,
            skip_missing: false,
            repetitions: 5,
            summary: SummaryStat::Median,
            min_instructions: 100_000,
            profit_threshold: DEFAULT_PROFIT_THRESHOLD,
            forest: ForestConfig::default(),
            train_fraction: 0.75,
            trials: 3,
            timings: TimingPaths::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        rebase(base, &mut self.corpus);
        rebase(base, &mut self.out_dir);
        for p in [
            self.roster.as_mut(),
            self.profiler.recording.as_mut(),
            self.timings.serial.as_mut(),
            self.timings.parallel.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        ArchTag::new(self.profile_arch.as_str())?;
        ArchTag::new(self.label_arch.as_str())?;
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.min_instructions == 0 {
            return Err(Error::Config("min_instructions must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie strictly between 0 and 1".into()));
        }
        if self.profiler.backend == BackendKind::Replay && self.profiler.recording.is_none() {
            return Err(Error::Config("replay backend needs profiler.recording".into()));
        }
        Ok(())
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.forest.n_trees,
            max_depth: self.forest.max_depth,
            features_per_tree: self.forest.features_per_tree,
            min_samples_leaf: self.forest.min_samples_leaf,
            seed: self.seed,
            bootstrap: true,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    pub fn profile_arch_tag(&self) -> Result<ArchTag> {
        ArchTag::new(self.profile_arch.as_str())
    }

    pub fn label_arch_tag(&self) -> Result<ArchTag> {
        ArchTag::new(self.label_arch.as_str())
    }

    /// Digest of the settings that influence outputs. The output directory is
    /// left out so the same run written elsewhere hashes identically.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_string(&c).unwrap_or_default();
        Sha256::digest(json.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Provenance stamp written at the top of every artifact.
    pub fn stamp(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "corpus = \"c.csv\"\nseed = 7\n[profiler]\nrecording = \"/abs/rec.csv\"\n[forest]\nn_trees = 3\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus, dir.path().join("c.csv"));
        assert_eq!(cfg.profiler.recording.as_deref(), Some(Path::new("/abs/rec.csv")));
        assert_eq!(cfg.forest_params().n_trees, 3);
        assert_eq!(cfg.forest_params().seed, 7);
        assert_eq!(cfg.forest.max_depth, 16);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "bogus = 1\n").unwrap();
        assert!(RunConfig::load(&path).unwrap_err().is_config());
        fs::write(&path, "trials = 0\n[profiler]\nrecording = \"r.csv\"\n").unwrap();
        assert!(RunConfig::load(&path).unwrap_err().is_config());
    }

    #[test]
    fn hash_ignores_out_dir() {
        let a = RunConfig::default();
        let b = RunConfig {
            out_dir: "/elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
