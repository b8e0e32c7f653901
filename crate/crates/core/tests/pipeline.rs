use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use headroom_core::corpus::{join_dataset, ArchTag, KernelInstance, KernelKey};
use headroom_core::evaluation::{cross_arch_evaluate, repeated_trials, PredictionSource, SplitMode, SplitSpec, TrialSpec};
use headroom_core::forest::ForestParams;
use headroom_core::harness::{assemble_dataset, find_executable, LabeledInstance, ModelKind, Roster};
use headroom_core::profiling::{normalize_pki, LiveBackend, ProfileRun, ProfilerBackend};
use headroom_core::synthetic::{generate, SyntheticSpec};
use headroom_core::{Error, Features};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn arch(name: &str) -> ArchTag {
    ArchTag::new(name).unwrap()
}

fn spec(rounds: usize, seed: u64) -> TrialSpec {
    TrialSpec {
        rounds,
        split: SplitSpec { train_fraction: 0.75, seed },
        source: PredictionSource::Forest(ForestParams { n_trees: 30, seed, ..Default::default() }),
        split_mode: SplitMode::Random,
    }
}

#[test]
fn one_profile_serves_every_model_kind() {
    let roster = Roster::default();
    let c = generate(&SyntheticSpec { kernels: 20, ..Default::default() }, &roster).unwrap();
    let feats: Vec<Features> = c.samples.iter().map(|s| normalize_pki(s).unwrap()).collect();
    let digest = |fs: &[&Features]| {
        let mut sorted: Vec<&&Features> = fs.iter().collect();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        Sha256::digest(serde_json::to_vec(&sorted).unwrap())
    };
    let before = digest(&feats.iter().collect::<Vec<_>>());
    for kind in [ModelKind::SerialSelect, ModelKind::ParallelSelect, ModelKind::Profitability] {
        let j = join_dataset(&c.instances, &feats, &c.timings, &kind.required_timings(&roster)).unwrap();
        let (data, omitted) = assemble_dataset(&j.rows, kind, &roster, 0.05).unwrap();
        assert!(omitted.is_empty());
        assert_eq!(digest(&data.iter().map(|d| &d.features).collect::<Vec<_>>()), before);
    }
}

#[test]
fn same_arch_cross_evaluation_matches_the_plain_pipeline() {
    let roster = Roster::default();
    let a = arch("broadwell");
    let c = generate(&SyntheticSpec { kernels: 40, ..Default::default() }, &roster).unwrap();
    let feats: Vec<Features> = c.samples.iter().map(|s| normalize_pki(s).unwrap()).collect();
    let kind = ModelKind::SerialSelect;
    let cross = cross_arch_evaluate(&c.instances, &feats, &c.timings, &a, &a, kind, &roster, 0.05, &spec(3, 4)).unwrap();
    let j = join_dataset(&c.instances, &feats, &c.timings, &kind.required_timings(&roster)).unwrap();
    let (data, _) = assemble_dataset(&j.rows, kind, &roster, 0.05).unwrap();
    let plain = repeated_trials(&data, kind, &spec(3, 4)).unwrap();
    assert_eq!(cross, plain);
}

#[test]
fn relabeled_copy_of_timings_gives_identical_numbers() {
    let roster = Roster::default();
    let (a, b) = (arch("broadwell"), arch("skylake"));
    let c = generate(&SyntheticSpec { kernels: 40, ..Default::default() }, &roster).unwrap();
    let feats: Vec<Features> = c.samples.iter().map(|s| normalize_pki(s).unwrap()).collect();
    let mut copy = c.timings.clone();
    copy.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    for m in &mut copy {
        m.label_arch = b.clone();
    }
    let mut all = c.timings.clone();
    all.extend(copy);
    for kind in [ModelKind::SerialSelect, ModelKind::Profitability] {
        let same = cross_arch_evaluate(&c.instances, &feats, &all, &a, &a, kind, &roster, 0.05, &spec(2, 8)).unwrap();
        let other = cross_arch_evaluate(&c.instances, &feats, &all, &a, &b, kind, &roster, 0.05, &spec(2, 8)).unwrap();
        assert_eq!(other.union.label_arch, "skylake");
        assert_eq!(same.union.correct, other.union.correct);
        assert_eq!(same.union.confusion, other.union.confusion);
        assert_eq!(same.union.geomean_speedup_over, other.union.geomean_speedup_over);
    }
}

#[test]
fn labels_independent_of_features_are_not_learned() {
    let roster = Roster::default();
    let c = generate(&SyntheticSpec { kernels: 150, ..Default::default() }, &roster).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p_major = 0.65;
    let data: Vec<LabeledInstance> = c
        .samples
        .iter()
        .map(|s| {
            let target = if rng.random_bool(p_major) { "icc" } else { "polly" };
            LabeledInstance {
                features: normalize_pki(s).unwrap(),
                label_arch: arch("skylake"),
                per_candidate_time: BTreeMap::from([("icc".into(), 1.0), ("polly".into(), 1.0)]),
                target: target.into(),
            }
        })
        .collect();
    let r = repeated_trials(&data, ModelKind::ParallelSelect, &spec(3, 5)).unwrap();
    let n = r.union.n_instances as f64;
    let sigma = (p_major * (1.0 - p_major) / n).sqrt();
    assert!(r.union.accuracy <= p_major + 3.0 * sigma, "{} vs {p_major}", r.union.accuracy);
}

fn script(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    p.display().to_string()
}

#[test]
fn live_backend_against_a_stand_in_profiler() {
    if find_executable("cc").is_none() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    // prints perf-style CSV on stderr and forwards the program's exit status
    let perf = script(
        dir.path(),
        "fake-perf",
        "#!/bin/sh\nwhile [ \"$1\" != \"--\" ]; do shift; done\nshift\n\"$@\"\nst=$?\n\
         echo '2000000,,instructions,1000,100.00,,' >&2\n\
         echo '3000000,,cycles,1000,100.00,,' >&2\n\
         echo '5000,,LLC-load-misses,1000,100.00,,' >&2\n\
         exit $st\n",
    );
    let ok = dir.path().join("ok.c");
    fs::write(&ok, "int main(void){return 0;}\n").unwrap();
    let bad = dir.path().join("bad.c");
    fs::write(&bad, "int main(void){return 3;}\n").unwrap();

    let backend = LiveBackend {
        compiler: "cc".into(),
        flags: vec!["-O1".into()],
        perf_command: vec![perf],
        events: vec!["instructions".into(), "cycles".into(), "LLC-load-misses".into()],
        ..LiveBackend::new(arch("host"))
    };
    let run = ProfileRun { build_dir: dir.path().join("build") };
    let inst = |src: &Path| KernelInstance {
        key: KernelKey::new(src.file_stem().unwrap().to_str().unwrap(), "SMALL"),
        suite: "t".into(),
        source_path: Some(src.to_path_buf()),
    };
    let s = backend.collect(&inst(&ok), &run).unwrap();
    assert_eq!(s.instructions_retired, 2_000_000.0);
    let f: Features = normalize_pki(&s).unwrap();
    let cycles = f.schema.iter().position(|n| n.starts_with("cycles")).unwrap();
    assert_eq!(f.values[cycles], 1500.0);
    assert!(!f.schema.iter().any(|n| n.starts_with("instructions")));

    match backend.collect(&inst(&bad), &run) {
        Err(Error::Run { message, .. }) => assert!(message.contains("bad/SMALL")),
        other => panic!("expected a run error, got {other:?}"),
    }
}
