use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use headroom::ReportFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_headroom"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

/// A config next to a trimmed copy of the fixture: the first `n` manifest
/// rows, with the counter recording shared.
fn small_config(dir: &Path, n: usize, extra: &str) -> PathBuf {
    let manifest = fs::read_to_string(fixture().join("corpus.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).take(n + 1).collect();
    fs::write(dir.join("corpus.csv"), rows.join("\n") + "\n").unwrap();
    let cfg = dir.join("config.toml");
    fs::write(
        &cfg,
        format!(
            "corpus = \"corpus.csv\"\nprofile_arch = \"broadwell\"\nlabel_arch = \"broadwell\"\nseed = 3\n{extra}\n\
             [profiler]\nbackend = \"replay\"\nrecording = \"{}\"\n",
            fixture().join("counters.csv").display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn profile_replay_counts_rows_and_drops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 10, "");
    let out = dir.path().join("out");
    let s = ok(&run(&["profile"], &cfg, &out));
    assert!(s.contains("10 kept, 0 dropped"), "{s}");
    assert_eq!(data_lines(&out.join("features.csv")).len(), 10);
    let first = fs::read(out.join("features.csv")).unwrap();
    ok(&run(&["profile"], &cfg, &out));
    assert_eq!(first, fs::read(out.join("features.csv")).unwrap());

    // k040 is below the activity threshold in the recording
    let manifest = fs::read_to_string(dir.path().join("corpus.csv")).unwrap();
    let mut lines: Vec<&str> = manifest.lines().take(10).collect();
    lines.push("k040,synthetic,MEDIUM");
    fs::write(dir.path().join("corpus.csv"), lines.join("\n") + "\n").unwrap();
    let s = ok(&run(&["profile"], &cfg, &out));
    assert!(s.contains("9 kept, 1 dropped"), "{s}");
    assert!(s.contains("dropped k040/MEDIUM"));
    assert_eq!(data_lines(&out.join("features.csv")).len(), 9);
    assert_eq!(data_lines(&out.join("counters.csv")).len(), 10);
}

#[test]
fn profile_reports_unrecorded_kernels_with_failure_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 3, "");
    let mut manifest = fs::read_to_string(dir.path().join("corpus.csv")).unwrap();
    manifest.push_str("ghost,synthetic,LARGE\n");
    fs::write(dir.path().join("corpus.csv"), manifest).unwrap();
    let o = run(&["profile"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost/LARGE"));
    assert_eq!(data_lines(&dir.path().join("out/features.csv")).len(), 3);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["profile"], &dir.path().join("nope.toml"), dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let cfg = small_config(dir.path(), 2, "bogus_key = 1");
    assert_eq!(run(&["profile"], &cfg, dir.path()).status.code(), Some(2));
    let cfg = small_config(dir.path(), 2, "");
    // labeling before profiling: the feature file is missing
    assert_eq!(run(&["label"], &cfg, &dir.path().join("empty")).status.code(), Some(2));
}

fn script(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
}

/// Roster of four stand-in compilers that emit a trivial executable; the
/// last two also auto-parallelize.
fn fake_toolchain(dir: &Path) -> PathBuf {
    let cc = dir.join("fakecc");
    script(
        &cc,
        "#!/bin/sh\nwhile [ \"$1\" != \"-o\" ]; do shift; done\nprintf '#!/bin/sh\\nexit 0\\n' > \"$2\"\nchmod +x \"$2\"\n",
    );
    let mut roster = String::new();
    for (name, par) in [("alpha", false), ("beta", false), ("gamma", true), ("delta", true)] {
        roster.push_str(&format!(
            "[[candidate]]\nname = \"{name}\"\ncompiler_command = \"{}\"\nserial_flags = [\"-O2\"]\n",
            cc.display()
        ));
        if par {
            roster.push_str("parallel_flags = [\"-fopenmp\"]\n");
        }
    }
    let path = dir.join("roster.toml");
    fs::write(&path, roster).unwrap();
    path
}

fn measure_setup(dir: &Path) -> PathBuf {
    let roster = fake_toolchain(dir);
    let src = dir.join("k.c");
    fs::write(&src, "int main(void){return 0;}\n").unwrap();
    fs::write(
        dir.join("corpus.csv"),
        format!("kernel_id,suite,dataset_variant,source_path\nk1,t,SMALL,{0}\nk2,t,SMALL,{0}\n", src.display()),
    )
    .unwrap();
    let cfg = dir.join("config.toml");
    fs::write(
        &cfg,
        format!(
            "corpus = \"corpus.csv\"\nroster = \"{}\"\nrepetitions = 3\n[profiler]\nrecording = \"none.csv\"\n",
            roster.display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn measure_fills_the_grid_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = measure_setup(dir.path());
    let out = dir.path().join("out");
    let s = ok(&run(&["measure", "--mode", "serial"], &cfg, &out));
    assert!(s.contains("8 cells timed, 0 failed"), "{s}");
    assert_eq!(data_lines(&out.join("timings_serial.csv")).len(), 8 * 3);

    let s = ok(&run(&["measure", "--mode", "parallel"], &cfg, &out));
    assert!(s.contains("4 cells timed"), "{s}");
    let cells: Vec<String> = data_lines(&out.join("timings_parallel.csv"));
    assert!(cells.iter().all(|l| l.contains(",gamma,") || l.contains(",delta,")));
    let log = fs::read_to_string(out.join("measure_parallel.log")).unwrap();
    assert!(log.contains("-O2 -fopenmp"), "{log}");
}

#[test]
fn measure_records_failed_cells_and_missing_compilers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = measure_setup(dir.path());
    let roster = dir.path().join("roster.toml");
    let text = fs::read_to_string(&roster).unwrap();
    let gone = text.replacen(
        &format!("{}\"\nserial_flags = [\"-O2\"]\nparallel_flags", dir.path().join("fakecc").display()),
        "no-such-compiler-xyz\"\nserial_flags = [\"-O2\"]\nparallel_flags",
        1,
    );
    fs::write(&roster, gone).unwrap();
    let out = dir.path().join("out");
    let o = run(&["measure"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-compiler-xyz"));

    let s = ok(&run(&["measure", "--skip-missing"], &cfg, &out));
    assert!(s.contains("6 cells timed"), "{s}");

    // a kernel without sources cannot be built; its cells fail, the rest run
    let mut manifest = fs::read_to_string(dir.path().join("corpus.csv")).unwrap();
    manifest.push_str("k3,t,SMALL,\n");
    fs::write(dir.path().join("corpus.csv"), manifest).unwrap();
    let s = ok(&run(&["measure", "--skip-missing"], &cfg, &out));
    assert!(s.contains("6 cells timed, 3 failed"), "{s}");
    assert_eq!(data_lines(&out.join("failed_serial.csv")).len(), 3);
}

fn profiled_fixture() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture().join("config.toml");
    let out = dir.path().join("out");
    ok(&run(&["profile"], &cfg, &out));
    (dir, cfg, out)
}

fn labels_of(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "target").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

#[test]
fn label_kinds_use_their_own_universe() {
    let (_d, cfg, out) = profiled_fixture();
    let s = ok(&run(&["label", "--model-kind", "serial-select"], &cfg, &out));
    assert!(s.contains("omitted 4"), "{s}");
    let serial = labels_of(&out.join("labeled_serial-select.csv"));
    assert_eq!(serial.len(), 80);
    assert!(serial.iter().all(|l| ["clang", "gcc", "icc", "polly"].contains(&l.as_str())));

    ok(&run(&["label", "--model-kind", "profitability"], &cfg, &out));
    let p = labels_of(&out.join("labeled_profitability.csv"));
    assert!(p.iter().all(|l| l == "YES" || l == "NO"));
    let log = fs::read_to_string(out.join("label_profitability.log")).unwrap();
    assert!(log.contains("fastest serial time over all candidates"));
}

#[test]
fn parallel_labels_skip_serial_only_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2, "[timings]\nparallel = \"par.csv\"");
    fs::write(
        dir.path().join("par.csv"),
        "kernel_id,dataset_variant,label_arch,optimizer,mode,run_index,seconds\n\
         k000,MEDIUM,broadwell,clang,parallel,0,0.1\n\
         k000,MEDIUM,broadwell,icc,parallel,0,0.5\n\
         k000,MEDIUM,broadwell,polly,parallel,0,0.4\n\
         k000,LARGE,broadwell,clang,parallel,0,0.1\n\
         k000,LARGE,broadwell,icc,parallel,0,0.3\n\
         k000,LARGE,broadwell,polly,parallel,0,0.4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&run(&["profile"], &cfg, &out));
    ok(&run(&["label", "--model-kind", "parallel-select"], &cfg, &out));
    assert_eq!(labels_of(&out.join("labeled_parallel-select.csv")), vec!["polly", "icc"]);
}

#[test]
fn train_is_reproducible_and_ranks_features() {
    let (_d, cfg, out) = profiled_fixture();
    ok(&run(&["label"], &cfg, &out));
    let s = ok(&run(&["train"], &cfg, &out));
    let model = fs::read(out.join("model_serial-select.json")).unwrap();
    ok(&run(&["train"], &cfg, &out));
    assert_eq!(model, fs::read(out.join("model_serial-select.json")).unwrap());

    let importance: Vec<f64> = s
        .lines()
        .skip_while(|l| !l.starts_with("feature importance"))
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(importance.len(), 12);
    assert!(importance.windows(2).all(|w| w[0] >= w[1]));
    assert!(s.contains("OOB accuracy: mean"));

    // another seed gives another model
    ok(&run(&["train", "--seed", "99"], &cfg, &out));
    assert_ne!(model, fs::read(out.join("model_serial-select.json")).unwrap());
}

#[test]
fn single_class_training_warns_but_writes_a_model() {
    let (_d, cfg, out) = profiled_fixture();
    ok(&run(&["label", "--model-kind", "profitability"], &cfg, &out));
    let path = out.join("labeled_profitability.csv");
    let text = fs::read_to_string(&path).unwrap().replace(",NO,", ",YES,");
    fs::write(&path, text).unwrap();
    let s = ok(&run(&["train", "--model-kind", "profitability"], &cfg, &out));
    assert!(s.contains("degenerate"), "{s}");
    assert!(out.join("model_profitability.json").is_file());
}

fn report(out: &Path) -> ReportFile {
    serde_json::from_str(&fs::read_to_string(out.join("report_serial-select.json")).unwrap()).unwrap()
}

#[test]
fn evaluate_hooks_and_report_consistency() {
    let (_d, cfg, out) = profiled_fixture();
    ok(&run(&["label"], &cfg, &out));

    ok(&run(&["evaluate", "--predictor", "oracle"], &cfg, &out));
    let r = report(&out).report.union;
    assert_eq!(r.accuracy, 1.0);
    assert!(r.geomean_speedup_over.values().all(|g| *g >= 1.0));

    ok(&run(&["evaluate", "--predictor", "constant:icc"], &cfg, &out));
    assert_eq!(report(&out).report.union.geomean_speedup_over["icc"], 1.0);

    ok(&run(&["evaluate"], &cfg, &out));
    let file = report(&out);
    for r in file.report.rounds.iter().chain([&file.report.union]) {
        let c = &r.confusion;
        assert_eq!(r.accuracy, c.correct() as f64 / c.total() as f64);
        assert_eq!(r.n_instances as u64, c.total());
    }
    let plot = data_lines(&out.join("plot_serial-select.csv"));
    assert_eq!(plot.len(), 4);
    assert!(plot[0].starts_with("clang,"));
    let text = fs::read_to_string(out.join("report_serial-select.txt")).unwrap();
    assert!(text.starts_with("# config_hash="));

    let bad = run(&["evaluate", "--predictor", "psychic"], &cfg, &out);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn predict_binds_columns_by_name() {
    let (d, cfg, out) = profiled_fixture();
    ok(&run(&["label"], &cfg, &out));
    ok(&run(&["train"], &cfg, &out));
    let model = out.join("model_serial-select.json");
    let predict = |features: &Path, output: &Path| {
        bin().arg("predict")
            .arg("--model")
            .arg(&model)
            .arg("--features")
            .arg(features)
            .arg("--output")
            .arg(output)
            .output()
            .unwrap()
    };
    let p1 = d.path().join("p1.csv");
    ok(&predict(&out.join("features.csv"), &p1));
    let rows = data_lines(&p1);
    assert_eq!(rows.len(), 80);
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        assert!(["clang", "gcc", "icc", "polly"].contains(&f[2]));
        let votes: f64 = f[3..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((votes - 1.0).abs() < 1e-9);
    }

    // reverse the column order
    let text = fs::read_to_string(out.join("features.csv")).unwrap();
    let flipped: Vec<String> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').rev().collect::<Vec<_>>().join(","))
        .collect();
    let permuted = d.path().join("permuted.csv");
    fs::write(&permuted, flipped.join("\n") + "\n").unwrap();
    let p2 = d.path().join("p2.csv");
    ok(&predict(&permuted, &p2));
    assert_eq!(data_lines(&p1), data_lines(&p2));

    let header_only = d.path().join("empty.csv");
    fs::write(&header_only, text.lines().find(|l| !l.starts_with('#')).unwrap().to_string() + "\n").unwrap();
    let p3 = d.path().join("p3.csv");
    ok(&predict(&header_only, &p3));
    assert!(data_lines(&p3).is_empty());

    let blank = d.path().join("blank.csv");
    fs::write(&blank, "").unwrap();
    ok(&predict(&blank, &p3));
    assert!(data_lines(&p3).is_empty());

    let narrow = d.path().join("narrow.csv");
    let cut: Vec<String> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect();
    fs::write(&narrow, cut.join("\n") + "\n").unwrap();
    let o = predict(&narrow, &p3);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stalls_total_pki"));
}
