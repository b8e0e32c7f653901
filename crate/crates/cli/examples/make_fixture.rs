//! Regenerates the bundled replay fixture:
//!
//!     cargo run -p headroom --example make_fixture -- crates/cli/fixtures/replay

use std::fmt::Write as _;
use std::path::PathBuf;

use headroom_core::corpus::ArchTag;
use headroom_core::harness::{write_timing_csv, Mode, Roster};
use headroom_core::profiling::write_counter_csv;
use headroom_core::synthetic::{generate, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/replay".into()));
    std::fs::create_dir_all(&dir)?;
    let spec = SyntheticSpec {
        kernels: 40,
        idle_kernels: 2,
        label_archs: vec![ArchTag::new("broadwell")?, ArchTag::new("skylake")?],
        seed: 2024,
        ..Default::default()
    };
    let corpus = generate(&spec, &Roster::default())?;
    let note = format!("synthetic recording, generator seed {}", spec.seed);

    let mut manifest = format!("# {note}\nkernel_id,suite,dataset_variant\n");
    for i in &corpus.instances {
        writeln!(manifest, "{},{},{}", i.key.kernel_id, i.suite, i.key.dataset_variant)?;
    }
    std::fs::write(dir.join("corpus.csv"), manifest)?;
    write_counter_csv(&dir.join("counters.csv"), Some(&note), &corpus.samples)?;
    for mode in [Mode::Serial, Mode::Parallel] {
        let rows: Vec<_> = corpus.timings.iter().filter(|m| m.mode == mode).cloned().collect();
        write_timing_csv(&dir.join(format!("timings_{mode}.csv")), Some(&note), &rows)?;
    }
    println!("wrote {} instances to {}", corpus.instances.len(), dir.display());
    Ok(())
}
