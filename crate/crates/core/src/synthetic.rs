//! Synthetic kernel corpora with a known relationship between counters and
//! per-optimizer run times.
//!
//! Each kernel gets four hidden traits: memory pressure, vectorizability,
//! control-flow density and parallel fraction. The traits drive both the
//! counter profile and the timing model, so the labels are learnable from
//! the features but not perfectly. Used for fixtures and tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{ArchTag, KernelInstance, KernelKey};
use crate::error::{Error, Result};
use crate::harness::{Measurement, Mode, Roster, SummaryStat};
use crate::profiling::RawCounterSample;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub kernels: usize,
    pub variants: Vec<String>,
    pub profile_arch: ArchTag,
    /// One set of timings is produced per label architecture.
    pub label_archs: Vec<ArchTag>,
    pub repetitions: usize,
    /// Extra kernels whose instruction count falls under 100k.
    pub idle_kernels: usize,
    /// Standard deviation of the per-kernel log-time noise.
    pub noise: f64,
    pub threads: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kernels: 60,
            variants: vec!["MEDIUM".into(), "LARGE".into()],
            profile_arch: ArchTag {
                name: "broadwell".into(),
                description: String::new(),
            },
            label_archs: vec![ArchTag {
                name: "broadwell".into(),
                description: String::new(),
            }],
            repetitions: 5,
            idle_kernels: 0,
            noise: 0.03,
            threads: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticCorpus {
    pub instances: Vec<KernelInstance>,
    pub samples: Vec<RawCounterSample>,
    pub timings: Vec<Measurement>,
}

#[derive(Debug, Clone, Copy)]
struct Traits {
    mem: f64,
    vec: f64,
    ctrl: f64,
    par: f64,
}

// log-time response of each optimizer to (mem, vec, ctrl), plus an offset
const RESPONSE: [[f64; 4]; 4] = [
    [0.00, -0.10, 0.00, 0.00],
    [0.05, 0.00, -0.30, 0.05],
    [0.00, -0.40, 0.12, 0.08],
    [-0.45, -0.05, 0.10, 0.10],
];

const COUNTERS: [&str; 12] = [
    "branch_misses",
    "branches",
    "cycles",
    "dtlb_load_misses",
    "fp_simd_ops",
    "l1_dcache_load_misses",
    "l1_dcache_loads",
    "l1_dcache_stores",
    "l2_rqsts_miss",
    "llc_load_misses",
    "llc_loads",
    "stalls_total",
];

fn counter_rates(t: Traits) -> [f64; 12] {
    [
        2.0 + 30.0 * t.ctrl,
        60.0 + 140.0 * t.ctrl,
        600.0 + 900.0 * t.mem + 200.0 * t.ctrl - 200.0 * t.vec,
        0.5 + 8.0 * t.mem,
        5.0 + 400.0 * t.vec,
        10.0 + 60.0 * t.mem + 10.0 * t.vec,
        250.0 + 150.0 * t.vec,
        // reductions and scattered writes both hurt parallel scaling
        60.0 + 120.0 * (1.0 - t.par),
        3.0 + 35.0 * t.mem,
        0.5 + 20.0 * t.mem,
        4.0 + 40.0 * t.mem,
        150.0 + 700.0 * t.mem,
    ]
}

/// Generates instances, counter samples and timings for every candidate in
/// `roster` and every mode it supports.
pub fn generate(spec: &SyntheticSpec, roster: &Roster) -> Result<SyntheticCorpus> {
    if spec.repetitions == 0 || spec.variants.is_empty() || spec.label_archs.is_empty() {
        return Err(Error::Config("synthetic corpus needs variants, label archs and repetitions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let arch_shift: Vec<Vec<f64>> = spec
        .label_archs
        .iter()
        .enumerate()
        .map(|(i, _)| {
            roster
                .candidates
                .iter()
                .map(|_| if i == 0 { 0.0 } else { 0.06 * unit.sample(&mut rng) })
                .collect()
        })
        .collect();

    let mut out = SyntheticCorpus::default();
    let total = spec.kernels + spec.idle_kernels;
    for k in 0..total {
        let kernel_id = format!("k{k:03}");
        let base = Traits {
            mem: rng.random(),
            vec: rng.random(),
            ctrl: rng.random(),
            par: rng.random(),
        };
        let idle = k >= spec.kernels;
        for (vi, variant) in spec.variants.iter().enumerate() {
            let key = KernelKey::new(kernel_id.as_str(), variant.as_str());
            // larger inputs spill further down the cache hierarchy
            let t = Traits {
                mem: (base.mem + 0.15 * vi as f64).min(1.0),
                ..base
            };
            out.instances.push(KernelInstance {
                key: key.clone(),
                suite: "synthetic".into(),
                source_path: None,
            });

            let instructions = if idle {
                rng.random_range(1_000.0..90_000.0f64).round()
            } else {
                (10f64.powf(rng.random_range(7.0..8.5)) * (1.0 + vi as f64)).round()
            };
            let counters: BTreeMap<String, f64> = COUNTERS
                .iter()
                .zip(counter_rates(t))
                .map(|(name, rate)| {
                    let jitter = (0.05 * unit.sample(&mut rng)).exp();
                    (name.to_string(), (rate * jitter * instructions / 1000.0).round())
                })
                .collect();
            out.samples.push(RawCounterSample::new(
                key.clone(),
                spec.profile_arch.clone(),
                instructions,
                counters,
            )?);

            let serial_base = instructions * (0.5 + t.mem) * 1e-9;
            for (ai, arch) in spec.label_archs.iter().enumerate() {
                for (ci, cand) in roster.candidates.iter().enumerate() {
                    let r = RESPONSE[ci % RESPONSE.len()];
                    let log_t = r[0] * t.mem
                        + r[1] * t.vec
                        + r[2] * t.ctrl
                        + r[3]
                        + arch_shift[ai][ci]
                        + spec.noise * unit.sample(&mut rng);
                    let serial = serial_base * log_t.exp();
                    let mut modes = vec![(Mode::Serial, serial)];
                    if cand.supports_parallel() {
                        let p = (0.97 * t.par - 0.1 * t.ctrl).clamp(0.0, 0.97);
                        let overhead = 0.04 + 0.02 * ci as f64 / roster.candidates.len() as f64;
                        let amdahl = (1.0 - p) + p / spec.threads.max(1) as f64 + overhead;
                        modes.push((Mode::Parallel, serial * amdahl));
                    }
                    for (mode, summary) in modes {
                        let runs: Vec<f64> = (0..spec.repetitions)
                            .map(|_| summary * (0.01 * unit.sample(&mut rng)).exp())
                            .collect();
                        out.timings.push(Measurement::new(
                            key.clone(),
                            cand.name.as_str(),
                            mode,
                            arch.clone(),
                            runs,
                            SummaryStat::Median,
                        )?);
                    }
                }
            }
        }
    }
    Ok(out)
}
