//! Timing of the selective scan kernels.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rma_core::ss2d::scan::{scan_parallel, scan_sequential, ScanProblem};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    /// Nanoseconds per `(channel, position)` element, best of the repeats.
    pub sequential_ns: f64,
    pub parallel_ns: f64,
}

pub struct BenchConfig {
    pub channels: usize,
    pub state: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            state: 16,
            repeats: 5,
            seed: 0,
        }
    }
}

fn best_of(repeats: usize, mut f: impl FnMut() -> f32) -> f64 {
    let mut best = f64::INFINITY;
    let mut sink = 0.0f32;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        sink += f();
        best = best.min(t.elapsed().as_nanos() as f64);
    }
    std::hint::black_box(sink);
    best
}

pub fn bench_scan(lengths: &[usize], cfg: &BenchConfig) -> Vec<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    lengths
        .iter()
        .map(|&len| {
            let (d, s) = (cfg.channels, cfg.state);
            let mut v = |n: usize, lo: f32, hi: f32| -> Vec<f32> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
            let u = v(d * len, -1.0, 1.0);
            let delta = v(d * len, 0.001, 0.1);
            let a = v(d * s, -2.0, -0.1);
            let b = v(s * len, -1.0, 1.0);
            let c = v(s * len, -1.0, 1.0);
            let dd = v(d, -1.0, 1.0);
            let p = ScanProblem {
                u: &u,
                delta: &delta,
                a: &a,
                b: &b,
                c: &c,
                d: &dd,
                batch: 1,
                channels: d,
                state: s,
                len,
            };
            let elems = (d * len) as f64;
            BenchRow {
                len,
                sequential_ns: best_of(cfg.repeats, || scan_sequential(&p, false).y[0]) / elems,
                parallel_ns: best_of(cfg.repeats, || scan_parallel(&p, false).y[0]) / elems,
            }
        })
        .collect()
}

/// Largest over smallest per-element sequential time; 1 is perfectly linear.
pub fn slope_ratio(rows: &[BenchRow]) -> f64 {
    let per: Vec<f64> = rows.iter().map(|r| r.sequential_ns).collect();
    let max = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = per.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}
