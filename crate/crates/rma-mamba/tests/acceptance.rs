//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if
//! any fails. Runs as a plain binary (`harness = false`).
//!
//! The training smoke run dominates the wall time (several minutes on one
//! core).

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use oracles::{brute_metrics, naive_scan, random_mask, random_tensor, rma_stage, stage_values, ScanCase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rma_core::data::synth_dataset;
use rma_core::decoder::{reverse_op, RmaStage, DECODER_CHANNELS};
use rma_core::loss::{bce_loss, dice_loss};
use rma_core::metrics::{compute_metrics, confusion_counts, MetricsRecord};
use rma_core::params::{Graph, ParamBuilder, ParamStore};
use rma_core::ss2d::scan::{scan_parallel, scan_sequential, ScanProblem};
use rma_core::ss2d::{expand_routes, merge_routes, ScanRoute, SsmConfig};
use rma_core::train::{evaluate, train, TrainConfig};
use rma_core::{AttentionMode, Model, ModelConfig, Tape, Tensor, Variant};
use rma_mamba::bench::{bench_scan, slope_ratio, BenchConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_rma-mamba"))
        .arg("gradcheck")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let failed: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    let checks = text.lines().filter(|l| l.starts_with("ok") || l.starts_with("FAIL")).count();
    let e2e = text.lines().any(|l| l.starts_with("ok") && l.contains("end-to-end"));
    check(
        out.status.success() && failed.is_empty() && e2e && elapsed < Duration::from_secs(300),
        format!(
            "{checks} checks incl. end-to-end 64x64, exit {:?}, {:.0?} (limit 5 min){}",
            out.status.code(),
            elapsed,
            if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
        ),
    )
}

fn scan_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst_naive: f64 = 0.0;
    for _ in 0..100 {
        let (n, d, s, l) = (
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..5),
            rng.random_range(1..=64),
        );
        let case = ScanCase::random(&mut rng, n, d, s, l);
        worst_naive = worst_naive.max(max_diff(&scan_sequential(&case.problem(), false).y, &naive_scan(&case.problem())));
    }
    let mut worst_par: f64 = 0.0;
    for _ in 0..100 {
        let (d, s, l) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..=256));
        let case = ScanCase::random(&mut rng, 1, d, s, l);
        let seq = scan_sequential(&case.problem(), false).y;
        worst_par = worst_par.max(max_diff(&seq, &scan_parallel(&case.problem(), false).y));
    }
    let mut cumsum_exact = true;
    for len in [1, 5, 64, 256] {
        let u: Vec<f64> = (0..len).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let ones = vec![1.0; len];
        let p = ScanProblem { u: &u, delta: &ones, a: &[0.0], b: &ones, c: &ones, d: &[0.0], batch: 1, channels: 1, state: 1, len };
        let want: Vec<f64> = u.iter().scan(0.0, |acc, &x| { *acc += x; Some(*acc) }).collect();
        cumsum_exact &= scan_sequential(&p, false).y == want && scan_parallel(&p, false).y == want;
    }
    check(
        worst_naive <= 1e-5 && worst_par <= 1e-5 && cumsum_exact,
        format!("seq vs naive {worst_naive:.1e}, par vs seq {worst_par:.1e} (limit 1e-5), cumsum exact: {cumsum_exact}"),
    )
}

fn route_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut trips = 0;
    for h in 1..=8 {
        for w in 1..=8 {
            let x = random_tensor(&mut rng, &[2, 3, h, w], 1.0);
            for route in ScanRoute::ALL {
                if route.unflatten(&route.flatten(&x).map_err(|e| e.to_string())?, h, w).map_err(|e| e.to_string())? != x {
                    return Err(format!("{route:?} round trip differs at {h}x{w}"));
                }
                trips += 1;
            }
            let tape = Tape::inference();
            let v = tape.constant(x.clone());
            let merged = merge_routes(&tape, &expand_routes(&tape, &v).map_err(|e| e.to_string())?, h, w)
                .map_err(|e| e.to_string())?;
            if merged.value() != &x.map(|v| 4.0 * v) {
                return Err(format!("merge of expand is not exactly 4x at {h}x{w}"));
            }
        }
    }
    Ok(format!("{trips} exact round trips and 64 exact 4x merges over H,W in [1,8]"))
}

fn shape_contract() -> Outcome {
    let model: Model<f32> = Model::new(ModelConfig::tiny(), 0).map_err(|e| e.to_string())?;
    let tape = Tape::inference();
    let g = Graph::new(&tape, &model.params);
    let x = g.constant(Tensor::from_fn(&[1, 3, 256, 256], |i| (i % 97) as f32 / 97.0));
    let pyr = model.features(&g, &x).map_err(|e| e.to_string())?;
    let hwc: Vec<(usize, usize, usize)> = pyr.levels.iter().map(|l| (l.shape()[2], l.shape()[3], l.shape()[1])).collect();
    let preds = model.decoder.decode(&g, &pyr, 256, 256).map_err(|e| e.to_string())?;
    let maps: Vec<usize> = preds.probs.iter().map(|p| p.shape()[2]).collect();
    let fin = preds.final_map.shape().to_vec();
    check(
        hwc == [(64, 64, 96), (32, 32, 192), (16, 16, 384), (8, 8, 768)] && maps == [8, 16, 32, 64] && fin == [1, 1, 256, 256],
        format!("pyramid {hwc:?}, maps {maps:?}, final {fin:?}"),
    )
}

fn rma_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut collapse = true;
    for seed in 0..16u64 {
        let mode = if seed % 2 == 0 { AttentionMode::Rma } else { AttentionMode::Ra };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ssm = SsmConfig { d_state: 4, ..SsmConfig::default() };
        let stage = RmaStage::new(&mut ParamBuilder::new(&mut store, &mut rng), mode, ssm, 2);
        for t in store.values_mut() {
            let noise = random_tensor(&mut rng, t.shape(), 0.1);
            *t = t.zip_map(&noise, |a, b| a + b).map_err(|e| e.to_string())?;
        }
        let coarse = random_tensor(&mut rng, &[1, 1, 2, 2], 3.0);
        let f = random_tensor(&mut rng, &[1, DECODER_CHANNELS, 4, 4], 1.0);
        let tape = Tape::inference();
        let g = Graph::new(&tape, &store);
        let run = |c: &Tensor<f64>| stage.forward(&g, &g.constant(c.clone()), &g.constant(f.clone())).map(|o| stage_values(&o));
        let (logits, probs) = run(&coarse).map_err(|e| e.to_string())?;
        let (ol, op) = rma_stage(&stage, &store, &coarse, &f);
        worst = worst.max(max_diff(logits.data(), ol.data())).max(max_diff(probs.data(), op.data()));

        // Gate fully closed: the result is p + p2(f) alone.
        let shut = Tensor::full(&[1, 1, 2, 2], 50.0);
        let (logits, _) = run(&shut).map_err(|e| e.to_string())?;
        let fv = g.constant(f.clone());
        let hidden = g.relu(&stage.refine1.forward(&g, &fv).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let p2 = stage.refine2.forward(&g, &hidden).map_err(|e| e.to_string())?;
        let p = g.upsample_bilinear(&g.constant(shut), 4, 4).map_err(|e| e.to_string())?;
        collapse &= g.add(&p, &p2).map_err(|e| e.to_string())?.value() == &logits;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let p = Tensor::from_fn(&[4, 1, 8, 8], |_| f64::from(rng.random_range(0u32..=4096)) / 4096.0);
    let tape = Tape::inference();
    let twice = reverse_op(&tape, &reverse_op(&tape, &tape.constant(p.clone())).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let involution = twice.value() == &p;
    check(
        worst <= 1e-5 && involution && collapse,
        format!("oracle max diff {worst:.1e} over 16 instances (limit 1e-5), involution exact: {involution}, P=1 collapse: {collapse}"),
    )
}

fn loss_metric_oracles() -> Outcome {
    let tape = Tape::<f64>::inference();
    let eval = |f: fn(&Tape<f64>, &rma_core::Var<f64>, &Tensor<f64>) -> rma_core::Result<rma_core::Var<f64>>, p: Tensor<f64>, y: Tensor<f64>| {
        f(&tape, &tape.constant(p), &y).map(|v| v.value().data()[0])
    };
    let y = Tensor::from_fn(&[1, 1, 8, 8], |i| (i % 3 == 0) as u8 as f64);
    let cases = [
        ("bce(0.5)", eval(bce_loss, Tensor::full(&[1, 1, 8, 8], 0.5), y.clone()), std::f64::consts::LN_2),
        ("dice(0.5 | ones)", eval(dice_loss, Tensor::full(&[64], 0.5), Tensor::ones(&[64])), 1.0 / 3.0),
        ("dice(y | y)", eval(dice_loss, y.clone(), y.clone()), 0.0),
        ("dice(disjoint)", eval(dice_loss, y.map(|v| 1.0 - v), y.clone()), 1.0),
    ];
    let mut worst_closed: f64 = 0.0;
    for (name, got, want) in &cases {
        let got = got.as_ref().map_err(|e| format!("{name}: {e}"))?;
        worst_closed = worst_closed.max((got - want).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut worst_frac, mut hd_exact, mut identity) = (0.0f64, true, true);
    for _ in 0..200 {
        let pred = random_mask(&mut rng, 32, 32);
        let gt = random_mask(&mut rng, 32, 32);
        let got = compute_metrics(&pred, &gt).map_err(|e| e.to_string())?.values();
        let want = brute_metrics(&pred, &gt);
        for k in 0..5 {
            worst_frac = worst_frac.max((got[k] - want[k]).abs());
        }
        hd_exact &= got[5] == want[5];
        let c = confusion_counts(&pred, &gt).map_err(|e| e.to_string())?;
        identity &= (c.dice() - 2.0 * c.iou() / (1.0 + c.iou())).abs() <= 1e-12;
    }
    check(
        worst_closed <= 1e-6 && worst_frac <= 1e-9 && hd_exact && identity,
        format!(
            "closed forms max err {worst_closed:.1e} (limit 1e-6); 200 pairs: {} max err {worst_frac:.1e} (limit 1e-9), HD exact: {hd_exact}, Dice-IoU identity: {identity}",
            MetricsRecord::COLUMNS[..5].join("/")
        ),
    )
}

/// Desk Tiny preset tuned for the overfitting run; see the README.
fn smoke_config(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        image_size: 96,
        max_epochs,
        plateau_patience: 20,
        augment: false,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn training_smoke() -> Outcome {
    let data = synth_dataset(0, 8, 96).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut model: Model<f32> = Model::new(ModelConfig::desk(Variant::Tiny), 0).map_err(|e| e.to_string())?;
    let out = train(&mut model, &smoke_config(200), &data, &data, |r| {
        if r.epoch % 25 == 0 {
            eprintln!("    smoke epoch {:>3}  loss {:.4}  {:.0?}", r.epoch, r.train_loss, start.elapsed());
        }
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let dice = evaluate(&model, &data).map_err(|e| e.to_string())?.mean.dice;

    let mut again: Model<f32> = Model::new(ModelConfig::desk(Variant::Tiny), 0).map_err(|e| e.to_string())?;
    let short = train(&mut again, &smoke_config(3), &data, &data, |_| {}).map_err(|e| e.to_string())?;
    let reproducible = short.history[..] == out.history[..3];
    check(
        dice > 0.95 && out.history.len() <= 200 && elapsed < Duration::from_secs(900) && reproducible,
        format!(
            "train Dice {dice:.4} (need > 0.95) after {} epochs in {elapsed:.0?} (limit 15 min); seed-reproducible history: {reproducible}",
            out.history.len()
        ),
    )
}

fn ablation_parity() -> Outcome {
    let data = synth_dataset(5, 2, 32).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { max_epochs: 1, batch_size: 2, image_size: 32, lr: 1e-3, ..TrainConfig::default() };
    let mut counts = Vec::new();
    for variant in [Variant::Tiny, Variant::Small] {
        for attention in [AttentionMode::Ra, AttentionMode::Rma] {
            for extra in [0, 1] {
                let mut mc = ModelConfig::desk(variant);
                mc.attention = attention;
                mc.n_extra_vss = extra;
                let mut model: Model<f32> = Model::new(mc, 0).map_err(|e| e.to_string())?;
                let out = train(&mut model, &cfg, &data, &data, |_| {}).map_err(|e| format!("{variant:?}/{attention:?}/N={extra}: {e}"))?;
                if out.history.len() != 1 || !out.history[0].train_loss.is_finite() {
                    return Err(format!("{variant:?}/{attention:?}/N={extra} did not train"));
                }
                counts.push(((variant, attention, extra), model.num_parameters()));
            }
        }
    }
    let distinct = counts.iter().map(|c| c.1).collect::<BTreeSet<_>>().len() == 8;
    let get = |v, a, n| counts.iter().find(|c| c.0 == (v, a, n)).map(|c| c.1).unwrap_or(0);
    let mut ordered = true;
    for a in [AttentionMode::Ra, AttentionMode::Rma] {
        for v in [Variant::Tiny, Variant::Small] {
            ordered &= get(v, a, 1) > get(v, a, 0);
        }
        for n in [0, 1] {
            ordered &= get(Variant::Small, a, n) > get(Variant::Tiny, a, n);
        }
    }
    let list: Vec<String> = counts
        .iter()
        .map(|((v, a, n), c)| format!("{}-{:?}-N{n}={c}", if *v == Variant::Tiny { "T" } else { "S" }, a))
        .collect();
    check(distinct && ordered, format!("8 configs trained 1 epoch; {}; distinct: {distinct}, monotone: {ordered}", list.join(" ")))
}

fn scan_performance() -> Outcome {
    let rows = bench_scan(&[1024, 2048, 4096], &BenchConfig::default());
    let ratio = slope_ratio(&rows);
    let per: Vec<String> = rows.iter().map(|r| format!("L={} {:.2} ns/el", r.len, r.sequential_ns)).collect();
    check(ratio <= 2.0, format!("{}; slope ratio {ratio:.3} (limit 2)", per.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("scan oracle", scan_oracle),
        ("route algebra", route_algebra),
        ("shape contract", shape_contract),
        ("RMA correctness", rma_correctness),
        ("loss/metric oracles", loss_metric_oracles),
        ("ablation parity", ablation_parity),
        ("scan performance", scan_performance),
        ("training smoke test", training_smoke),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
