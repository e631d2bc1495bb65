//! Command-line interface.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rma_core::data::{split_indices, synth_dataset, Sample};
use rma_core::gradcheck;
use rma_core::metrics::THRESHOLD;
use rma_core::ops::bilinear_resize;
use rma_core::train::train;
use rma_core::Model;

use crate::bench::{bench_scan, slope_ratio, BenchConfig};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{pair_paths, save_dataset, DataSource};
use crate::eval::{aggregate_csv, evaluate_parallel, history_csv, per_image_csv, write_text};
use crate::fsutil::create_dir_all;
use crate::image_io::{read_image, write_mask, write_probability};

#[derive(Parser, Debug)]
#[command(name = "rma-mamba", version, about = "RMA-Mamba liver segmentation: train, evaluate, predict")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write its best checkpoint and loss history.
    Train {
        /// key=value configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory, or synth:SEED:N for generated data.
        #[arg(long)]
        data: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write aggregate metrics as CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory, or synth:SEED:N.
        #[arg(long)]
        data: String,
        #[arg(long)]
        csv: PathBuf,
        /// Optional per-image metrics CSV.
        #[arg(long)]
        per_image: Option<PathBuf>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Segment one image; writes a {0,255} mask and the four stage maps.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output mask (.png or .pgm). Stage maps go next to it as
        /// <stem>_p4 .. <stem>_p1.
        #[arg(long)]
        mask_out: PathBuf,
    },
    /// Run the finite-difference gradient suite; non-zero exit on failure.
    Gradcheck,
    /// Time the sequential and parallel selective scan.
    BenchScan {
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        state: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Write a synthetic dataset to disk.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, data, out } => cmd_train(&config, &data, &out),
        Command::Eval {
            checkpoint,
            data,
            csv,
            per_image,
            threads,
        } => cmd_eval(&checkpoint, &data, &csv, per_image.as_deref(), threads),
        Command::Predict {
            checkpoint,
            image,
            mask_out,
        } => cmd_predict(&checkpoint, &image, &mask_out),
        Command::Gradcheck => cmd_gradcheck(),
        Command::BenchScan {
            lengths,
            channels,
            state,
            repeats,
        } => {
            let cfg = BenchConfig {
                channels,
                state,
                repeats,
                ..BenchConfig::default()
            };
            cmd_bench(&lengths, &cfg)
        }
        Command::Synth { seed, n, out, size } => {
            let samples = synth_dataset(seed, n, size)?;
            save_dataset(&out, &samples)?;
            println!("wrote {n} pairs to {}", out.display());
            Ok(())
        }
    }
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn cmd_train(config: &Path, data: &str, out: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = RunConfig::parse(&text).with_context(|| format!("parsing {}", config.display()))?;
    let samples = DataSource::parse(data)?.load(cfg.train.image_size)?;
    let split = split_indices(samples.len(), cfg.train.seed);
    let (train_set, val_set, test_set) = (
        pick(&samples, &split.train),
        pick(&samples, &split.val),
        pick(&samples, &split.test),
    );
    create_dir_all(out)?;
    let mut model: Model<f32> = Model::new(cfg.model, cfg.train.seed)?;
    eprintln!(
        "training {} parameters on {} / {} / {} samples",
        model.num_parameters(),
        train_set.len(),
        val_set.len(),
        test_set.len()
    );
    let start = Instant::now();
    let outcome = train(&mut model, &cfg.train, &train_set, &val_set, |r| {
        eprintln!(
            "epoch {:>4}  train {:.5}  val {:.5}  lr {:.1e}  {:.0?}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.lr,
            start.elapsed()
        );
    })?;
    checkpoint::save(&out.join("checkpoint.rmam"), &cfg, &model.params, Some(&outcome.optimizer))?;
    write_text(&out.join("history.csv"), &history_csv(&outcome.history))?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    eprintln!(
        "best epoch {} (val loss {:.5}){}",
        outcome.best_epoch,
        outcome.best_val_loss,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    if !test_set.is_empty() {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let eval = evaluate_parallel(&model, &test_set, threads)?;
        write_text(&out.join("test_metrics.csv"), &aggregate_csv(&eval.mean))?;
    }
    println!("{}", out.join("checkpoint.rmam").display());
    Ok(())
}

fn cmd_eval(
    ckpt: &Path,
    data: &str,
    csv: &Path,
    per_image: Option<&Path>,
    threads: Option<usize>,
) -> anyhow::Result<()> {
    let ck = checkpoint::load(ckpt, None).with_context(|| format!("loading {}", ckpt.display()))?;
    let source = DataSource::parse(data)?;
    let samples = source.load(ck.config.train.image_size)?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let eval = evaluate_parallel(&ck.model, &samples, threads)?;
    write_text(csv, &aggregate_csv(&eval.mean))?;
    if let Some(path) = per_image {
        let ids: Vec<String> = match &source {
            DataSource::Directory(root) => pair_paths(root)?.into_iter().map(|(s, _, _)| s).collect(),
            DataSource::Synthetic { .. } => (0..samples.len()).map(|i| format!("{i:04}")).collect(),
        };
        write_text(path, &per_image_csv(&ids, &eval.per_image))?;
    }
    print!("{}", aggregate_csv(&eval.mean));
    Ok(())
}

fn side_path(mask_out: &Path, suffix: &str) -> PathBuf {
    let stem = mask_out.file_stem().and_then(|s| s.to_str()).unwrap_or("mask");
    let ext = mask_out.extension().and_then(|s| s.to_str()).unwrap_or("png");
    mask_out.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn cmd_predict(ckpt: &Path, image: &Path, mask_out: &Path) -> anyhow::Result<()> {
    let ck = checkpoint::load(ckpt, None).with_context(|| format!("loading {}", ckpt.display()))?;
    let img = read_image(image)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let size = ck.config.train.image_size;
    let x = bilinear_resize(&img.reshape(&[1, 3, h, w])?, size, size)?;
    let (final_map, stages) = ck.model.predict(&x)?;
    let full = bilinear_resize(&final_map, h, w)?;
    write_mask(mask_out, &full, THRESHOLD as f32)?;
    for (i, p) in stages.iter().enumerate() {
        write_probability(&side_path(mask_out, &format!("p{}", 4 - i)), p)?;
    }
    println!("{}", mask_out.display());
    Ok(())
}

fn cmd_gradcheck() -> anyhow::Result<()> {
    let start = Instant::now();
    let mut failed = 0;
    let reports = gradcheck::run_suite(|r| {
        let status = if r.passed() { "ok  " } else { "FAIL" };
        if !r.passed() {
            failed += 1;
        }
        println!(
            "{status} {:<34} entries {:>5}  max |grad| {:.2e}  max abs err {:.2e}  worst/allowed {:.3}",
            r.name, r.checked, r.max_grad, r.max_abs_err, r.worst_ratio
        );
    })?;
    println!("{} checks in {:.1?}", reports.len(), start.elapsed());
    if failed > 0 {
        bail!("{failed} gradient checks failed");
    }
    Ok(())
}

fn cmd_bench(lengths: &[usize], cfg: &BenchConfig) -> anyhow::Result<()> {
    if lengths.is_empty() || lengths.contains(&0) {
        bail!("lengths must be positive");
    }
    let rows = bench_scan(lengths, cfg);
    println!("{:>8} {:>16} {:>16}", "L", "sequential ns/el", "parallel ns/el");
    for r in &rows {
        println!("{:>8} {:>16.3} {:>16.3}", r.len, r.sequential_ns, r.parallel_ns);
    }
    println!("sequential slope ratio {:.3}", slope_ratio(&rows));
    Ok(())
}
