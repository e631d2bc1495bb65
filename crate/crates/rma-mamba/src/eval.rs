//! Parallel evaluation and CSV reports.

use std::fmt::Write;
use std::path::Path;

use rma_core::data::Sample;
use rma_core::metrics::MetricsRecord;
use rma_core::train::{evaluate, EpochRecord, Evaluation};
use rma_core::Model;

use crate::error::Result;
use crate::fsutil::atomic_write;

/// [`evaluate`] split over `threads` workers; the result does not depend on
/// the thread count.
pub fn evaluate_parallel(model: &Model<f32>, samples: &[Sample], threads: usize) -> Result<Evaluation> {
    let threads = threads.clamp(1, samples.len().max(1));
    if threads == 1 {
        return Ok(evaluate(model, samples)?);
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<rma_core::Result<Evaluation>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| s.spawn(move || evaluate(model, part)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut per_image = Vec::with_capacity(samples.len());
    for p in parts {
        per_image.extend(p?.per_image);
    }
    let mean = MetricsRecord::mean(&per_image).expect("non-empty");
    Ok(Evaluation { per_image, mean })
}

pub fn metrics_header() -> String {
    MetricsRecord::COLUMNS.join(",")
}

fn metrics_row(r: &MetricsRecord) -> String {
    r.values().map(|v| format!("{v:.6}")).join(",")
}

/// Header and a single aggregate row.
pub fn aggregate_csv(mean: &MetricsRecord) -> String {
    format!("{}\n{}\n", metrics_header(), metrics_row(mean))
}

/// One row per image, keyed by `ids`.
pub fn per_image_csv(ids: &[String], records: &[MetricsRecord]) -> String {
    let mut s = format!("image,{}\n", metrics_header());
    for (id, r) in ids.iter().zip(records) {
        writeln!(s, "{id},{}", metrics_row(r)).expect("write to string");
    }
    s
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        writeln!(s, "{},{:.8},{:.8},{:e}", r.epoch, r.train_loss, r.val_loss, r.lr).expect("write to string");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_order() {
        assert_eq!(metrics_header(), "Dice,mIoU,Recall,Precision,F2,HD");
        let csv = aggregate_csv(&MetricsRecord::default());
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn history_rows() {
        let h = [EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            lr: 1e-4,
        }];
        assert_eq!(history_csv(&h), "epoch,train_loss,val_loss,lr\n1,0.50000000,0.25000000,1e-4\n");
    }
}
