//! Training loop and evaluation.

mod adam;
pub mod augment;
mod schedule;

pub use adam::AdamState;
pub use augment::{augment, AugmentParams};
pub use schedule::{EarlyStopping, Plateau};

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{stack_batch, Sample};
use crate::error::{Error, Result};
use crate::loss::combined_loss;
use crate::metrics::{compute_metrics, BinaryMask, MetricsRecord, THRESHOLD};
use crate::model::Model;
use crate::params::{Graph, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Random flips and rotation of every training sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            plateau_factor: 0.1,
            plateau_patience: 5,
            max_epochs: 500,
            early_stop_patience: 50,
            batch_size: 16,
            image_size: 256,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        crate::encoder::check_input_extent(self.image_size, self.image_size)
    }
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub optimizer: AdamState<f32>,
}

fn check_dataset(name: &str, samples: &[Sample], size: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{name} split is empty")));
    }
    for (i, s) in samples.iter().enumerate() {
        if (s.height(), s.width()) != (size, size) {
            return Err(Error::Dataset(format!(
                "{name} sample {i} is {}x{}, expected {size}x{size}",
                s.height(),
                s.width()
            )));
        }
    }
    Ok(())
}

/// Mean combined loss over `samples` without gradient tracking.
pub fn dataset_loss(model: &Model<f32>, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = stack_batch(&refs)?;
        let tape = Tape::inference();
        let g = Graph::new(&tape, &model.params);
        let preds = model.forward(&g, &g.constant(x))?;
        let loss = combined_loss(&g, &preds, &y, model.config.supervision)?;
        total += loss.value().data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Loss of one optimisation step on a batch; updates `model` in place.
fn train_step(model: &mut Model<f32>, adam: &mut AdamState<f32>, batch: &[&Sample], lr: f64) -> Result<f64> {
    let (x, y) = stack_batch(batch)?;
    let tape = Tape::new();
    let grads = {
        let g = Graph::new(&tape, &model.params);
        let preds = model.forward(&g, &g.constant(x))?;
        let loss = combined_loss(&g, &preds, &y, model.config.supervision)?;
        let value = loss.value().data()[0] as f64;
        let mut grads = g.backward(&loss)?;
        (value, g.param_grads(&mut grads))
    };
    tape.clear();
    adam.step(&mut model.params, &grads.1, lr)?;
    Ok(grads.0)
}

/// Trains `model` on `train_set`, monitoring the combined loss on
/// `val_set`. On return the model holds the parameters of the epoch with
/// the lowest validation loss. `on_epoch` sees every history row as it is
/// produced.
pub fn train(
    model: &mut Model<f32>,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset("train", train_set, cfg.image_size)?;
    check_dataset("validation", val_set, cfg.image_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params);
    let mut plateau = Plateau::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.lr;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train_set[i], &mut rng)
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Sample> = batch.iter().collect();
            let loss = train_step(model, &mut adam, &refs, lr).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch },
                e => e,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sum += loss * chunk.len() as f64;
        }
        let train_loss = sum / train_set.len() as f64;
        let val_loss = dataset_loss(model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        on_epoch(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, model.params.clone()));
        }
        lr = plateau.step(val_loss, lr);
        if stopper.step(val_loss) {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
        optimizer: adam,
    })
}

/// Metrics of a prediction against its ground-truth mask, both
/// `[1, H, W]` (or any single plane).
pub fn score(pred: &Tensor<f32>, mask: &Tensor<f32>) -> Result<MetricsRecord> {
    compute_metrics(
        &BinaryMask::from_tensor(pred, THRESHOLD)?,
        &BinaryMask::from_tensor(mask, THRESHOLD)?,
    )
}

/// Per-sample metrics and their mean.
pub struct Evaluation {
    pub per_image: Vec<MetricsRecord>,
    pub mean: MetricsRecord,
}

/// Deterministic inference over `samples`, one image at a time.
pub fn evaluate(model: &Model<f32>, samples: &[Sample]) -> Result<Evaluation> {
    evaluate_with(samples, |s| {
        let x = s.image.clone().reshape(&[1, 3, s.height(), s.width()])?;
        Ok(model.predict(&x)?.0)
    })
}

/// Like [`evaluate`] with an arbitrary predictor returning a probability
/// map per sample.
pub fn evaluate_with(
    samples: &[Sample],
    mut predict: impl FnMut(&Sample) -> Result<Tensor<f32>>,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let per_image = samples
        .iter()
        .map(|s| score(&predict(s)?, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    let mean = MetricsRecord::mean(&per_image).expect("non-empty");
    Ok(Evaluation { per_image, mean })
}
