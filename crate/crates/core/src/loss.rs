//! Binary cross-entropy, soft Dice and their deep-supervision combination.

use alloc::vec::Vec;

use crate::decoder::PredictionSet;
use crate::error::{shape_mismatch, Result};
use crate::model::Supervision;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;
/// Added to the Dice denominator so two empty maps do not divide by zero.
pub const DICE_EPS: f64 = 1e-7;

fn check_shapes<T: Real>(op: &'static str, pred: &Var<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(shape_mismatch(op, target.shape(), pred.shape()));
    }
    Ok(())
}

/// `-(1/n) Σ [y ln ŷ + (1 - y) ln(1 - ŷ)]`.
pub fn bce_loss<T: Real>(tape: &Tape<T>, pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    check_shapes("bce_loss", pred, target)?;
    let eps = T::lit(BCE_EPS);
    let p = tape.clamp(pred, eps, T::one() - eps)?;
    let log_p = tape.ln(&p)?;
    let log_q = tape.ln(&tape.affine(&p, -T::one(), T::one())?)?;
    let y = tape.constant(target.clone());
    let not_y = tape.constant(target.map(|v| T::one() - v));
    let terms = tape.add(&tape.mul(&y, &log_p)?, &tape.mul(&not_y, &log_q)?)?;
    tape.affine(&tape.mean(&terms)?, -T::one(), T::zero())
}

/// `1 - 2 Σ yŷ / (Σ y + Σ ŷ + ε)`.
pub fn dice_loss<T: Real>(tape: &Tape<T>, pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    check_shapes("dice_loss", pred, target)?;
    let y = tape.constant(target.clone());
    let inter = tape.sum(&tape.mul(&y, pred)?)?;
    let denom = tape.affine(&tape.sum(pred)?, T::one(), target.sum() + T::lit(DICE_EPS))?;
    let ratio = tape.div(&inter, &denom)?;
    tape.affine(&ratio, -T::lit(2.0), T::one())
}

/// Mean over the supervised maps of `bce + dice`, each map resized to the
/// target's resolution.
pub fn combined_loss<T: Real>(
    tape: &Tape<T>,
    preds: &PredictionSet<T>,
    target: &Tensor<T>,
    supervision: Supervision,
) -> Result<Var<T>> {
    let (_, _, h, w) = target.dims4()?;
    let maps: Vec<Var<T>> = match supervision {
        Supervision::FinalOnly => alloc::vec![preds.final_map.clone()],
        Supervision::Deep => {
            let mut maps = Vec::with_capacity(4);
            for p in &preds.probs[..3] {
                maps.push(tape.upsample_bilinear(p, h, w)?);
            }
            maps.push(preds.final_map.clone());
            maps
        }
    };
    map_losses(tape, &maps, target)
}

/// Mean of `bce + dice` over already-resized maps.
pub fn map_losses<T: Real>(tape: &Tape<T>, maps: &[Var<T>], target: &Tensor<T>) -> Result<Var<T>> {
    let mut total: Option<Var<T>> = None;
    for map in maps {
        let term = tape.add(&bce_loss(tape, map, target)?, &dice_loss(tape, map, target)?)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(&acc, &term)?,
        });
    }
    let total = total.ok_or_else(|| crate::error::invalid("combined_loss", "no maps"))?;
    tape.affine(&total, T::one() / T::lit(maps.len() as f64), T::zero())
}
