//! Reverse attention decoder.
//!
//! Pyramid features are reduced to a common width, the coarsest level
//! yields an initial map, and three refinement stages work coarse-to-fine.
//! Each stage gates its features with the complement of the upsampled
//! coarser prediction, so refinement concentrates where that prediction
//! has not yet claimed foreground, and adds a residual correction to the
//! upsampled coarser logits.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::encoder::FeaturePyramid;
use crate::error::{invalid, Error, Result};
use crate::ops::Conv2dSpec;
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::real::Real;
use crate::ss2d::SsmConfig;
use crate::tape::{Tape, Var};
use crate::vss::VssBlock;

/// Width every pyramid level is reduced to.
pub const DECODER_CHANNELS: usize = 32;

/// Transform applied to features before reverse gating.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionMode {
    /// A VSS block.
    #[default]
    Rma,
    /// A 3×3 conv followed by relu.
    Ra,
}

/// Convolution with bias and "same" padding.
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl Conv {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, kernel: usize) -> Self {
        let bound = 1.0 / Float::sqrt((cin * kernel * kernel) as f64);
        Self {
            weight: b.uniform("weight", &[cout, cin, kernel, kernel], bound),
            bias: b.uniform("bias", &[cout], bound),
            padding: kernel / 2,
        }
    }

    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        g.conv2d(
            x,
            &g.param(self.weight),
            Some(&g.param(self.bias)),
            Conv2dSpec::new(1, self.padding),
        )
    }
}

pub enum FeatureTransform {
    Vss(VssBlock),
    Conv(Conv),
}

impl FeatureTransform {
    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            FeatureTransform::Vss(block) => block.forward(g, x),
            FeatureTransform::Conv(conv) => g.relu(&conv.forward(g, x)?),
        }
    }
}

/// `E - p` for a probability map `p`.
pub fn reverse_op<T: Real>(tape: &Tape<T>, p: &Var<T>) -> Result<Var<T>> {
    if cfg!(debug_assertions)
        && p
            .value()
            .data()
            .iter()
            .any(|&v| !(T::zero()..=T::one()).contains(&v))
    {
        return Err(invalid("reverse_op", "input outside [0, 1]"));
    }
    tape.affine(p, -T::one(), T::one())
}

pub struct StageOutput<T: Real> {
    pub logits: Var<T>,
    pub probs: Var<T>,
}

/// One refinement stage.
pub struct RmaStage {
    pub transform: FeatureTransform,
    pub refine1: Conv,
    pub refine2: Conv,
}

impl RmaStage {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, mode: AttentionMode, ssm: SsmConfig, ffn_ratio: usize) -> Self {
        let c = DECODER_CHANNELS;
        let transform = match mode {
            AttentionMode::Rma => FeatureTransform::Vss(VssBlock::new(&mut b.scope("vss"), c, ssm, ffn_ratio)),
            AttentionMode::Ra => FeatureTransform::Conv(Conv::new(&mut b.scope("ra_conv"), c, c, 3)),
        };
        Self {
            transform,
            refine1: Conv::new(&mut b.scope("refine1"), c, c, 3),
            refine2: Conv::new(&mut b.scope("refine2"), c, 1, 3),
        }
    }

    /// Refines `coarse_logits: [N, 1, h, w]` with `features: [N, 32, 2h, 2w]`.
    pub fn forward<T: Real>(
        &self,
        g: &Graph<'_, T>,
        coarse_logits: &Var<T>,
        features: &Var<T>,
    ) -> Result<StageOutput<T>> {
        let (n, _, ch, cw) = coarse_logits.value().dims4()?;
        let (fn_, _, h, w) = features.value().dims4()?;
        if n != fn_ || h != 2 * ch || w != 2 * cw {
            return Err(Error::ShapeMismatch {
                op: "rma_stage",
                expected: alloc::vec![n, DECODER_CHANNELS, 2 * ch, 2 * cw],
                got: features.shape().to_vec(),
            });
        }
        let p = g.upsample_bilinear(coarse_logits, h, w)?;
        let prob = g.sigmoid(&p)?;
        let gate = reverse_op(g, &prob)?;
        let transformed = self.transform.forward(g, features)?;
        let attended = g.mul_broadcast(&transformed, &gate)?;
        let merged = g.add(&attended, features)?;
        let hidden = g.relu(&self.refine1.forward(g, &merged)?)?;
        let p2 = self.refine2.forward(g, &hidden)?;
        let logits = g.add(&p, &p2)?;
        let probs = g.sigmoid(&logits)?;
        Ok(StageOutput { logits, probs })
    }
}

/// Per-stage logits and probabilities, coarsest (stride 32) first, plus the
/// finest probability map resized to the input resolution.
pub struct PredictionSet<T: Real> {
    pub logits: [Var<T>; 4],
    pub probs: [Var<T>; 4],
    pub final_map: Var<T>,
}

pub struct Decoder {
    pub reduce: Vec<Conv>,
    pub head: Conv,
    /// Stages for pyramid levels 3, 2, 1, in that order.
    pub stages: Vec<RmaStage>,
    pub mode: AttentionMode,
}

impl Decoder {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        channels: [usize; 4],
        mode: AttentionMode,
        ssm: SsmConfig,
        ffn_ratio: usize,
    ) -> Self {
        let reduce = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv::new(&mut b.scope(&format!("reduce{}", i + 1)), c, DECODER_CHANNELS, 3))
            .collect();
        let head = Conv::new(&mut b.scope("head"), DECODER_CHANNELS, 1, 1);
        let stages = [3, 2, 1]
            .iter()
            .map(|lvl| RmaStage::new(&mut b.scope(&format!("rma{lvl}")), mode, ssm, ffn_ratio))
            .collect();
        Self {
            reduce,
            head,
            stages,
            mode,
        }
    }

    /// 3×3 conv of every level down to [`DECODER_CHANNELS`].
    pub fn reduce_channels<T: Real>(&self, g: &Graph<'_, T>, pyr: &FeaturePyramid<T>) -> Result<[Var<T>; 4]> {
        let [a, b, c, d] = &pyr.levels;
        Ok([
            self.reduce[0].forward(g, a)?,
            self.reduce[1].forward(g, b)?,
            self.reduce[2].forward(g, c)?,
            self.reduce[3].forward(g, d)?,
        ])
    }

    /// 1×1 conv to one channel, then sigmoid.
    pub fn initial_prediction<T: Real>(&self, g: &Graph<'_, T>, r4: &Var<T>) -> Result<StageOutput<T>> {
        let logits = self.head.forward(g, r4)?;
        let probs = g.sigmoid(&logits)?;
        Ok(StageOutput { logits, probs })
    }

    /// Full decoding; `out_h × out_w` is the input image resolution.
    pub fn decode<T: Real>(
        &self,
        g: &Graph<'_, T>,
        pyr: &FeaturePyramid<T>,
        out_h: usize,
        out_w: usize,
    ) -> Result<PredictionSet<T>> {
        let reduced = self.reduce_channels(g, pyr)?;
        let initial = self.initial_prediction(g, &reduced[3])?;
        let mut logits = Vec::with_capacity(4);
        let mut probs = Vec::with_capacity(4);
        let mut current = initial.logits.clone();
        logits.push(initial.logits);
        probs.push(initial.probs);
        for (stage, features) in self.stages.iter().zip([&reduced[2], &reduced[1], &reduced[0]]) {
            let out = stage.forward(g, &current, features)?;
            current = out.logits.clone();
            logits.push(out.logits);
            probs.push(out.probs);
        }
        let final_map = g.upsample_bilinear(&probs[3], out_h, out_w)?;
        let to_array = |v: Vec<Var<T>>| -> Result<[Var<T>; 4]> {
            v.try_into().map_err(|_| invalid("decode", "expected four stages"))
        };
        Ok(PredictionSet {
            logits: to_array(logits)?,
            probs: to_array(probs)?,
            final_map,
        })
    }
}
