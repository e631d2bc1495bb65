//! Hierarchical backbone: a stride-4 patch-embedding stem, then four
//! stages of VSS blocks, each stage after the first entered through a
//! stride-2 downsampling layer.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::ops::Conv2dSpec;
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::real::Real;
use crate::ss2d::SsmConfig;
use crate::tape::Var;
use crate::vss::{forward_stack, VssBlock};

/// Total downsampling factor of the deepest pyramid level.
pub const MAX_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Channel ladder before dividing by `divisor`.
    pub ladder: [usize; 4],
    pub depths: [usize; 4],
    /// Width divisor for desk-scale runs; `1` keeps the full ladder.
    pub divisor: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            ladder: [96, 192, 384, 768],
            depths: [2, 2, 2, 2],
            divisor: 1,
        }
    }
}

impl EncoderConfig {
    pub fn channels(&self) -> [usize; 4] {
        self.ladder.map(|c| c / self.divisor.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.divisor == 0 {
            return Err(Error::Config("desk divisor must be at least 1".into()));
        }
        for (i, &c) in self.ladder.iter().enumerate() {
            if c == 0 || c % self.divisor != 0 {
                return Err(Error::Config(format!(
                    "channel {c} of stage {} is not a positive multiple of divisor {}",
                    i + 1,
                    self.divisor
                )));
            }
        }
        if let Some(i) = self.depths.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("stage {} has depth 0", i + 1)));
        }
        Ok(())
    }
}

/// Encoder outputs at strides 4, 8, 16, 32 (finest first).
pub struct FeaturePyramid<T: Real> {
    pub levels: [Var<T>; 4],
}

/// Fails unless both extents are multiples of [`MAX_STRIDE`].
pub fn check_input_extent(h: usize, w: usize) -> Result<()> {
    for (name, v) in [("height", h), ("width", w)] {
        if v == 0 || v % MAX_STRIDE != 0 {
            return Err(Error::Config(format!(
                "input {name} {v} is not a positive multiple of {MAX_STRIDE}"
            )));
        }
    }
    Ok(())
}

pub struct ConvNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub kernel: usize,
}

impl ConvNorm {
    fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, kernel: usize) -> Self {
        let bound = 1.0 / Float::sqrt((cin * kernel * kernel) as f64);
        Self {
            weight: b.uniform("weight", &[cout, cin, kernel, kernel], bound),
            bias: b.uniform("bias", &[cout], bound),
            gamma: b.ones("norm.gamma", &[cout]),
            beta: b.zeros("norm.beta", &[cout]),
            kernel,
        }
    }

    /// Non-overlapping `kernel × kernel` conv followed by channel layer norm.
    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = g.conv2d(
            x,
            &g.param(self.weight),
            Some(&g.param(self.bias)),
            Conv2dSpec::new(self.kernel, 0),
        )?;
        g.layer_norm_axis(&y, &g.param(self.gamma), &g.param(self.beta), 1, T::lit(1e-5))
    }
}

pub struct Stage {
    pub downsample: Option<ConvNorm>,
    pub blocks: Vec<VssBlock>,
}

pub struct Encoder {
    pub stem: ConvNorm,
    pub stages: Vec<Stage>,
    pub channels: [usize; 4],
}

impl Encoder {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        cfg: &EncoderConfig,
        in_channels: usize,
        ssm: SsmConfig,
        ffn_ratio: usize,
    ) -> Self {
        let channels = cfg.channels();
        let stem = ConvNorm::new(&mut b.scope("stem"), in_channels, channels[0], 4);
        let stages = (0..4)
            .map(|i| {
                let mut sb = b.scope(&format!("stage{}", i + 1));
                let downsample =
                    (i > 0).then(|| ConvNorm::new(&mut sb.scope("down"), channels[i - 1], channels[i], 2));
                let blocks = (0..cfg.depths[i])
                    .map(|j| VssBlock::new(&mut sb.scope(&format!("block{j}")), channels[i], ssm, ffn_ratio))
                    .collect();
                Stage { downsample, blocks }
            })
            .collect();
        Self {
            stem,
            stages,
            channels,
        }
    }

    /// `[N, 3, H, W]` to `[N, C1, H/4, W/4]`.
    pub fn stem<T: Real>(&self, g: &Graph<'_, T>, image: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = image.value().dims4()?;
        check_input_extent(h, w)?;
        self.stem.forward(g, image)
    }

    /// Halves the spatial extent of stage `stage`'s input (1-based, `2..=4`).
    pub fn downsample<T: Real>(&self, g: &Graph<'_, T>, stage: usize, x: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = x.value().dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("cannot downsample odd extent {h}x{w}")));
        }
        let layer = stage
            .checked_sub(1)
            .and_then(|i| self.stages.get(i))
            .and_then(|s| s.downsample.as_ref())
            .ok_or_else(|| Error::Config(format!("stage {stage} has no downsampling layer")))?;
        layer.forward(g, x)
    }

    pub fn encode<T: Real>(&self, g: &Graph<'_, T>, image: &Var<T>) -> Result<FeaturePyramid<T>> {
        let mut x = self.stem(g, image)?;
        let mut levels = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                x = self.downsample(g, i + 1, &x)?;
            }
            x = forward_stack(g, &stage.blocks, &x)?;
            levels.push(x.clone());
        }
        let levels: [Var<T>; 4] = levels
            .try_into()
            .map_err(|_| Error::Config("encoder must have four stages".into()))?;
        Ok(FeaturePyramid { levels })
    }
}
