//! The full segmentation network and its configuration.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::decoder::{AttentionMode, PredictionSet};
use crate::decoder::Decoder;
use crate::encoder::{Encoder, EncoderConfig, FeaturePyramid};
use crate::error::{Error, Result};
use crate::params::{Graph, ParamBuilder, ParamStore};
use crate::real::Real;
use crate::ss2d::SsmConfig;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vss::{forward_stack, VssBlock};

/// Backbone size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Tiny,
    Small,
}

impl Variant {
    /// Stage depths of this variant's backbone.
    pub fn depths(self) -> [usize; 4] {
        match self {
            Variant::Tiny => [2, 2, 2, 2],
            Variant::Small => [2, 2, 4, 2],
        }
    }

    /// Additional VSS blocks per pyramid level.
    pub fn extra_vss(self) -> usize {
        match self {
            Variant::Tiny => 0,
            Variant::Small => 1,
        }
    }
}

/// Which prediction maps the training loss supervises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Supervision {
    /// All four stage outputs, each resized to the target.
    #[default]
    Deep,
    /// Only the full-resolution output.
    FinalOnly,
}

/// Desk-scale width divisor: `[96, 192, 384, 768]` becomes `[12, 24, 48, 96]`.
pub const DESK_DIVISOR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_extra_vss: usize,
    pub attention: AttentionMode,
    pub encoder: EncoderConfig,
    pub ssm: SsmConfig,
    pub ffn_ratio: usize,
    pub supervision: Supervision,
}

impl ModelConfig {
    /// Full-width configuration of a variant.
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            n_extra_vss: variant.extra_vss(),
            attention: AttentionMode::Rma,
            encoder: EncoderConfig {
                depths: variant.depths(),
                ..EncoderConfig::default()
            },
            ssm: SsmConfig::default(),
            ffn_ratio: 4,
            supervision: Supervision::Deep,
        }
    }

    pub fn tiny() -> Self {
        Self::new(Variant::Tiny)
    }

    pub fn small() -> Self {
        Self::new(Variant::Small)
    }

    /// Variant defaults at desk scale ([`DESK_DIVISOR`]).
    pub fn desk(variant: Variant) -> Self {
        let mut cfg = Self::new(variant);
        cfg.encoder.divisor = DESK_DIVISOR;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.ssm.d_state == 0 || self.ssm.expansion == 0 {
            return Err(Error::Config("d_state and expansion must be positive".into()));
        }
        if self.ssm.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "depthwise kernel must be odd, got {}",
                self.ssm.conv_kernel
            )));
        }
        if self.ffn_ratio == 0 {
            return Err(Error::Config("ffn_ratio must be positive".into()));
        }
        Ok(())
    }
}

pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    /// Additional VSS blocks for each pyramid level.
    pub extra: Vec<Vec<VssBlock>>,
    pub decoder: Decoder,
}

impl<T: Real> Model<T> {
    /// Builds the network with freshly initialized parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let channels = config.encoder.channels();
        let encoder = Encoder::new(&mut b.scope("encoder"), &config.encoder, 3, config.ssm, config.ffn_ratio);
        let extra = channels
            .iter()
            .enumerate()
            .map(|(lvl, &c)| {
                (0..config.n_extra_vss)
                    .map(|j| {
                        VssBlock::new(
                            &mut b.scope(&format!("extra{}.block{j}", lvl + 1)),
                            c,
                            config.ssm,
                            config.ffn_ratio,
                        )
                    })
                    .collect()
            })
            .collect();
        let decoder = Decoder::new(
            &mut b.scope("decoder"),
            channels,
            config.attention,
            config.ssm,
            config.ffn_ratio,
        );
        Ok(Self {
            config,
            params,
            encoder,
            extra,
            decoder,
        })
    }

    /// Builds the network for `config` and loads `params` into it by name.
    pub fn with_params(config: ModelConfig, params: &ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Config(format!(
                "config expects {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params.assign_from(params)?;
        Ok(model)
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Result<Model<U>> {
        Model::with_params(self.config, &self.params.cast())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Encoder pyramid after the additional VSS blocks.
    pub fn features(&self, g: &Graph<'_, T>, image: &Var<T>) -> Result<FeaturePyramid<T>> {
        let pyr = self.encoder.encode(g, image)?;
        let [a, b, c, d] = &pyr.levels;
        Ok(FeaturePyramid {
            levels: [
                forward_stack(g, &self.extra[0], a)?,
                forward_stack(g, &self.extra[1], b)?,
                forward_stack(g, &self.extra[2], c)?,
                forward_stack(g, &self.extra[3], d)?,
            ],
        })
    }

    /// `image: [N, 3, H, W]` with `H`, `W` multiples of 32.
    pub fn forward(&self, g: &Graph<'_, T>, image: &Var<T>) -> Result<PredictionSet<T>> {
        let (_, c, h, w) = image.value().dims4()?;
        if c != 3 {
            return Err(Error::ShapeMismatch {
                op: "model input",
                expected: alloc::vec![image.shape()[0], 3, h, w],
                got: image.shape().to_vec(),
            });
        }
        let pyr = self.features(g, image)?;
        self.decoder.decode(g, &pyr, h, w)
    }

    /// Inference without gradient tracking; returns the final probability
    /// map and the four stage probability maps (coarsest first).
    pub fn predict(&self, image: &Tensor<T>) -> Result<(Tensor<T>, [Tensor<T>; 4])> {
        let tape = Tape::inference();
        let g = Graph::new(&tape, &self.params);
        let x = g.constant(image.clone());
        let preds = self.forward(&g, &x)?;
        let side = preds.probs.each_ref().map(|p| p.value().clone());
        Ok((preds.final_map.value().clone(), side))
    }
}
