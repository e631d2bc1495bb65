//! Vision state-space block: pre-norm SS2D and a pointwise feed-forward
//! network, each wrapped in a residual connection.

use crate::error::Result;
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::real::Real;
use crate::ss2d::{Ss2d, SsmConfig};
use crate::tape::Var;

pub struct VssBlock {
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    pub ss2d: Ss2d,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
    pub channels: usize,
}

impl VssBlock {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        channels: usize,
        ssm: SsmConfig,
        ffn_ratio: usize,
    ) -> Self {
        let hidden = ffn_ratio * channels;
        Self {
            norm1_gamma: b.ones("norm1.gamma", &[channels]),
            norm1_beta: b.zeros("norm1.beta", &[channels]),
            ss2d: Ss2d::new(&mut b.scope("ss2d"), channels, ssm),
            norm2_gamma: b.ones("norm2.gamma", &[channels]),
            norm2_beta: b.zeros("norm2.beta", &[channels]),
            fc1_weight: b.trunc_normal("ffn.fc1.weight", &[hidden, channels], 0.02),
            fc1_bias: b.zeros("ffn.fc1.bias", &[hidden]),
            fc2_weight: b.trunc_normal("ffn.fc2.weight", &[channels, hidden], 0.02),
            fc2_bias: b.zeros("ffn.fc2.bias", &[channels]),
            channels,
        }
    }

    /// `y1 = x + ss2d(norm1(x))`, `y = y1 + ffn(norm2(y1))`.
    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let eps = T::lit(1e-5);
        let n1 = g.layer_norm_axis(x, &g.param(self.norm1_gamma), &g.param(self.norm1_beta), 1, eps)?;
        let y1 = g.add(x, &self.ss2d.forward(g, &n1)?)?;
        let n2 =
            g.layer_norm_axis(&y1, &g.param(self.norm2_gamma), &g.param(self.norm2_beta), 1, eps)?;
        let hidden = g.linear_axis(&n2, &g.param(self.fc1_weight), Some(&g.param(self.fc1_bias)), 1)?;
        let hidden = g.silu(&hidden)?;
        let ffn = g.linear_axis(&hidden, &g.param(self.fc2_weight), Some(&g.param(self.fc2_bias)), 1)?;
        g.add(&y1, &ffn)
    }
}

/// Applies `blocks` in order; an empty stack is the identity.
pub fn forward_stack<T: Real>(g: &Graph<'_, T>, blocks: &[VssBlock], x: &Var<T>) -> Result<Var<T>> {
    let mut h = x.clone();
    for block in blocks {
        h = block.forward(g, &h)?;
    }
    Ok(h)
}
