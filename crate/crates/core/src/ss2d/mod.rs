//! 2D selective scan: a feature map is read along four routes, each route
//! runs through the input-dependent state-space scan, and the results are
//! put back on the grid and summed.

mod route;
pub mod scan;

pub use route::{expand_routes, merge_routes, ScanRoute};
pub use scan::ScanMode;

use num_traits::Float;

use crate::error::Result;
use crate::ops::Conv2dSpec;
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::real::Real;
use crate::tape::Var;

/// Hyperparameters of the state-space mixer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SsmConfig {
    /// State width per channel.
    pub d_state: usize,
    /// Inner width as a multiple of the block's channel count.
    pub expansion: usize,
    /// Depthwise convolution kernel (odd).
    pub conv_kernel: usize,
    pub scan_mode: ScanMode,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            d_state: 16,
            expansion: 2,
            conv_kernel: 3,
            scan_mode: ScanMode::Sequential,
        }
    }
}

/// Parameters of one selective scan. `A = -exp(a_log)`; the step size is
/// `Δ = softplus(up(down(u)) + bias)`, a rank-`dt_rank` projection; `B`
/// and `C` are linear in the input sequence.
pub struct SsmParams {
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub delta_down: ParamId,
    pub delta_up: ParamId,
    pub delta_bias: ParamId,
    pub proj_b: ParamId,
    pub proj_c: ParamId,
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
}

impl SsmParams {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        d_inner: usize,
        d_state: usize,
        dt_rank: usize,
    ) -> Self {
        use rand::Rng;

        let a_log = b.add(
            "a_log",
            crate::Tensor::from_fn(&[d_inner, d_state], |i| T::lit(((i % d_state) + 1) as f64).ln()),
        );
        let d_skip = b.ones("d_skip", &[d_inner]);
        let delta_down = b.trunc_normal("delta_down", &[dt_rank, d_inner], 0.02);
        let delta_up = b.uniform("delta_up", &[d_inner, dt_rank], Float::powf(dt_rank as f64, -0.5));
        // Initial step sizes log-uniform in [1e-3, 1e-1], stored as the
        // inverse softplus.
        let rng = b.rng();
        let bias: alloc::vec::Vec<T> = (0..d_inner)
            .map(|_| {
                let (lo, hi) = (Float::ln(1e-3f64), Float::ln(1e-1f64));
                let dt = Float::exp(lo + rng.random_range(0.0..1.0) * (hi - lo));
                T::lit(dt + Float::ln(-Float::exp_m1(-dt)))
            })
            .collect();
        let delta_bias = b.add(
            "delta_bias",
            crate::Tensor::new(&[d_inner], bias).expect("bias length"),
        );
        let proj_b = b.trunc_normal("proj_b", &[d_state, d_inner], 0.02);
        let proj_c = b.trunc_normal("proj_c", &[d_state, d_inner], 0.02);
        Self {
            a_log,
            d_skip,
            delta_down,
            delta_up,
            delta_bias,
            proj_b,
            proj_c,
            d_inner,
            d_state,
            dt_rank,
        }
    }

    /// Runs the selective scan over `u: [N, D_inner, L]`.
    pub fn scan<T: Real>(&self, g: &Graph<'_, T>, u: &Var<T>, mode: ScanMode) -> Result<Var<T>> {
        let low = g.linear_axis(u, &g.param(self.delta_down), None, 1)?;
        let pre = g.linear_axis(&low, &g.param(self.delta_up), Some(&g.param(self.delta_bias)), 1)?;
        let delta = g.softplus(&pre)?;
        let b = g.linear_axis(u, &g.param(self.proj_b), None, 1)?;
        let c = g.linear_axis(u, &g.param(self.proj_c), None, 1)?;
        let a = g.affine(&g.exp(&g.param(self.a_log))?, -T::one(), T::zero())?;
        g.selective_scan(u, &delta, &a, &b, &c, &g.param(self.d_skip), mode)
    }
}

/// The SS2D mixer: input projection with a parallel gate, depthwise conv,
/// four-route selective scan, output norm, gating and output projection.
/// Maps `[N, C, H, W]` to the same shape.
pub struct Ss2d {
    pub in_proj: ParamId,
    pub gate_proj: ParamId,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub ssm: SsmParams,
    pub out_norm_gamma: ParamId,
    pub out_norm_beta: ParamId,
    pub out_proj: ParamId,
    pub config: SsmConfig,
}

impl Ss2d {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize, config: SsmConfig) -> Self {
        let d_inner = config.expansion * channels;
        let k = config.conv_kernel;
        let in_proj = b.trunc_normal("in_proj", &[d_inner, channels], 0.02);
        let gate_proj = b.trunc_normal("gate_proj", &[d_inner, channels], 0.02);
        let bound = 1.0 / Float::sqrt((k * k) as f64);
        let conv_weight = b.uniform("conv.weight", &[d_inner, 1, k, k], bound);
        let conv_bias = b.uniform("conv.bias", &[d_inner], bound);
        let ssm = SsmParams::new(
            &mut b.scope("ssm"),
            d_inner,
            config.d_state,
            channels.div_ceil(16),
        );
        let out_norm_gamma = b.ones("out_norm.gamma", &[d_inner]);
        let out_norm_beta = b.zeros("out_norm.beta", &[d_inner]);
        let out_proj = b.trunc_normal("out_proj", &[channels, d_inner], 0.02);
        Self {
            in_proj,
            gate_proj,
            conv_weight,
            conv_bias,
            ssm,
            out_norm_gamma,
            out_norm_beta,
            out_proj,
            config,
        }
    }

    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = x.value().dims4()?;
        let d_inner = self.ssm.d_inner;
        let xs = g.linear_axis(x, &g.param(self.in_proj), None, 1)?;
        let gate = g.linear_axis(x, &g.param(self.gate_proj), None, 1)?;
        let conv = g.conv2d(
            &xs,
            &g.param(self.conv_weight),
            Some(&g.param(self.conv_bias)),
            Conv2dSpec::depthwise(d_inner, self.config.conv_kernel / 2),
        )?;
        let xs = g.silu(&conv)?;
        let routes = expand_routes(g, &xs)?;
        let [r0, r1, r2, r3] = &routes;
        let mode = self.config.scan_mode;
        let scanned = [
            self.ssm.scan(g, r0, mode)?,
            self.ssm.scan(g, r1, mode)?,
            self.ssm.scan(g, r2, mode)?,
            self.ssm.scan(g, r3, mode)?,
        ];
        let merged = merge_routes(g, &scanned, h, w)?;
        let normed = g.layer_norm_axis(
            &merged,
            &g.param(self.out_norm_gamma),
            &g.param(self.out_norm_beta),
            1,
            T::lit(1e-5),
        )?;
        let gated = g.mul(&normed, &g.silu(&gate)?)?;
        g.linear_axis(&gated, &g.param(self.out_proj), None, 1)
    }
}
