use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_mismatch, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{split_axis, Tensor};

struct LayerNormOp<T: Real> {
    x: Var<T>,
    gamma: Var<T>,
    beta: Var<T>,
    axis: usize,
    mean: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Real> Backward<T> for LayerNormOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.x, &self.gamma, &self.beta]
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (outer, c, inner) = split_axis(self.x.shape(), self.axis);
        let (xd, gam, gd) = (self.x.value().data(), self.gamma.value().data(), grad.data());
        let mut gx = Tensor::zeros(self.x.shape());
        let mut ggamma = Tensor::zeros(&[c]);
        let mut gbeta = Tensor::zeros(&[c]);
        let inv_c = T::one() / T::lit(c as f64);
        let mut sum_g = vec![T::zero(); inner];
        let mut sum_gx = vec![T::zero(); inner];
        for o in 0..outer {
            let mean = &self.mean[o * inner..][..inner];
            let rstd = &self.rstd[o * inner..][..inner];
            sum_g.fill(T::zero());
            sum_gx.fill(T::zero());
            for k in 0..c {
                let base = (o * c + k) * inner;
                let (mut gg, mut gb) = (T::zero(), T::zero());
                for i in 0..inner {
                    let xhat = (xd[base + i] - mean[i]) * rstd[i];
                    let g = gd[base + i];
                    gg += g * xhat;
                    gb += g;
                    let gxhat = g * gam[k];
                    sum_g[i] += gxhat;
                    sum_gx[i] += gxhat * xhat;
                }
                ggamma.data_mut()[k] += gg;
                gbeta.data_mut()[k] += gb;
            }
            let gxd = gx.data_mut();
            for k in 0..c {
                let base = (o * c + k) * inner;
                for i in 0..inner {
                    let xhat = (xd[base + i] - mean[i]) * rstd[i];
                    let gxhat = gd[base + i] * gam[k];
                    gxd[base + i] =
                        rstd[i] * (gxhat - sum_g[i] * inv_c - xhat * sum_gx[i] * inv_c);
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }
}

impl<T: Real> Tape<T> {
    /// Normalizes `x` to zero mean and unit variance along `axis`, then
    /// applies the per-channel affine `gamma * x̂ + beta`.
    pub fn layer_norm_axis(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        axis: usize,
        eps: T,
    ) -> Result<Var<T>> {
        if axis >= x.shape().len() {
            return Err(invalid("layer_norm", "axis out of range"));
        }
        if eps <= T::zero() {
            return Err(invalid("layer_norm", "eps must be positive"));
        }
        let (outer, c, inner) = split_axis(x.shape(), axis);
        if gamma.shape() != [c] {
            return Err(shape_mismatch("layer_norm gamma", &[c], gamma.shape()));
        }
        if beta.shape() != [c] {
            return Err(shape_mismatch("layer_norm beta", &[c], beta.shape()));
        }
        let xd = x.value().data();
        let (gam, bet) = (gamma.value().data(), beta.value().data());
        let inv_c = T::one() / T::lit(c as f64);
        let mut mean = vec![T::zero(); outer * inner];
        let mut rstd = vec![T::zero(); outer * inner];
        let mut out = Tensor::zeros(x.shape());
        {
            let od = out.data_mut();
            for o in 0..outer {
                let m = &mut mean[o * inner..][..inner];
                let r = &mut rstd[o * inner..][..inner];
                for k in 0..c {
                    for (mi, &v) in m.iter_mut().zip(&xd[(o * c + k) * inner..][..inner]) {
                        *mi += v;
                    }
                }
                m.iter_mut().for_each(|v| *v *= inv_c);
                for k in 0..c {
                    for i in 0..inner {
                        let d = xd[(o * c + k) * inner + i] - m[i];
                        r[i] += d * d;
                    }
                }
                r.iter_mut().for_each(|v| *v = (*v * inv_c + eps).sqrt().recip());
                for k in 0..c {
                    let base = (o * c + k) * inner;
                    for i in 0..inner {
                        od[base + i] = (xd[base + i] - m[i]) * r[i] * gam[k] + bet[k];
                    }
                }
            }
        }
        self.push(
            "layer_norm",
            out,
            LayerNormOp {
                x: x.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                axis,
                mean,
                rstd,
            },
        )
    }

    /// Layer norm over the trailing axis.
    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let axis = x
            .shape()
            .len()
            .checked_sub(1)
            .ok_or_else(|| invalid("layer_norm", "input must have at least one axis"))?;
        self.layer_norm_axis(x, gamma, beta, axis, eps)
    }
}
