use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Source taps `(i0, i1, frac)` for each output coordinate of a bilinear
/// resize with half-pixel centers (corners not aligned).
fn taps<T: Real>(inp: usize, out: usize) -> Vec<(usize, usize, T)> {
    let scale = T::lit(inp as f64) / T::lit(out as f64);
    let half = T::lit(0.5);
    (0..out)
        .map(|o| {
            let src = ((T::lit(o as f64) + half) * scale - half).max(T::zero());
            let i0 = (src.floor().as_f64() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - T::lit(i0 as f64))
        })
        .collect()
}

fn planes(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        0 | 1 => Err(invalid("resize", "need at least two spatial axes")),
        r => {
            let (h, w) = (shape[r - 2], shape[r - 1]);
            if h == 0 || w == 0 {
                return Err(invalid("resize", "empty spatial extent"));
            }
            Ok((shape[..r - 2].iter().product(), h, w))
        }
    }
}

fn out_shape(shape: &[usize], oh: usize, ow: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let r = s.len();
    s[r - 2] = oh;
    s[r - 1] = ow;
    s
}

/// Bilinear resize of the two trailing axes.
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (np, h, w) = planes(x.shape())?;
    if oh == 0 || ow == 0 {
        return Err(invalid("resize", "empty output extent"));
    }
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let xd = x.data();
    let mut out = Tensor::zeros(&out_shape(x.shape(), oh, ow));
    let od = out.data_mut();
    for p in 0..np {
        let src = &xd[p * h * w..][..h * w];
        let dst = &mut od[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor resize of the two trailing axes; never invents values.
pub fn nearest_resize<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (np, h, w) = planes(x.shape())?;
    if oh == 0 || ow == 0 {
        return Err(invalid("resize", "empty output extent"));
    }
    let ys: Vec<usize> = (0..oh).map(|o| (o * h / oh).min(h - 1)).collect();
    let xs: Vec<usize> = (0..ow).map(|o| (o * w / ow).min(w - 1)).collect();
    let xd = x.data();
    let mut out = Tensor::zeros(&out_shape(x.shape(), oh, ow));
    let od = out.data_mut();
    for p in 0..np {
        for (oy, &sy) in ys.iter().enumerate() {
            for (ox, &sx) in xs.iter().enumerate() {
                od[(p * oh + oy) * ow + ox] = xd[(p * h + sy) * w + sx];
            }
        }
    }
    Ok(out)
}

struct UpsampleOp<T: Real> {
    x: Var<T>,
}

impl<T: Real> Backward<T> for UpsampleOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let r = output.rank();
        let (oh, ow) = (output.shape()[r - 2], output.shape()[r - 1]);
        let shape = self.x.shape();
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let np = output.len() / (oh * ow);
        let ty = taps::<T>(h, oh);
        let tx = taps::<T>(w, ow);
        let mut gx = Tensor::zeros(shape);
        let gxd = gx.data_mut();
        let gd = grad.data();
        for p in 0..np {
            let dst = &mut gxd[p * h * w..][..h * w];
            let src = &gd[p * oh * ow..][..oh * ow];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let g = src[oy * ow + ox];
                    let (gt, gb) = (g * (T::one() - ly), g * ly);
                    dst[y0 * w + x0] += gt * (T::one() - lx);
                    dst[y0 * w + x1] += gt * lx;
                    dst[y1 * w + x0] += gb * (T::one() - lx);
                    dst[y1 * w + x1] += gb * lx;
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<T: Real> Tape<T> {
    /// Differentiable bilinear resize of the two trailing axes.
    pub fn upsample_bilinear(&self, x: &Var<T>, oh: usize, ow: usize) -> Result<Var<T>> {
        let value = bilinear_resize(x.value(), oh, ow)?;
        self.push("upsample_bilinear", value, UpsampleOp { x: x.clone() })
    }
}
