use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Stride, zero padding and channel grouping of a 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn depthwise(channels: usize, padding: usize) -> Self {
        Self {
            stride: 1,
            padding,
            groups: channels,
        }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: &[usize], weight: &[usize], bias: Option<&[usize]>, spec: Conv2dSpec) -> Result<Self> {
        let &[n, cin, h, w] = x else {
            return Err(invalid("conv2d", format!("input must be rank 4, got {x:?}")));
        };
        let &[cout, cin_g, kh, kw] = weight else {
            return Err(invalid("conv2d", format!("weight must be rank 4, got {weight:?}")));
        };
        if spec.stride == 0 || spec.groups == 0 {
            return Err(invalid("conv2d", "stride and groups must be positive"));
        }
        if cin % spec.groups != 0 || cout % spec.groups != 0 || cin / spec.groups != cin_g {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![cout, cin / spec.groups.max(1), kh, kw],
                got: weight.to_vec(),
            });
        }
        if let Some(b) = bias {
            if b != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    expected: vec![cout],
                    got: b.to_vec(),
                });
            }
        }
        let p = spec.padding;
        if h + 2 * p < kh || w + 2 * p < kw || kh == 0 || kw == 0 {
            return Err(invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (padding {p})"),
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh: (h + 2 * p - kh) / spec.stride + 1,
            ow: (w + 2 * p - kw) / spec.stride + 1,
            cin_g,
            cout_g: cout / spec.groups,
            stride: spec.stride,
            pad: p,
        })
    }

    /// Output coordinates `o` in `[lo, hi)` with `0 <= o*stride + k - pad < extent`.
    #[inline]
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(s)
        } else {
            0
        };
        let hi = if extent + self.pad > k {
            ((extent - 1 + self.pad - k) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Direct 2D cross-correlation (no kernel flip).
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), weight.shape(), bias.map(|b| b.shape()), spec)?;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let (xd, wd) = (x.data(), weight.data());
    let od = out.data_mut();
    let plane = g.oh * g.ow;
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / g.cout_g;
            let o = &mut od[(n * g.cout + co) * plane..][..plane];
            if let Some(b) = bias {
                o.fill(b.data()[co]);
            }
            for cil in 0..g.cin_g {
                let ci = group * g.cin_g + cil;
                let xp = &xd[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = wd[((co * g.cin_g + cil) * g.kh + ky) * g.kw + kx];
                        let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.pad;
                            let xrow = &xp[iy * g.w..][..g.w];
                            let orow = &mut o[oy * g.ow..][..g.ow];
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

struct Conv2dOp<T: Real> {
    x: Var<T>,
    weight: Var<T>,
    bias: Option<Var<T>>,
    geom: Geometry,
}

impl<T: Real> Backward<T> for Conv2dOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        let mut v = vec![&self.x, &self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = self.geom;
        let (xd, wd, gd) = (self.x.value().data(), self.weight.value().data(), grad.data());
        let mut gx = Tensor::zeros(self.x.shape());
        let mut gw = Tensor::zeros(self.weight.shape());
        let plane = g.oh * g.ow;
        {
            let (gxd, gwd) = (gx.data_mut(), gw.data_mut());
            for n in 0..g.n {
                for co in 0..g.cout {
                    let group = co / g.cout_g;
                    let go = &gd[(n * g.cout + co) * plane..][..plane];
                    for cil in 0..g.cin_g {
                        let ci = group * g.cin_g + cil;
                        let base = (n * g.cin + ci) * g.h * g.w;
                        for ky in 0..g.kh {
                            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
                            for kx in 0..g.kw {
                                let widx = ((co * g.cin_g + cil) * g.kh + ky) * g.kw + kx;
                                let wv = wd[widx];
                                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                                let mut acc = T::zero();
                                for oy in oy_lo..oy_hi {
                                    let row = base + (oy * g.stride + ky - g.pad) * g.w;
                                    let grow = &go[oy * g.ow..][..g.ow];
                                    for ox in ox_lo..ox_hi {
                                        let xi = row + ox * g.stride + kx - g.pad;
                                        acc += grow[ox] * xd[xi];
                                        gxd[xi] += grow[ox] * wv;
                                    }
                                }
                                gwd[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
        let mut grads = vec![Some(gx), Some(gw)];
        if self.bias.is_some() {
            let gb = Tensor::from_fn(&[g.cout], |co| {
                (0..g.n)
                    .map(|n| gd[(n * g.cout + co) * plane..][..plane].iter().copied().sum::<T>())
                    .sum()
            });
            grads.push(Some(gb));
        }
        grads
    }
}

impl<T: Real> Tape<T> {
    /// 2D cross-correlation of `x: [N, Cin, H, W]` with
    /// `weight: [Cout, Cin / groups, kh, kw]`.
    pub fn conv2d(
        &self,
        x: &Var<T>,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        spec: Conv2dSpec,
    ) -> Result<Var<T>> {
        let geom = Geometry::new(x.shape(), weight.shape(), bias.map(|b| b.shape()), spec)?;
        let value = conv2d_forward(x.value(), weight.value(), bias.map(|b| b.value()), spec)?;
        self.push(
            "conv2d",
            value,
            Conv2dOp {
                x: x.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
                geom,
            },
        )
    }
}
