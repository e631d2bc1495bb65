use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_mismatch, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{split_axis, Tensor};

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct LinearOp<T: Real> {
    x: Var<T>,
    weight: Var<T>,
    bias: Option<Var<T>>,
    axis: usize,
}

impl<T: Real> Backward<T> for LinearOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        let mut v = vec![&self.x, &self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (outer, din, inner) = split_axis(self.x.shape(), self.axis);
        let dout = self.weight.shape()[0];
        let (xd, wd, gd) = (self.x.value().data(), self.weight.value().data(), grad.data());
        let mut gx = Tensor::zeros(self.x.shape());
        let mut gw = Tensor::zeros(self.weight.shape());
        {
            let (gxd, gwd) = (gx.data_mut(), gw.data_mut());
            for o in 0..outer {
                for j in 0..dout {
                    let grow = &gd[(o * dout + j) * inner..][..inner];
                    for k in 0..din {
                        let xrow = &xd[(o * din + k) * inner..][..inner];
                        gwd[j * din + k] += dot(grow, xrow);
                        axpy(
                            wd[j * din + k],
                            grow,
                            &mut gxd[(o * din + k) * inner..][..inner],
                        );
                    }
                }
            }
        }
        let mut grads = vec![Some(gx), Some(gw)];
        if self.bias.is_some() {
            let gb = Tensor::from_fn(&[dout], |j| {
                (0..outer)
                    .map(|o| gd[(o * dout + j) * inner..][..inner].iter().copied().sum::<T>())
                    .sum()
            });
            grads.push(Some(gb));
        }
        grads
    }
}

impl<T: Real> Tape<T> {
    /// Affine map `W x + b` applied along `axis` of `x`.
    ///
    /// `weight` is `[Dout, Din]` where `Din` is the extent of `axis`; the
    /// output has `Dout` in its place. Applied to axis 1 of an `[N, C, H, W]`
    /// map this is a pointwise (1×1) projection over channels.
    pub fn linear_axis(
        &self,
        x: &Var<T>,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        axis: usize,
    ) -> Result<Var<T>> {
        if axis >= x.shape().len() {
            return Err(invalid("linear", "axis out of range"));
        }
        let (outer, din, inner) = split_axis(x.shape(), axis);
        let &[dout, wdin] = weight.shape() else {
            return Err(invalid("linear", "weight must be [Dout, Din]"));
        };
        if wdin != din {
            return Err(shape_mismatch("linear", &[dout, din], weight.shape()));
        }
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(shape_mismatch("linear bias", &[dout], b.shape()));
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = dout;
        let mut out = Tensor::zeros(&shape);
        let (xd, wd) = (x.value().data(), weight.value().data());
        {
            let od = out.data_mut();
            for o in 0..outer {
                for j in 0..dout {
                    let orow = &mut od[(o * dout + j) * inner..][..inner];
                    if let Some(b) = bias {
                        orow.fill(b.value().data()[j]);
                    }
                    if inner == 1 {
                        orow[0] += dot(&wd[j * din..][..din], &xd[o * din..][..din]);
                    } else {
                        for k in 0..din {
                            axpy(wd[j * din + k], &xd[(o * din + k) * inner..][..inner], orow);
                        }
                    }
                }
            }
        }
        self.push(
            "linear",
            out,
            LinearOp {
                x: x.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
                axis,
            },
        )
    }

    /// Affine map over the trailing axis.
    pub fn linear(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let axis = x
            .shape()
            .len()
            .checked_sub(1)
            .ok_or_else(|| invalid("linear", "input must have at least one axis"))?;
        self.linear_axis(x, weight, bias, axis)
    }
}
