use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_mismatch, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Silu,
    Relu,
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Sigmoid,
    Silu,
    Relu,
    Softplus,
    Exp,
    Ln,
    Affine { scale: T, shift: T },
    Clamp { lo: T, hi: T },
}

impl<T: Real> Unary<T> {
    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Silu => "silu",
            Unary::Relu => "relu",
            Unary::Softplus => "softplus",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Affine { .. } => "affine",
            Unary::Clamp { .. } => "clamp",
        }
    }

    #[inline]
    fn forward(self, x: T) -> T {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Relu => x.max(T::zero()),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Affine { scale, shift } => scale * x + shift,
            Unary::Clamp { lo, hi } => x.max(lo).min(hi),
        }
    }

    /// Derivative given the input `x` and output `y`.
    #[inline]
    fn derivative(self, x: T, y: T) -> T {
        match self {
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::Ln => x.recip(),
            Unary::Affine { scale, .. } => scale,
            Unary::Clamp { lo, hi } => {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

struct UnaryOp<T: Real> {
    x: Var<T>,
    kind: Unary<T>,
}

impl<T: Real> Backward<T> for UnaryOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = self.x.value().data();
        let y = output.data();
        let g = grad.data();
        let gx = Tensor::from_fn(output.shape(), |i| g[i] * self.kind.derivative(x[i], y[i]));
        vec![Some(gx)]
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinaryOp<T: Real> {
    a: Var<T>,
    b: Var<T>,
    kind: Binary,
}

impl<T: Real> Backward<T> for BinaryOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let a = self.a.value();
        let b = self.b.value();
        let g = grad.data();
        let shape = grad.shape();
        match self.kind {
            Binary::Add => vec![Some(grad.clone()), Some(grad.clone())],
            Binary::Sub => vec![Some(grad.clone()), Some(grad.map(|v| -v))],
            Binary::Mul => vec![
                Some(Tensor::from_fn(shape, |i| g[i] * b.data()[i])),
                Some(Tensor::from_fn(shape, |i| g[i] * a.data()[i])),
            ],
            Binary::Div => {
                let (ad, bd) = (a.data(), b.data());
                vec![
                    Some(Tensor::from_fn(shape, |i| g[i] / bd[i])),
                    Some(Tensor::from_fn(shape, |i| -g[i] * ad[i] / (bd[i] * bd[i]))),
                ]
            }
        }
    }
}

/// Maps each element of an `out_shape` tensor to the element of an
/// `in_shape` tensor it reads under size-1 broadcasting.
fn broadcast_index(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut in_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..rank).rev() {
        in_strides[d] = if in_shape[d] == 1 { 0 } else { stride };
        stride *= in_shape[d];
    }
    let total: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..total {
        idx.push(pos);
        for d in (0..rank).rev() {
            counter[d] += 1;
            pos += in_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            pos -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

struct BroadcastMul<T: Real> {
    a: Var<T>,
    b: Var<T>,
    a_idx: Vec<usize>,
    b_idx: Vec<usize>,
}

impl<T: Real> Backward<T> for BroadcastMul<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (self.a.value(), self.b.value());
        let mut ga = Tensor::zeros(a.shape());
        let mut gb = Tensor::zeros(b.shape());
        {
            let (gad, gbd) = (ga.data_mut(), gb.data_mut());
            for (k, &g) in grad.data().iter().enumerate() {
                let (i, j) = (self.a_idx[k], self.b_idx[k]);
                gad[i] += g * b.data()[j];
                gbd[j] += g * a.data()[i];
            }
        }
        vec![Some(ga), Some(gb)]
    }
}

impl<T: Real> Tape<T> {
    fn unary(&self, x: &Var<T>, kind: Unary<T>) -> Result<Var<T>> {
        let value = x.value().map(|v| kind.forward(v));
        self.push(kind.name(), value, UnaryOp { x: x.clone(), kind })
    }

    fn binary(&self, a: &Var<T>, b: &Var<T>, kind: Binary, name: &'static str) -> Result<Var<T>> {
        let value = match kind {
            Binary::Add => a.value().zip_map(b.value(), |x, y| x + y),
            Binary::Sub => a.value().zip_map(b.value(), |x, y| x - y),
            Binary::Mul => a.value().zip_map(b.value(), |x, y| x * y),
            Binary::Div => a.value().zip_map(b.value(), |x, y| x / y),
        }
        .map_err(|_| shape_mismatch(name, a.shape(), b.shape()))?;
        self.push(
            name,
            value,
            BinaryOp {
                a: a.clone(),
                b: b.clone(),
                kind,
            },
        )
    }

    pub fn activation(&self, x: &Var<T>, kind: Activation) -> Result<Var<T>> {
        match kind {
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Silu => self.silu(x),
            Activation::Relu => self.relu(x),
        }
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn silu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(x, Unary::Silu)
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(x, Unary::Relu)
    }

    pub fn softplus(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(x, Unary::Exp)
    }

    pub fn ln(&self, x: &Var<T>) -> Result<Var<T>> {
        self.unary(x, Unary::Ln)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, x: &Var<T>, scale: T, shift: T) -> Result<Var<T>> {
        self.unary(x, Unary::Affine { scale, shift })
    }

    pub fn clamp(&self, x: &Var<T>, lo: T, hi: T) -> Result<Var<T>> {
        if lo > hi {
            return Err(invalid("clamp", "lower bound above upper bound"));
        }
        self.unary(x, Unary::Clamp { lo, hi })
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    pub fn div(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, Binary::Div, "div")
    }

    /// Elementwise product of equal-rank tensors where either operand may
    /// have extent 1 along any axis.
    pub fn mul_broadcast(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != sb.len() {
            return Err(shape_mismatch("mul_broadcast", sa, sb));
        }
        let mut out_shape = Vec::with_capacity(sa.len());
        for (&x, &y) in sa.iter().zip(sb) {
            if x != y && x != 1 && y != 1 {
                return Err(shape_mismatch("mul_broadcast", sa, sb));
            }
            out_shape.push(x.max(y));
        }
        let a_idx = broadcast_index(&out_shape, sa);
        let b_idx = broadcast_index(&out_shape, sb);
        let (ad, bd) = (a.value().data(), b.value().data());
        let value = Tensor::from_fn(&out_shape, |k| ad[a_idx[k]] * bd[b_idx[k]]);
        self.push(
            "mul_broadcast",
            value,
            BroadcastMul {
                a: a.clone(),
                b: b.clone(),
                a_idx,
                b_idx,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        for &x in &[-3.0f64, -0.4, 0.7, 12.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
    }

    #[test]
    fn broadcast_index_channel_axis() {
        let idx = broadcast_index(&[1, 2, 2, 1], &[1, 1, 2, 1]);
        assert_eq!(idx, vec![0, 1, 0, 1]);
    }

    #[test]
    fn sum_grad_of_sigmoid_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1]));
        let y = tape.sigmoid(&x).unwrap();
        let g = tape.backward(&y).unwrap();
        assert!((g.get(&x).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn silu_slope_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1]));
        let y = tape.silu(&x).unwrap();
        assert_eq!(y.value().data()[0], 0.0);
        let g = tape.backward(&y).unwrap();
        assert!((g.get(&x).unwrap().data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![0.3, -0.7]).unwrap());
        let a = tape.sigmoid(&x).unwrap();
        let b = tape.affine(&x, 3.0, 1.0).unwrap();
        let y = tape.add(&a, &b).unwrap();
        let loss = tape.sum(&y).unwrap();
        let g = tape.backward(&loss).unwrap();
        for (i, &xv) in x.value().data().iter().enumerate() {
            let s = sigmoid(xv);
            let expected = s * (1.0 - s) + 3.0;
            assert!((g.get(&x).unwrap().data()[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn binary_shape_mismatch_is_error() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[2]));
        let b = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.add(&a, &b).is_err());
    }
}
