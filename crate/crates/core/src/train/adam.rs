//! Bias-corrected Adam.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{shape_mismatch, Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First moments, one per parameter tensor.
    pub m: Vec<Tensor<T>>,
    /// Second moments.
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every parameter. Fails before touching anything if a
    /// gradient is missing or misshapen.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Config("optimizer state does not match the parameter list".into()));
        }
        for ((id, g), m) in params.ids().zip(grads).zip(&self.m) {
            let g = g.as_ref().ok_or_else(|| Error::MissingGradient(params.name(id).into()))?;
            if g.shape() != m.shape() {
                return Err(shape_mismatch("adam", m.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - Float::powi(self.beta1, t));
        let c2 = T::lit(1.0 - Float::powi(self.beta2, t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        let one = T::one();
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.as_ref().expect("checked above");
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
