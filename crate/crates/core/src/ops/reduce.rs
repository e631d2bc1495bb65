use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

struct SumOp<T: Real> {
    x: Var<T>,
    scale: T,
}

impl<T: Real> Backward<T> for SumOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = grad.data()[0] * self.scale;
        vec![Some(Tensor::full(self.x.shape(), g))]
    }
}

impl<T: Real> Tape<T> {
    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let value = Tensor::scalar(x.value().sum());
        self.push(
            "sum",
            value,
            SumOp {
                x: x.clone(),
                scale: T::one(),
            },
        )
    }

    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        if x.value().is_empty() {
            return Err(invalid("mean", "empty tensor"));
        }
        let scale = T::one() / T::lit(x.value().len() as f64);
        let value = Tensor::scalar(x.value().sum() * scale);
        self.push("mean", value, SumOp { x: x.clone(), scale })
    }
}
