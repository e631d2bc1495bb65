use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_mismatch, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

struct GatherOp<T: Real> {
    x: Var<T>,
    index: Rc<[usize]>,
}

impl<T: Real> Backward<T> for GatherOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let l = self.index.len();
        let mut gx = Tensor::zeros(self.x.shape());
        for (dst, src) in gx.data_mut().chunks_mut(l).zip(grad.data().chunks(l)) {
            for (k, &i) in self.index.iter().enumerate() {
                dst[i] += src[k];
            }
        }
        vec![Some(gx)]
    }
}

struct ReshapeOp<T: Real> {
    x: Var<T>,
}

impl<T: Real> Backward<T> for ReshapeOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![grad.clone().reshape(self.x.shape()).ok()]
    }
}

impl<T: Real> Tape<T> {
    /// Reorders every contiguous block of `index.len()` elements so that
    /// `out[.., k] = x[.., index[k]]`, then gives the result `out_shape`.
    pub fn gather_blocks(
        &self,
        x: &Var<T>,
        index: Rc<[usize]>,
        out_shape: &[usize],
    ) -> Result<Var<T>> {
        let l = index.len();
        if l == 0 || !x.value().len().is_multiple_of(l) {
            return Err(invalid(
                "gather_blocks",
                format!("block length {l} does not tile {:?}", x.shape()),
            ));
        }
        if out_shape.iter().product::<usize>() != x.value().len() {
            return Err(shape_mismatch("gather_blocks", out_shape, x.shape()));
        }
        if index.iter().any(|&i| i >= l) {
            return Err(invalid("gather_blocks", "index out of range"));
        }
        let mut data = Vec::with_capacity(x.value().len());
        for block in x.value().data().chunks(l) {
            data.extend(index.iter().map(|&i| block[i]));
        }
        let value = Tensor::new(out_shape, data)?;
        self.push(
            "gather_blocks",
            value,
            GatherOp {
                x: x.clone(),
                index,
            },
        )
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let value = x.value().clone().reshape(shape)?;
        self.push("reshape", value, ReshapeOp { x: x.clone() })
    }
}
