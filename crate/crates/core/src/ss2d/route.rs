//! The four scanning routes of a 2D feature map.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanRoute {
    /// Row-major.
    RowForward,
    /// Row-major, reversed.
    RowBackward,
    /// Column-major.
    ColForward,
    /// Column-major, reversed.
    ColBackward,
}

impl ScanRoute {
    pub const ALL: [ScanRoute; 4] = [
        ScanRoute::RowForward,
        ScanRoute::RowBackward,
        ScanRoute::ColForward,
        ScanRoute::ColBackward,
    ];

    /// `order[k]` is the row-major grid index visited at sequence step `k`.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let l = h * w;
        let col_major = |k: usize| (k % h) * w + k / h;
        match self {
            ScanRoute::RowForward => (0..l).collect(),
            ScanRoute::RowBackward => (0..l).rev().collect(),
            ScanRoute::ColForward => (0..l).map(col_major).collect(),
            ScanRoute::ColBackward => (0..l).rev().map(col_major).collect(),
        }
    }

    /// `inverse[i]` is the sequence step at which grid index `i` is visited.
    pub fn inverse(self, h: usize, w: usize) -> Vec<usize> {
        let order = self.order(h, w);
        let mut inv = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            inv[i] = k;
        }
        inv
    }

    /// `[N, C, H, W]` to `[N, C, H·W]` in this route's order.
    pub fn flatten<T: Real>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        let order = self.order(h, w);
        let mut data = Vec::with_capacity(x.len());
        for plane in x.data().chunks(h * w) {
            data.extend(order.iter().map(|&i| plane[i]));
        }
        Tensor::new(&[n, c, h * w], data)
    }

    /// Inverse of [`ScanRoute::flatten`].
    pub fn unflatten<T: Real>(self, seq: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        let &[n, c, l] = seq.shape() else {
            return Err(invalid("unflatten", "expected [N, C, L]"));
        };
        if l != h * w {
            return Err(invalid("unflatten", format!("length {l} != {h}x{w}")));
        }
        let inv = self.inverse(h, w);
        let mut data = Vec::with_capacity(seq.len());
        for row in seq.data().chunks(l) {
            data.extend(inv.iter().map(|&k| row[k]));
        }
        Tensor::new(&[n, c, h, w], data)
    }
}

/// Flattens `x: [N, C, H, W]` along all four routes, in [`ScanRoute::ALL`]
/// order. Each result is `[N, C, H·W]`.
pub fn expand_routes<T: Real>(tape: &Tape<T>, x: &Var<T>) -> Result<[Var<T>; 4]> {
    let (n, c, h, w) = x.value().dims4()?;
    if h == 0 || w == 0 {
        return Err(invalid("expand_routes", "empty feature map"));
    }
    let route = |r: ScanRoute| {
        let order: Rc<[usize]> = r.order(h, w).into();
        tape.gather_blocks(x, order, &[n, c, h * w])
    };
    Ok([
        route(ScanRoute::RowForward)?,
        route(ScanRoute::RowBackward)?,
        route(ScanRoute::ColForward)?,
        route(ScanRoute::ColBackward)?,
    ])
}

/// Un-permutes each route's sequence back onto the grid and sums the four.
///
/// The sum is taken pairwise, `(r0 + r1) + (r2 + r3)`, so four identical
/// grids add up to exactly four times the grid.
pub fn merge_routes<T: Real>(
    tape: &Tape<T>,
    seqs: &[Var<T>; 4],
    h: usize,
    w: usize,
) -> Result<Var<T>> {
    let mut grids = Vec::with_capacity(4);
    for (seq, route) in seqs.iter().zip(ScanRoute::ALL) {
        let &[n, c, l] = seq.shape() else {
            return Err(invalid("merge_routes", "expected [N, C, L] sequences"));
        };
        if l != h * w {
            return Err(invalid(
                "merge_routes",
                format!("sequence length {l} does not match {h}x{w}"),
            ));
        }
        let inv: Rc<[usize]> = route.inverse(h, w).into();
        grids.push(tape.gather_blocks(seq, inv, &[n, c, h, w])?);
    }
    let front = tape.add(&grids[0], &grids[1])?;
    let back = tape.add(&grids[2], &grids[3])?;
    tape.add(&front, &back)
}
