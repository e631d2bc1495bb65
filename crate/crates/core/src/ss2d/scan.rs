//! Selective state-space scan.
//!
//! For every batch item `n` and channel `d` the recurrence over positions
//! `t` is, per state index `s`,
//!
//! ```text
//! h[t] = exp(Δ[t]·A[d,s]) · h[t-1] + Δ[t]·B[s,t]·u[t],   h[-1] = 0
//! y[t] = Σ_s C[s,t]·h[t] + D[d]·u[t]
//! ```
//!
//! Layouts: `u`, `Δ`, `y` are `[N, D, L]`; `A` is `[D, S]`; `B`, `C` are
//! `[N, S, L]`; `D` is `[D]`; saved states are `[N, D, S, L]`.
//!
//! The recurrence `h[t] = a[t]·h[t-1] + b[t]` is a prefix scan under the
//! associative operator [`combine`], which [`scan_parallel`] evaluates with
//! a work-efficient up-sweep/down-sweep tree instead of a serial loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_mismatch, Result};
use crate::real::Real;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// How the linear recurrence is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

/// Operands of one selective scan, borrowed as flat slices.
#[derive(Clone, Copy, Debug)]
pub struct ScanProblem<'a, T> {
    pub u: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d: &'a [T],
    pub batch: usize,
    pub channels: usize,
    pub state: usize,
    pub len: usize,
}

impl<T: Real> ScanProblem<'_, T> {
    pub fn validate(&self) -> Result<()> {
        let (n, d, s, l) = (self.batch, self.channels, self.state, self.len);
        let checks = [
            ("u", self.u.len(), n * d * l),
            ("delta", self.delta.len(), n * d * l),
            ("A", self.a.len(), d * s),
            ("B", self.b.len(), n * s * l),
            ("C", self.c.len(), n * s * l),
            ("D", self.d.len(), d),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(invalid(
                    "selective_scan",
                    format!("{name} has {got} values, expected {want}"),
                ));
            }
        }
        Ok(())
    }
}

pub struct ScanOutput<T> {
    pub y: Vec<T>,
    /// Hidden states `[N, D, S, L]`, empty unless requested.
    pub states: Vec<T>,
}

/// Composes two recurrence steps, `earlier` first:
/// `(a, b) ∘ (a', b') = (a·a', a'·b + b')`.
#[inline]
pub fn combine<T: Real>(earlier: (T, T), later: (T, T)) -> (T, T) {
    (earlier.0 * later.0, later.0 * earlier.1 + later.1)
}

/// Inclusive prefix scan of `(a[t], b[t])` under [`combine`], in place.
///
/// Afterwards `b[t] = h[t]` for `h[t] = a[t]·h[t-1] + b[t]`, `h[-1] = 0`,
/// and `a[t]` holds the running product. `work` is scratch space, grown as
/// needed.
pub fn prefix_scan<T: Real>(a: &mut [T], b: &mut [T], work: &mut Vec<(T, T)>) {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    if n == 0 {
        return;
    }
    let size = n.next_power_of_two();
    work.clear();
    work.extend(a.iter().copied().zip(b.iter().copied()));
    work.resize(size, (T::one(), T::zero()));

    // Up-sweep: each right child becomes the aggregate of its subtree.
    let mut step = 1;
    while step < size {
        let mut i = 2 * step - 1;
        while i < size {
            work[i] = combine(work[i - step], work[i]);
            i += 2 * step;
        }
        step *= 2;
    }
    // Down-sweep: turn aggregates into exclusive prefixes.
    work[size - 1] = (T::one(), T::zero());
    step = size / 2;
    while step >= 1 {
        let mut i = 2 * step - 1;
        while i < size {
            let left = work[i - step];
            work[i - step] = work[i];
            work[i] = combine(work[i], left);
            i += 2 * step;
        }
        step /= 2;
    }
    for t in 0..n {
        let (pa, pb) = combine(work[t], (a[t], b[t]));
        a[t] = pa;
        b[t] = pb;
    }
}

/// Step-by-step evaluation, linear in `L`.
pub fn scan_sequential<T: Real>(p: &ScanProblem<'_, T>, keep_states: bool) -> ScanOutput<T> {
    let (nb, nd, ns, nl) = (p.batch, p.channels, p.state, p.len);
    // [N, L, S] copies so the inner state loop is contiguous.
    let mut bt = vec![T::zero(); nb * nl * ns];
    let mut ct = vec![T::zero(); nb * nl * ns];
    for n in 0..nb {
        for s in 0..ns {
            for t in 0..nl {
                bt[(n * nl + t) * ns + s] = p.b[(n * ns + s) * nl + t];
                ct[(n * nl + t) * ns + s] = p.c[(n * ns + s) * nl + t];
            }
        }
    }
    let mut y = vec![T::zero(); nb * nd * nl];
    let mut states = if keep_states {
        vec![T::zero(); nb * nd * ns * nl]
    } else {
        Vec::new()
    };
    let mut h = vec![T::zero(); ns];
    for n in 0..nb {
        for d in 0..nd {
            h.fill(T::zero());
            let row = (n * nd + d) * nl;
            let arow = &p.a[d * ns..][..ns];
            for t in 0..nl {
                let (u, dt) = (p.u[row + t], p.delta[row + t]);
                let du = dt * u;
                let bs = &bt[(n * nl + t) * ns..][..ns];
                let cs = &ct[(n * nl + t) * ns..][..ns];
                let mut acc = T::zero();
                for s in 0..ns {
                    h[s] = (dt * arow[s]).exp() * h[s] + du * bs[s];
                    acc += cs[s] * h[s];
                }
                if keep_states {
                    for s in 0..ns {
                        states[((n * nd + d) * ns + s) * nl + t] = h[s];
                    }
                }
                y[row + t] = acc + p.d[d] * u;
            }
        }
    }
    ScanOutput { y, states }
}

/// Evaluation through [`prefix_scan`]; agrees with [`scan_sequential`] up
/// to floating-point reassociation.
pub fn scan_parallel<T: Real>(p: &ScanProblem<'_, T>, keep_states: bool) -> ScanOutput<T> {
    let (nb, nd, ns, nl) = (p.batch, p.channels, p.state, p.len);
    let mut y = vec![T::zero(); nb * nd * nl];
    let mut states = if keep_states {
        vec![T::zero(); nb * nd * ns * nl]
    } else {
        Vec::new()
    };
    let mut av = vec![T::zero(); nl];
    let mut bv = vec![T::zero(); nl];
    let mut work = Vec::new();
    for n in 0..nb {
        for d in 0..nd {
            let row = (n * nd + d) * nl;
            let (u, delta) = (&p.u[row..][..nl], &p.delta[row..][..nl]);
            for s in 0..ns {
                let a = p.a[d * ns + s];
                let bsrc = &p.b[(n * ns + s) * nl..][..nl];
                for t in 0..nl {
                    av[t] = (delta[t] * a).exp();
                    bv[t] = delta[t] * bsrc[t] * u[t];
                }
                prefix_scan(&mut av, &mut bv, &mut work);
                let csrc = &p.c[(n * ns + s) * nl..][..nl];
                let yrow = &mut y[row..][..nl];
                for t in 0..nl {
                    yrow[t] += csrc[t] * bv[t];
                }
                if keep_states {
                    states[((n * nd + d) * ns + s) * nl..][..nl].copy_from_slice(&bv);
                }
            }
            for t in 0..nl {
                y[row + t] += p.d[d] * u[t];
            }
        }
    }
    ScanOutput { y, states }
}

pub fn scan<T: Real>(p: &ScanProblem<'_, T>, mode: ScanMode, keep_states: bool) -> ScanOutput<T> {
    match mode {
        ScanMode::Sequential => scan_sequential(p, keep_states),
        ScanMode::Parallel => scan_parallel(p, keep_states),
    }
}

/// Gradients of a selective scan w.r.t. each operand, same layouts.
pub struct ScanGrads<T> {
    pub u: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d: Vec<T>,
}

/// Reverse-mode sweep given the saved forward states and `dL/dy`.
///
/// The state adjoint obeys its own linear recurrence run backwards in time,
/// `g[t] = a[t+1]·g[t+1] + dy[t]·C[t]`, evaluated with the same strategy as
/// the forward pass.
pub fn scan_backward<T: Real>(
    p: &ScanProblem<'_, T>,
    states: &[T],
    gy: &[T],
    mode: ScanMode,
) -> ScanGrads<T> {
    let (nb, nd, ns, nl) = (p.batch, p.channels, p.state, p.len);
    let mut g = ScanGrads {
        u: vec![T::zero(); nb * nd * nl],
        delta: vec![T::zero(); nb * nd * nl],
        a: vec![T::zero(); nd * ns],
        b: vec![T::zero(); nb * ns * nl],
        c: vec![T::zero(); nb * ns * nl],
        d: vec![T::zero(); nd],
    };
    let mut decay = vec![T::zero(); nl];
    let mut gh = vec![T::zero(); nl];
    let mut rev_a = vec![T::zero(); nl];
    let mut work = Vec::new();
    for n in 0..nb {
        for d in 0..nd {
            let row = (n * nd + d) * nl;
            let u = &p.u[row..][..nl];
            let delta = &p.delta[row..][..nl];
            let gyr = &gy[row..][..nl];
            for s in 0..ns {
                let a = p.a[d * ns + s];
                let sl = (n * ns + s) * nl;
                let (bs, cs) = (&p.b[sl..][..nl], &p.c[sl..][..nl]);
                let h = &states[((n * nd + d) * ns + s) * nl..][..nl];
                for t in 0..nl {
                    decay[t] = (delta[t] * a).exp();
                }
                match mode {
                    ScanMode::Sequential => {
                        let mut carry = T::zero();
                        for t in (0..nl).rev() {
                            carry = gyr[t] * cs[t] + carry;
                            gh[t] = carry;
                            carry *= decay[t];
                        }
                    }
                    ScanMode::Parallel => {
                        for r in 0..nl {
                            let t = nl - 1 - r;
                            rev_a[r] = if t + 1 < nl { decay[t + 1] } else { T::one() };
                            gh[r] = gyr[t] * cs[t];
                        }
                        prefix_scan(&mut rev_a, &mut gh, &mut work);
                        gh.reverse();
                    }
                }
                let mut ga = T::zero();
                for t in 0..nl {
                    let h_prev = if t == 0 { T::zero() } else { h[t - 1] };
                    let g_decay = gh[t] * h_prev * decay[t];
                    g.delta[row + t] += g_decay * a + gh[t] * bs[t] * u[t];
                    ga += g_decay * delta[t];
                    g.b[sl + t] += gh[t] * delta[t] * u[t];
                    g.u[row + t] += gh[t] * delta[t] * bs[t];
                    g.c[sl + t] += gyr[t] * h[t];
                }
                g.a[d * ns + s] += ga;
            }
            let mut gd = T::zero();
            for t in 0..nl {
                gd += gyr[t] * u[t];
                g.u[row + t] += gyr[t] * p.d[d];
            }
            g.d[d] += gd;
        }
    }
    g
}

struct SelectiveScanOp<T: Real> {
    inputs: [Var<T>; 6],
    states: Vec<T>,
    dims: (usize, usize, usize, usize),
    mode: ScanMode,
}

impl<T: Real> Backward<T> for SelectiveScanOp<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        self.inputs.iter().collect()
    }

    fn backward(&self, _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [u, delta, a, b, c, d] = &self.inputs;
        let (batch, channels, state, len) = self.dims;
        let p = ScanProblem {
            u: u.value().data(),
            delta: delta.value().data(),
            a: a.value().data(),
            b: b.value().data(),
            c: c.value().data(),
            d: d.value().data(),
            batch,
            channels,
            state,
            len,
        };
        let g = scan_backward(&p, &self.states, grad.data(), self.mode);
        [g.u, g.delta, g.a, g.b, g.c, g.d]
            .into_iter()
            .zip(&self.inputs)
            .map(|(data, var)| Tensor::new(var.shape(), data).ok())
            .collect()
    }
}

impl<T: Real> Tape<T> {
    /// Differentiable selective scan; see the module docs for layouts.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &self,
        u: &Var<T>,
        delta: &Var<T>,
        a: &Var<T>,
        b: &Var<T>,
        c: &Var<T>,
        d: &Var<T>,
        mode: ScanMode,
    ) -> Result<Var<T>> {
        let &[batch, channels, len] = u.shape() else {
            return Err(invalid("selective_scan", "u must be [N, D, L]"));
        };
        let &[ad, state] = a.shape() else {
            return Err(invalid("selective_scan", "A must be [D, S]"));
        };
        if delta.shape() != u.shape() {
            return Err(shape_mismatch("selective_scan delta", u.shape(), delta.shape()));
        }
        if ad != channels {
            return Err(shape_mismatch("selective_scan A", &[channels, state], a.shape()));
        }
        for m in [b, c] {
            if m.shape() != [batch, state, len] {
                return Err(shape_mismatch("selective_scan B/C", &[batch, state, len], m.shape()));
            }
        }
        if d.shape() != [channels] {
            return Err(shape_mismatch("selective_scan D", &[channels], d.shape()));
        }
        let p = ScanProblem {
            u: u.value().data(),
            delta: delta.value().data(),
            a: a.value().data(),
            b: b.value().data(),
            c: c.value().data(),
            d: d.value().data(),
            batch,
            channels,
            state,
            len,
        };
        let keep = self.is_recording();
        let out = scan(&p, mode, keep);
        let value = Tensor::new(u.shape(), out.y)?;
        self.push(
            "selective_scan",
            value,
            SelectiveScanOp {
                inputs: [
                    u.clone(),
                    delta.clone(),
                    a.clone(),
                    b.clone(),
                    c.clone(),
                    d.clone(),
                ],
                states: out.states,
                dims: (batch, channels, state, len),
                mode,
            },
        )
    }
}
