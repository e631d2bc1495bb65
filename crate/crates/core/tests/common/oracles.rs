//! Reference implementations written for clarity, not speed. Each is
//! derived from the mathematical definition rather than from the library
//! code it checks.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rma_core::decoder::{RmaStage, StageOutput};
use rma_core::metrics::BinaryMask;
use rma_core::params::{Graph, ParamStore};
use rma_core::ss2d::scan::ScanProblem;
use rma_core::{Tape, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Owned operands of a selective scan.
pub struct ScanCase {
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub batch: usize,
    pub channels: usize,
    pub state: usize,
    pub len: usize,
}

impl ScanCase {
    /// Stable random instance: `A < 0`, `Δ > 0`.
    pub fn random(rng: &mut ChaCha8Rng, batch: usize, channels: usize, state: usize, len: usize) -> Self {
        let mut v = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        Self {
            u: v(batch * channels * len, -1.0, 1.0),
            delta: v(batch * channels * len, 0.01, 0.5),
            a: v(channels * state, -2.0, -0.05),
            b: v(batch * state * len, -1.0, 1.0),
            c: v(batch * state * len, -1.0, 1.0),
            d: v(channels, -1.0, 1.0),
            batch,
            channels,
            state,
            len,
        }
    }

    pub fn problem(&self) -> ScanProblem<'_, f64> {
        ScanProblem {
            u: &self.u,
            delta: &self.delta,
            a: &self.a,
            b: &self.b,
            c: &self.c,
            d: &self.d,
            batch: self.batch,
            channels: self.channels,
            state: self.state,
            len: self.len,
        }
    }
}

/// Unrolled solution of the recurrence:
/// `h[t] = Σ_{k ≤ t} exp(A·Σ_{j=k+1..t} Δ[j]) · Δ[k]·B[k]·u[k]`.
pub fn naive_scan(p: &ScanProblem<'_, f64>) -> Vec<f64> {
    let (nb, nd, ns, l) = (p.batch, p.channels, p.state, p.len);
    let mut y = vec![0.0; nb * nd * l];
    for n in 0..nb {
        for d in 0..nd {
            let seq = |arr: &[f64], t: usize| arr[(n * nd + d) * l + t];
            for t in 0..l {
                let mut acc = p.d[d] * seq(p.u, t);
                for s in 0..ns {
                    let a = p.a[d * ns + s];
                    let bc = |arr: &[f64], t: usize| arr[(n * ns + s) * l + t];
                    let mut h = 0.0;
                    for k in 0..=t {
                        let decay: f64 = ((k + 1)..=t).map(|j| seq(p.delta, j)).sum();
                        h += (a * decay).exp() * seq(p.delta, k) * bc(p.b, k) * seq(p.u, k);
                    }
                    acc += bc(p.c, t) * h;
                }
                y[(n * nd + d) * l + t] = acc;
            }
        }
    }
    y
}

/// Cross-correlation by direct summation over `[N, C, H, W]`, one group.
pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let xv = |ni: usize, c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((ni * cin + c) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                acc += w.data()[((co * cin + ci) * k + ky) * k + kx] * xv(ni, ci, y, xx);
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out).unwrap()
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn bilinear(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let src = |o: usize, inp: usize, out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inp - 1);
        (i0, (i0 + 1).min(inp - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            let (y0, y1, fy) = src(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1, fx) = src(ox, w, ow);
                let at = |y: usize, xx: usize| plane[y * w + xx];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out).unwrap()
}

/// One refinement stage composed from its sub-steps: upsample the coarse
/// logits, squash, reverse-gate the transformed features, add them back,
/// refine with two 3×3 convs and add the correction to the upsampled
/// logits. Returns `(logits, probs)`.
pub fn rma_stage(
    stage: &RmaStage,
    store: &ParamStore<f64>,
    coarse: &Tensor<f64>,
    features: &Tensor<f64>,
) -> (Tensor<f64>, Tensor<f64>) {
    let (n, c, h, w) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
        features.shape()[3],
    );
    // 1. p = upsample(logits), P = sigmoid(p)
    let p = bilinear(coarse, h, w);
    let prob = p.map(sigmoid);
    // 2. δ(f), evaluated on its own
    let delta = {
        let tape = Tape::inference();
        let g = Graph::new(&tape, store);
        stage.transform.forward(&g, &g.constant(features.clone())).unwrap().value().clone()
    };
    // 3. R = (1 - P) ⊙ δ(f), broadcast over channels
    // 4. m = R + f
    let mut m = features.clone();
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h * w {
                let gate = 1.0 - prob.data()[ni * h * w + i];
                let idx = (ni * c + ci) * h * w + i;
                m.data_mut()[idx] = gate * delta.data()[idx] + features.data()[idx];
            }
        }
    }
    // 5. p2 = conv3x3(relu(conv3x3(m)))
    let hidden = conv2d(
        &m,
        store.get(stage.refine1.weight),
        Some(store.get(stage.refine1.bias)),
        1,
        1,
    )
    .map(|v| v.max(0.0));
    let p2 = conv2d(
        &hidden,
        store.get(stage.refine2.weight),
        Some(store.get(stage.refine2.bias)),
        1,
        1,
    );
    // 6. logits = p + p2
    let logits = p.zip_map(&p2, |a, b| a + b).unwrap();
    let probs = logits.map(sigmoid);
    (logits, probs)
}

pub fn stage_values(out: &StageOutput<f64>) -> (Tensor<f64>, Tensor<f64>) {
    (out.logits.value().clone(), out.probs.value().clone())
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    // Mix of blobs, speckle and the occasional empty mask.
    match rng.random_range(0..10) {
        0 => BinaryMask::from_fn(h, w, |_, _| false),
        1..=4 => {
            let p: f64 = rng.random_range(0.05..0.95);
            let bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p)).collect();
            BinaryMask::new(h, w, bits).unwrap()
        }
        _ => {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let ry = rng.random_range(1.0..h as f64 / 2.0);
            let rx = rng.random_range(1.0..w as f64 / 2.0);
            BinaryMask::from_fn(h, w, |y, x| {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            })
        }
    }
}

/// Pixels of `m` that touch a non-member among their eight neighbours, the
/// outside of the image counting as non-member.
fn boundary_pixels(m: &BinaryMask) -> Vec<(f64, f64)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let member = |y: i64, x: i64| (0..h).contains(&y) && (0..w).contains(&x) && m.get(y as usize, x as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let touches_outside = [-1, 0, 1]
                .iter()
                .flat_map(|&dy| [-1, 0, 1].map(|dx| (dy, dx)))
                .any(|(dy, dx)| !member(y + dy, x + dx));
            if member(y, x) && touches_outside {
                out.push((y as f64, x as f64));
            }
        }
    }
    out
}

fn directed(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
    from.iter()
        .map(|&(y, x)| {
            to.iter()
                .map(|&(v, u)| ((y - v).powi(2) + (x - u).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// `[Dice, mIoU, Recall, Precision, F2, HD]` by counting pixels and
/// comparing every pair of boundary pixels.
pub fn brute_metrics(pred: &BinaryMask, gt: &BinaryMask) -> [f64; 6] {
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let frac = |num: f64, den: f64, empty: f64| if den == 0.0 { empty } else { num / den };
    let dice = frac(2.0 * tp, 2.0 * tp + fp + fn_, 1.0);
    let iou_fg = frac(tp, tp + fp + fn_, 1.0);
    let iou_bg = frac(tn, tn + fp + fn_, 1.0);
    let precision = frac(tp, tp + fp, if fn_ == 0.0 { 1.0 } else { 0.0 });
    let recall = frac(tp, tp + fn_, if fp == 0.0 { 1.0 } else { 0.0 });
    let f2 = frac(5.0 * precision * recall, 4.0 * precision + recall, 0.0);
    let (bp, bg) = (boundary_pixels(pred), boundary_pixels(gt));
    let hd = match (bp.is_empty(), bg.is_empty()) {
        (true, true) => 0.0,
        (false, false) => directed(&bp, &bg).max(directed(&bg, &bp)),
        _ => ((pred.height().pow(2) + pred.width().pow(2)) as f64).sqrt(),
    };
    [dice, (iou_fg + iou_bg) / 2.0, recall, precision, f2, hd]
}
