//! Paired geometric augmentation of an image and its mask.

use num_traits::Float;
use rand::Rng;

use crate::data::Sample;
use crate::tensor::Tensor;

/// Largest rotation magnitude, in degrees.
pub const MAX_ROTATION_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub degrees: f64,
}

impl AugmentParams {
    /// Flips with probability 1/2 each, rotation uniform in
    /// `[-MAX_ROTATION_DEG, MAX_ROTATION_DEG]`. Always consumes the same
    /// number of draws.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            degrees: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

fn planes(t: &Tensor<f32>) -> (usize, usize, usize) {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    (t.len() / (h * w), h, w)
}

/// Mirrors every plane left to right.
pub fn hflip(t: &Tensor<f32>) -> Tensor<f32> {
    let (_, _, w) = planes(t);
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Mirrors every plane top to bottom.
pub fn vflip(t: &Tensor<f32>) -> Tensor<f32> {
    let (n, h, w) = planes(t);
    let src = t.data();
    let mut out = t.clone();
    let dst = out.data_mut();
    for p in 0..n {
        for y in 0..h {
            let (s, d) = ((p * h + y) * w, (p * h + h - 1 - y) * w);
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    out
}

/// Rotates every plane counter-clockwise by `degrees` about the image
/// centre. Samples falling outside the source read as zero.
pub fn rotate(t: &Tensor<f32>, degrees: f64, interp: Interp) -> Tensor<f32> {
    let (n, h, w) = planes(t);
    let (sin, cos) = Float::sin_cos(degrees.to_radians());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = t.data();
    let at = |p: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(p * h + y as usize) * w + x as usize] as f64
        }
    };
    let mut out = t.clone();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            // Inverse map from output to source coordinates.
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            for p in 0..n {
                let v = match interp {
                    Interp::Nearest => at(p, Float::round(sy) as isize, Float::round(sx) as isize),
                    Interp::Bilinear => {
                        let (y0, x0) = (Float::floor(sy), Float::floor(sx));
                        let (fy, fx) = (sy - y0, sx - x0);
                        let (y0, x0) = (y0 as isize, x0 as isize);
                        (1.0 - fy) * ((1.0 - fx) * at(p, y0, x0) + fx * at(p, y0, x0 + 1))
                            + fy * ((1.0 - fx) * at(p, y0 + 1, x0) + fx * at(p, y0 + 1, x0 + 1))
                    }
                };
                dst[(p * h + y) * w + x] = v as f32;
            }
        }
    }
    out
}

/// Applies one set of drawn parameters to both tensors.
pub fn apply(sample: &Sample, params: &AugmentParams) -> Sample {
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if params.hflip {
        image = hflip(&image);
        mask = hflip(&mask);
    }
    if params.vflip {
        image = vflip(&image);
        mask = vflip(&mask);
    }
    Sample {
        image: rotate(&image, params.degrees, Interp::Bilinear),
        mask: rotate(&mask, params.degrees, Interp::Nearest),
    }
}

pub fn augment<R: Rng + ?Sized>(sample: &Sample, rng: &mut R) -> Sample {
    apply(sample, &AugmentParams::sample(rng))
}
