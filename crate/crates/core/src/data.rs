//! In-memory samples, a procedural liver-like dataset, splitting and batching.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::tensor::Tensor;

/// One image/mask pair: `image: [3, H, W]` in `[0, 1]`, `mask: [1, H, W]`
/// in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let (c, h, w) = dims3(&image)?;
        let (mc, mh, mw) = dims3(&mask)?;
        if c != 3 || mc != 1 || (h, w) != (mh, mw) {
            return Err(shape_mismatch("sample", &[1, h, w], mask.shape()));
        }
        Ok(Self { image, mask })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Fraction of mask pixels that are foreground.
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.data().iter().filter(|&&v| v > 0.5).count() as f64 / self.mask.len() as f64
    }
}

fn dims3(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(invalid("sample", "expected a [C, H, W] tensor")),
    }
}

/// Range every synthetic mask's foreground fraction falls in.
pub const SYNTH_FOREGROUND: (f64, f64) = (0.05, 0.6);

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    /// `(amplitude, phase)` of harmonics 2, 3, 4 of the contour.
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            cy: rng.random_range(0.35..0.65),
            cx: rng.random_range(0.35..0.65),
            radius: rng.random_range(0.15..0.38),
            harmonics: core::array::from_fn(|_| (rng.random_range(0.0..0.12), rng.random_range(0.0..TAU))),
        }
    }

    /// Smooth closed star-shaped contour in unit coordinates.
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let theta = Float::atan2(dy, dx);
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, &(amp, phase))| amp * Float::cos((k as f64 + 2.0) * theta + phase))
            .sum();
        Float::sqrt(dy * dy + dx * dx) <= self.radius * (1.0 + wobble)
    }
}

fn synth_sample(rng: &mut ChaCha8Rng, size: usize) -> Sample {
    let s = size as f64;
    loop {
        let blob = Blob::random(rng);
        let mask = Tensor::from_fn(&[1, size, size], |i| {
            let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
            blob.contains(y / s, x / s) as u8 as f32
        });
        let frac = mask.sum() as f64 / mask.len() as f64;
        if !(SYNTH_FOREGROUND.0..=SYNTH_FOREGROUND.1).contains(&frac) {
            continue;
        }
        // Organ brighter than a vertically graded background, each with a
        // low-frequency texture, plus pixel noise.
        let fg = rng.random_range(0.6..0.8);
        let bg = rng.random_range(0.15..0.3);
        let grade = rng.random_range(-0.1..0.1);
        let (fy, fx, phase) = (
            rng.random_range(2.0..6.0),
            rng.random_range(2.0..6.0),
            rng.random_range(0.0..TAU),
        );
        let noise = rng.random_range(0.02..0.06);
        let plane: Vec<f32> = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as f64 / s, (i % size) as f64 / s);
                let texture = 0.05 * Float::sin(TAU * fy * y + phase) * Float::cos(TAU * fx * x);
                let base = if mask.data()[i] > 0.5 { fg } else { bg + grade * (y - 0.5) };
                let n: f64 = rng.sample(StandardNormal);
                (base + texture + noise * n).clamp(0.0, 1.0) as f32
            })
            .collect();
        let mut image = Vec::with_capacity(3 * size * size);
        for _ in 0..3 {
            image.extend_from_slice(&plane);
        }
        let image = Tensor::new(&[3, size, size], image).expect("image length");
        return Sample { image, mask };
    }
}

/// `n` procedurally generated `size × size` pairs, identical for equal
/// seeds. Each mask's foreground fraction lies in [`SYNTH_FOREGROUND`].
pub fn synth_dataset(seed: u64, n: usize, size: usize) -> Result<Vec<Sample>> {
    if n == 0 || size < 8 {
        return Err(Error::Dataset("synthetic dataset needs n >= 1 and size >= 8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| synth_sample(&mut rng, size)).collect())
}

/// Train / validation / test partition of sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` by `seed` and cuts it 80/10/10. Validation and test get
/// at least one sample each once `n >= 3`.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = |n: usize| if n >= 3 { (Float::round(n as f64 * 0.1) as usize).max(1) } else { 0 };
    let (n_val, n_test) = (tenth(n), tenth(n));
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(n - n_test - n_val);
    Split { train: idx, val, test }
}

/// Stacks samples into `([B, 3, H, W], [B, 1, H, W])`.
pub fn stack_batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}
