//! Segmentation metrics on binary masks.
//!
//! Empty-set conventions: when prediction and ground truth are both empty
//! every overlap metric is 1 and the Hausdorff distance is 0; when exactly
//! one is empty, Dice is 0 and the Hausdorff distance is the image
//! diagonal.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, shape_mismatch, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Probabilities at or above this value count as foreground.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(invalid("mask", "data length does not match extent"));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    /// Thresholds a single-plane map (`[.., H, W]` with one plane).
    pub fn from_tensor<T: Real>(map: &Tensor<T>, threshold: f64) -> Result<Self> {
        let r = map.rank();
        if r < 2 || map.len() != map.shape()[r - 2] * map.shape()[r - 1] {
            return Err(invalid("mask", "expected a single H x W plane"));
        }
        let t = T::lit(threshold);
        Ok(Self {
            height: map.shape()[r - 2],
            width: map.shape()[r - 1],
            data: map.data().iter().map(|&v| v >= t).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground pixels with at least one 8-neighbor outside the mask;
    /// positions beyond the image border count as outside.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height as isize, self.width as isize);
        let inside = |y: isize, x: isize| y >= 0 && y < h && x >= 0 && x < w && self.get(y as usize, x as usize);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !inside(y, x) {
                    continue;
                }
                let edge = (-1..=1).any(|dy| (-1..=1).any(|dx| !inside(y + dy, x + dx)));
                if edge {
                    out.push((y as usize, x as usize));
                }
            }
        }
        out
    }

    fn check_same_extent(&self, other: &Self) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(shape_mismatch(
                "metrics",
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio_or(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn dice(&self) -> f64 {
        ratio_or(2 * self.tp, 2 * self.tp + self.fp + self.fn_, 1.0)
    }

    /// Foreground intersection over union.
    pub fn iou(&self) -> f64 {
        ratio_or(self.tp, self.tp + self.fp + self.fn_, 1.0)
    }

    pub fn background_iou(&self) -> f64 {
        ratio_or(self.tn, self.tn + self.fp + self.fn_, 1.0)
    }

    pub fn precision(&self) -> f64 {
        ratio_or(self.tp, self.tp + self.fp, if self.fn_ == 0 { 1.0 } else { 0.0 })
    }

    pub fn recall(&self) -> f64 {
        ratio_or(self.tp, self.tp + self.fn_, if self.fp == 0 { 1.0 } else { 0.0 })
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    pred.check_same_extent(gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// F-beta with beta = 2 (recall weighted four times as much as precision).
pub fn f2_score(precision: f64, recall: f64) -> f64 {
    let den = 4.0 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        5.0 * precision * recall / den
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub dice: f64,
    /// Mean of foreground and background IoU.
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f2: f64,
    /// Symmetric Hausdorff distance between boundaries, in pixels.
    pub hd: f64,
}

impl MetricsRecord {
    /// Column order used in reports.
    pub const COLUMNS: [&'static str; 6] = ["Dice", "mIoU", "Recall", "Precision", "F2", "HD"];

    pub fn values(&self) -> [f64; 6] {
        [self.dice, self.miou, self.recall, self.precision, self.f2, self.hd]
    }

    /// Field-wise arithmetic mean; `None` for an empty slice.
    pub fn mean(records: &[MetricsRecord]) -> Option<MetricsRecord> {
        if records.is_empty() {
            return None;
        }
        let n = records.len() as f64;
        let mut sum = [0.0; 6];
        for r in records {
            for (s, v) in sum.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        let [dice, miou, recall, precision, f2, hd] = sum.map(|s| s / n);
        Some(MetricsRecord {
            dice,
            miou,
            recall,
            precision,
            f2,
            hd,
        })
    }
}

pub fn compute_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricsRecord> {
    let c = confusion_counts(pred, gt)?;
    let (precision, recall) = (c.precision(), c.recall());
    Ok(MetricsRecord {
        dice: c.dice(),
        miou: 0.5 * (c.iou() + c.background_iou()),
        recall,
        precision,
        f2: f2_score(precision, recall),
        hd: hausdorff(pred, gt)?,
    })
}

/// Squared Euclidean distance transform of one row or column: `out[q]` is
/// `min_p (q - p)^2 + f[p]` over the finite entries of `f`, infinity if
/// there are none. Lower envelope of parabolas, linear time.
fn edt_1d(f: &[f64], out: &mut [f64], hull: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    hull.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        while let Some(&v) = hull.last() {
            let vf = v as f64;
            let s = ((fq + qf * qf) - (f[v] + vf * vf)) / (2.0 * qf - 2.0 * vf);
            if s <= *bounds.last().unwrap_or(&f64::NEG_INFINITY) {
                hull.pop();
                bounds.pop();
            } else {
                bounds.push(s);
                break;
            }
        }
        if hull.is_empty() {
            bounds.push(f64::NEG_INFINITY);
        }
        hull.push(q);
    }
    if hull.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    // bounds[k] is where parabola hull[k] starts to win.
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < hull.len() && bounds[k + 1] < qf {
            k += 1;
        }
        let v = hull[k];
        let d = qf - v as f64;
        *o = d * d + f[v];
    }
}

/// Squared distance from every pixel to the nearest of `sites`.
fn squared_distance_field(h: usize, w: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; h * w];
    for &(y, x) in sites {
        grid[y * w + x] = 0.0;
    }
    let (mut hull, mut bounds) = (Vec::new(), Vec::new());
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut col_out, &mut hull, &mut bounds);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..][..w], &mut row_out, &mut hull, &mut bounds);
        grid[y * w..][..w].copy_from_slice(&row_out);
    }
    grid
}

fn directed_hausdorff(from: &[(usize, usize)], field: &[f64], w: usize) -> f64 {
    Float::sqrt(from.iter().map(|&(y, x)| field[y * w + x]).fold(0.0, f64::max))
}

/// Symmetric Hausdorff distance between the boundaries of two masks.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_extent(b)?;
    let (h, w) = (a.height, a.width);
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(Float::sqrt((h * h + w * w) as f64)),
        _ => {}
    }
    let (ba, bb) = (a.boundary(), b.boundary());
    let to_b = squared_distance_field(h, w, &bb);
    let to_a = squared_distance_field(h, w, &ba);
    Ok(directed_hausdorff(&ba, &to_b, w).max(directed_hausdorff(&bb, &to_a, w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(h: usize, w: usize, y: usize, x: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |yy, xx| yy == y && xx == x)
    }

    #[test]
    fn three_four_five() {
        let a = single(8, 8, 0, 0);
        let b = single(8, 8, 3, 4);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(hausdorff(&b, &a).unwrap(), 5.0);
    }

    #[test]
    fn identical_masks_are_perfect() {
        let m = BinaryMask::from_fn(10, 12, |y, x| (2..7).contains(&y) && (3..9).contains(&x));
        let r = compute_metrics(&m, &m).unwrap();
        assert_eq!(r.values(), [1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn complement_has_no_true_hits() {
        let m = BinaryMask::from_fn(6, 6, |y, x| (y + x) % 3 == 0);
        let inv = BinaryMask::from_fn(6, 6, |y, x| (y + x) % 3 != 0);
        let c = confusion_counts(&inv, &m).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn f2_closed_form() {
        assert!((f2_score(0.5, 1.0) - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_conventions() {
        let e = BinaryMask::from_fn(3, 4, |_, _| false);
        let m = single(3, 4, 1, 1);
        let both = compute_metrics(&e, &e).unwrap();
        assert_eq!((both.dice, both.hd), (1.0, 0.0));
        let one = compute_metrics(&e, &m).unwrap();
        assert_eq!(one.dice, 0.0);
        assert_eq!(one.hd, 5.0);
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let m = BinaryMask::from_fn(7, 7, |y, x| (1..6).contains(&y) && (1..6).contains(&x));
        assert_eq!(m.boundary().len(), 16);
    }

    #[test]
    fn extent_mismatch_is_error() {
        let a = single(3, 3, 0, 0);
        let b = single(3, 4, 0, 0);
        assert!(compute_metrics(&a, &b).is_err());
    }
}
