//! PNG / PGM reading and writing.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use rma_core::Tensor;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        msg: e.to_string(),
    })
}

/// An image as `[3, H, W]` in `[0, 1]`; grayscale is replicated to three
/// channels and alpha is dropped.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let data = (0..3 * h * w)
        .map(|i| {
            let (c, p) = (i / (h * w), i % (h * w));
            raw[p * 3 + c] as f32 / 255.0
        })
        .collect();
    Ok(Tensor::new(&[3, h, w], data)?)
}

/// A mask as `[1, H, W]` in `{0, 1}`. Any stored value other than 0 or 255
/// is an error naming the file.
pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?;
    let luma = img.to_luma8();
    if let Some(v) = luma.as_raw().iter().find(|&&v| v != 0 && v != 255) {
        return Err(Error::Image {
            path: path.into(),
            msg: format!("mask value {v} is neither 0 nor 255"),
        });
    }
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data = luma.as_raw().iter().map(|&v| (v == 255) as u8 as f32).collect();
    Ok(Tensor::new(&[1, h, w], data)?)
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match ImageFormat::from_path(path) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Pnm)) => Ok(f),
        _ => Err(Error::Image {
            path: path.into(),
            msg: "output must end in .png or .pgm".into(),
        }),
    }
}

/// Writes an 8-bit single-channel image atomically; format by extension.
pub fn write_gray(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let format = format_for(path)?;
    let img = GrayImage::from_raw(width as u32, height as u32, pixels).ok_or_else(|| Error::Image {
        path: path.into(),
        msg: "pixel buffer does not match extent".into(),
    })?;
    let mut buf = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(img)
        .write_to(&mut buf, format)
        .map_err(|e| Error::Image {
            path: path.into(),
            msg: e.to_string(),
        })?;
    atomic_write(path, &buf.into_inner())
}

fn plane(t: &Tensor<f32>) -> (usize, usize) {
    let s = t.shape();
    (s[s.len() - 2], s[s.len() - 1])
}

/// Thresholded map written as `{0, 255}`.
pub fn write_mask(path: &Path, probs: &Tensor<f32>, threshold: f32) -> Result<()> {
    let (h, w) = plane(probs);
    let px = probs.data()[..h * w].iter().map(|&v| if v >= threshold { 255 } else { 0 }).collect();
    write_gray(path, w, h, px)
}

/// Probability map scaled to `0..=255`.
pub fn write_probability(path: &Path, probs: &Tensor<f32>) -> Result<()> {
    let (h, w) = plane(probs);
    let px = probs.data()[..h * w]
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_gray(path, w, h, px)
}

/// RGB image from `[3, H, W]` in `[0, 1]`, written atomically.
pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let format = format_for(path)?;
    let (h, w) = plane(image);
    let d = image.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            raw.push((d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized above");
    let dynamic = if format == ImageFormat::Pnm {
        // PGM: the channels are identical for the synthetic data.
        DynamicImage::ImageLuma8(DynamicImage::ImageRgb8(img).to_luma8())
    } else {
        DynamicImage::ImageRgb8(img)
    };
    let mut buf = Cursor::new(Vec::new());
    dynamic.write_to(&mut buf, format).map_err(|e| Error::Image {
        path: path.into(),
        msg: e.to_string(),
    })?;
    atomic_write(path, &buf.into_inner())
}
