//! Directory datasets: `images/` and `masks/` paired by file stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rma_core::data::{synth_dataset, Sample};
use rma_core::ops::{bilinear_resize, nearest_resize};
use rma_core::Tensor;

use crate::error::{Error, Result};
use crate::fsutil::create_dir_all;
use crate::image_io::{read_image, read_mask, write_image, write_mask};

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm")
    )
}

fn list_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("{}: file name is not UTF-8", path.display())))?
            .to_string();
        if let Some(prev) = out.insert(stem, path.clone()) {
            return Err(Error::Dataset(format!(
                "{} and {} share a stem",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn resize(t: Tensor<f32>, size: usize, nearest: bool) -> Result<Tensor<f32>> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if (h, w) == (size, size) {
        return Ok(t);
    }
    let x = t.reshape(&[1, c, h, w])?;
    let y = if nearest {
        nearest_resize(&x, size, size)?
    } else {
        bilinear_resize(&x, size, size)?
    };
    Ok(y.reshape(&[c, size, size])?)
}

/// Stems of the pairs under `root`, in the order [`load_dataset`] uses.
pub fn pair_paths(root: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let images = list_by_stem(&root.join("images"))?;
    let masks = list_by_stem(&root.join("masks"))?;
    if let Some((_, p)) = images.iter().find(|(s, _)| !masks.contains_key(*s)) {
        return Err(Error::Dataset(format!("{}: no matching mask", p.display())));
    }
    if let Some((_, p)) = masks.iter().find(|(s, _)| !images.contains_key(*s)) {
        return Err(Error::Dataset(format!("{}: no matching image", p.display())));
    }
    Ok(images
        .into_iter()
        .map(|(stem, img)| {
            let mask = masks[&stem].clone();
            (stem, img, mask)
        })
        .collect())
}

/// Loads every pair under `root`, sorted by stem, resized to
/// `size × size` (bilinear for images, nearest for masks).
pub fn load_dataset(root: &Path, size: usize) -> Result<Vec<Sample>> {
    let pairs = pair_paths(root)?;
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("{}: no image/mask pairs", root.display())));
    }
    pairs
        .into_iter()
        .map(|(_, img, mask)| {
            let image = read_image(&img)?;
            let m = read_mask(&mask)?;
            if image.shape()[1..] != m.shape()[1..] {
                return Err(Error::Dataset(format!(
                    "{}: extent {:?} differs from its mask {:?}",
                    img.display(),
                    &image.shape()[1..],
                    &m.shape()[1..]
                )));
            }
            Ok(Sample::new(resize(image, size, false)?, resize(m, size, true)?)?)
        })
        .collect()
}

/// `synth:SEED:N` for a generated dataset, anything else is a directory.
pub enum DataSource {
    Synthetic { seed: u64, n: usize },
    Directory(PathBuf),
}

impl DataSource {
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.strip_prefix("synth:") {
            None => Ok(DataSource::Directory(spec.into())),
            Some(rest) => {
                let bad = || Error::Dataset(format!("expected synth:SEED:N, got `{spec}`"));
                let (seed, n) = rest.split_once(':').ok_or_else(bad)?;
                Ok(DataSource::Synthetic {
                    seed: seed.parse().map_err(|_| bad())?,
                    n: n.parse().map_err(|_| bad())?,
                })
            }
        }
    }

    pub fn load(&self, size: usize) -> Result<Vec<Sample>> {
        match self {
            DataSource::Synthetic { seed, n } => Ok(synth_dataset(*seed, *n, size)?),
            DataSource::Directory(root) => load_dataset(root, size),
        }
    }
}

/// Writes samples as `images/NNNN.png` and `masks/NNNN.png`.
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    let (images, masks) = (root.join("images"), root.join("masks"));
    create_dir_all(&images)?;
    create_dir_all(&masks)?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:04}.png");
        write_image(&images.join(&name), &s.image)?;
        write_mask(&masks.join(&name), &s.mask, 0.5)?;
    }
    Ok(())
}
