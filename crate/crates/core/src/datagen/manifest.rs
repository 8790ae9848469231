//! Flat binary dataset files described by a small JSON manifest.
//!
//! ```json
//! {"height":16,"width":16,"channels":1,"count":200,"num_classes":4,
//!  "pixels":"train.pixels","labels":"train.labels"}
//! ```
//!
//! The pixel file holds `count * height * width * channels` bytes (row-major,
//! channels interleaved), the label file `count` bytes. `labels` may be
//! `null` for unlabeled sets. Paths are relative to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{Dataset, Image, LabeledExample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub count: usize,
    pub num_classes: usize,
    pub pixels: String,
    pub labels: Option<String>,
}

pub fn pixel_to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn byte_to_pixel(b: u8) -> f64 {
    f64::from(b) / 255.0
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

pub fn load_manifest_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let raw = read_file(manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&raw).map_err(|e| Error::BadManifest {
        path: manifest_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let bad = |reason: &str| Error::BadManifest {
        path: manifest_path.to_path_buf(),
        reason: reason.to_string(),
    };
    if manifest.height == 0 || manifest.width == 0 || manifest.count == 0 {
        return Err(bad("height, width and count must be positive"));
    }
    if !(manifest.channels == 1 || manifest.channels == 3) {
        return Err(bad("channels must be 1 or 3"));
    }
    if manifest.num_classes == 0 || manifest.num_classes > 256 {
        return Err(bad("num_classes must be in 1..=256"));
    }

    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let pixels_path = base.join(&manifest.pixels);
    let pixels = read_file(&pixels_path)?;
    let per_image = manifest.height * manifest.width * manifest.channels;
    if pixels.len() != manifest.count * per_image {
        return Err(Error::RecordCountMismatch {
            path: pixels_path,
            declared: manifest.count,
            actual: pixels.len() / per_image,
        });
    }

    let labels = match &manifest.labels {
        Some(rel) => {
            let labels_path = base.join(rel);
            let bytes = read_file(&labels_path)?;
            if bytes.len() != manifest.count {
                return Err(Error::RecordCountMismatch {
                    path: labels_path,
                    declared: manifest.count,
                    actual: bytes.len(),
                });
            }
            if let Some(&label) = bytes.iter().find(|&&b| usize::from(b) >= manifest.num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: label.into(),
                    num_classes: manifest.num_classes,
                });
            }
            Some(bytes)
        }
        None => None,
    };

    let examples = pixels
        .chunks(per_image)
        .enumerate()
        .map(|(i, chunk)| {
            let px = chunk.iter().copied().map(byte_to_pixel).collect();
            Ok(LabeledExample {
                image: Image::new(manifest.height, manifest.width, manifest.channels, px)?,
                label: labels.as_ref().map(|l| usize::from(l[i])),
                corrupted: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, manifest.num_classes)
}

/// Writes `<dir>/<stem>.json`, `<stem>.pixels` and (if labeled) `<stem>.labels`.
/// Pixels are quantized to bytes. Returns the manifest path.
pub fn save_manifest_dataset(dataset: &Dataset, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (height, width, channels) = dataset.image_shape();
    let mut pixels = Vec::with_capacity(dataset.len() * height * width * channels);
    for e in dataset.examples() {
        pixels.extend(e.image.pixels().iter().copied().map(pixel_to_byte));
    }
    let pixels_name = format!("{stem}.pixels");
    fs::write(dir.join(&pixels_name), pixels)?;

    let labels_name = if dataset.is_labeled() {
        let name = format!("{stem}.labels");
        let bytes = dataset
            .labels()?
            .into_iter()
            .map(|l| u8::try_from(l).map_err(|_| Error::invalid("label does not fit in a byte")))
            .collect::<Result<Vec<u8>>>()?;
        fs::write(dir.join(&name), bytes)?;
        Some(name)
    } else {
        None
    };

    let manifest = Manifest {
        height,
        width,
        channels,
        count: dataset.len(),
        num_classes: dataset.num_classes(),
        pixels: pixels_name,
        labels: labels_name,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
