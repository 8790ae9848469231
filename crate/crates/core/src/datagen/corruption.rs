//! Codec-free image corruptions with five severity levels each.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::image::{Dataset, Image, LabeledExample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    BoxBlur,
    Brightness,
    Contrast,
    Pixelate,
    Occlusion,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 8] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
        CorruptionKind::Occlusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::Occlusion => "occlusion",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown corruption kind {s:?}")))
    }
}

// Severity tables, index = severity - 1.
const GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.08, 0.12, 0.16, 0.20];
const SHOT_PHOTONS: [f64; 5] = [500.0, 250.0, 100.0, 60.0, 30.0];
const IMPULSE_PROB: [f64; 5] = [0.01, 0.03, 0.06, 0.10, 0.17];
const BLUR_KERNEL: [usize; 5] = [3, 3, 5, 5, 7];
const BLUR_PASSES: [usize; 5] = [1, 2, 1, 2, 3];
const BRIGHTNESS_OFFSET: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];
const CONTRAST_FACTOR: [f64; 5] = [0.75, 0.6, 0.45, 0.3, 0.2];
const PIXELATE_SCALE: [f64; 5] = [0.8, 0.65, 0.5, 0.4, 0.3];
const OCCLUSION_FRACTION: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];

pub const OCCLUSION_FILL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        let spec = Self { kind, severity };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::invalid(format!(
                "corruption severity must be in 1..=5, got {}",
                self.severity
            )));
        }
        Ok(())
    }

    /// Uniform kind and uniform severity.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let kind = CorruptionKind::ALL[rng.random_range(0..CorruptionKind::ALL.len())];
        let severity = rng.random_range(1..=5u8);
        Self { kind, severity }
    }

    fn level(&self) -> usize {
        usize::from(self.severity - 1)
    }
}

pub fn apply_corruption<R: Rng + ?Sized>(image: &Image, spec: CorruptionSpec, rng: &mut R) -> Result<Image> {
    spec.validate()?;
    let s = spec.level();
    let out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let sigma = GAUSSIAN_SIGMA[s];
            let px = image
                .pixels()
                .iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + sigma * z
                })
                .collect();
            image.with_pixels(px)
        }
        CorruptionKind::ShotNoise => {
            let photons = SHOT_PHOTONS[s];
            let px = image
                .pixels()
                .iter()
                .map(|&v| {
                    let rate = v * photons;
                    if rate <= 0.0 {
                        0.0
                    } else {
                        let count: f64 = Poisson::new(rate).expect("positive rate").sample(rng);
                        count / photons
                    }
                })
                .collect();
            image.with_pixels(px)
        }
        CorruptionKind::ImpulseNoise => {
            let p = IMPULSE_PROB[s];
            let px = image
                .pixels()
                .iter()
                .map(|&v| {
                    if rng.random::<f64>() < p {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        v
                    }
                })
                .collect();
            image.with_pixels(px)
        }
        CorruptionKind::BoxBlur => {
            let mut out = image.clone();
            for _ in 0..BLUR_PASSES[s] {
                out = box_blur(&out, BLUR_KERNEL[s] / 2);
            }
            out
        }
        CorruptionKind::Brightness => {
            let offset = BRIGHTNESS_OFFSET[s];
            image.with_pixels(image.pixels().iter().map(|v| v + offset).collect())
        }
        CorruptionKind::Contrast => {
            let factor = CONTRAST_FACTOR[s];
            let ch = image.channels();
            let means: Vec<f64> = (0..ch).map(|c| image.channel_mean(c)).collect();
            let px = image
                .pixels()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let m = means[i % ch];
                    (v - m) * factor + m
                })
                .collect();
            image.with_pixels(px)
        }
        CorruptionKind::Pixelate => pixelate(image, PIXELATE_SCALE[s]),
        CorruptionKind::Occlusion => {
            let (h, w, ch) = image.shape();
            let side = ((OCCLUSION_FRACTION[s] * h.min(w) as f64).round() as usize).max(1);
            let y0 = rng.random_range(0..=h - side);
            let x0 = rng.random_range(0..=w - side);
            let mut out = image.clone();
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    for c in 0..ch {
                        out.set(y, x, c, OCCLUSION_FILL);
                    }
                }
            }
            out
        }
    };
    Ok(out)
}

/// One pass of a `(2r+1)²` mean filter with edge replication (separable).
fn box_blur(image: &Image, radius: usize) -> Image {
    let (h, w, ch) = image.shape();
    let r = radius as isize;
    let norm = (2 * radius + 1) as f64;
    let mut horizontal = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = (-r..=r)
                    .map(|d| image.at_clamped(y as isize, x as isize + d, c))
                    .sum();
                horizontal.set(y, x, c, s / norm);
            }
        }
    }
    let mut out = horizontal.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = (-r..=r)
                    .map(|d| horizontal.at_clamped(y as isize + d, x as isize, c))
                    .sum();
                out.set(y, x, c, s / norm);
            }
        }
    }
    out.clamp();
    out
}

/// Area-average down to `scale` of the size, then nearest-neighbour back up.
fn pixelate(image: &Image, scale: f64) -> Image {
    let (h, w, ch) = image.shape();
    let sh = ((h as f64 * scale).round() as usize).clamp(1, h);
    let sw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let cell_y = |y: usize| y * sh / h;
    let cell_x = |x: usize| x * sw / w;
    let mut sums = vec![0.0; sh * sw * ch];
    let mut counts = vec![0usize; sh * sw];
    for y in 0..h {
        for x in 0..w {
            let cell = cell_y(y) * sw + cell_x(x);
            counts[cell] += 1;
            for c in 0..ch {
                sums[cell * ch + c] += image.at(y, x, c);
            }
        }
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let cell = cell_y(y) * sw + cell_x(x);
            for c in 0..ch {
                out.set(y, x, c, sums[cell * ch + c] / counts[cell] as f64);
            }
        }
    }
    out.clamp();
    out
}

/// Corrupts each example independently with probability `rate`, drawing a
/// uniform kind and severity for each corrupted one.
pub fn corrupt_dataset<R: Rng + ?Sized>(dataset: &Dataset, rate: f64, rng: &mut R) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("corruption rate must be in [0, 1], got {rate}")));
    }
    let examples = dataset
        .examples()
        .iter()
        .map(|e| {
            if rng.random::<f64>() < rate {
                let spec = CorruptionSpec::sample(rng);
                Ok(LabeledExample {
                    image: apply_corruption(&e.image, spec, rng)?,
                    label: e.label,
                    corrupted: true,
                })
            } else {
                Ok(e.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, dataset.num_classes())
}
