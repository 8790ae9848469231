//! Random mixed augmentation and the simple augmentation pipeline.
//!
//! The mixed ("complex") view stacks one to three randomly chosen operations
//! into each of `num_sequences` chains, mixes the chain outputs with
//! Dirichlet weights and blends the mix back into the original with a
//! Beta-distributed skip weight. None of the operations coincide with a
//! corruption kind. The simple view is a light crop/jitter/blur/flip
//! pipeline used as the contrastive intermediary.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::datagen::Image;
use crate::error::{Error, Result};
use crate::rng::dirichlet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Autocontrast,
    Equalize,
    Rotate,
    Posterize,
    Solarize,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl AugKind {
    pub const ALL: [AugKind; 9] = [
        AugKind::Autocontrast,
        AugKind::Equalize,
        AugKind::Rotate,
        AugKind::Posterize,
        AugKind::Solarize,
        AugKind::ShearX,
        AugKind::ShearY,
        AugKind::TranslateX,
        AugKind::TranslateY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::Autocontrast => "autocontrast",
            AugKind::Equalize => "equalize",
            AugKind::Rotate => "rotate",
            AugKind::Posterize => "posterize",
            AugKind::Solarize => "solarize",
            AugKind::ShearX => "shear_x",
            AugKind::ShearY => "shear_y",
            AugKind::TranslateX => "translate_x",
            AugKind::TranslateY => "translate_y",
        }
    }
}

pub const MAX_ROTATE_DEGREES: f64 = 30.0;
pub const MAX_SHEAR: f64 = 0.3;
pub const MAX_TRANSLATE_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugOp {
    pub kind: AugKind,
    /// Strength in `[0, 1]`.
    pub magnitude: f64,
}

impl AugOp {
    pub fn new(kind: AugKind, magnitude: f64) -> Self {
        Self {
            kind,
            magnitude: magnitude.clamp(0.0, 1.0),
        }
    }
}

pub fn posterize_levels(magnitude: f64) -> usize {
    (8.0 - 6.0 * magnitude.clamp(0.0, 1.0)).round() as usize
}

pub fn apply_op(image: &Image, op: AugOp) -> Image {
    let m = op.magnitude.clamp(0.0, 1.0);
    let (h, w, _) = image.shape();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    match op.kind {
        AugKind::Autocontrast => autocontrast(image),
        AugKind::Equalize => equalize(image),
        AugKind::Rotate => {
            let theta = (m * MAX_ROTATE_DEGREES).to_radians();
            let (sin, cos) = theta.sin_cos();
            // inverse mapping: sample the source at R(-θ)·(p - c) + c
            resample(image, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                (cos * dy - sin * dx + cy, sin * dy + cos * dx + cx)
            })
        }
        AugKind::Posterize => {
            let levels = posterize_levels(m);
            let top = (levels - 1) as f64;
            image.with_pixels(
                image
                    .pixels()
                    .iter()
                    .map(|&v| ((v * levels as f64).floor().min(top)) / top)
                    .collect(),
            )
        }
        AugKind::Solarize => {
            let threshold = 1.0 - m;
            image.with_pixels(
                image
                    .pixels()
                    .iter()
                    .map(|&v| if v > threshold { 1.0 - v } else { v })
                    .collect(),
            )
        }
        AugKind::ShearX => {
            let s = m * MAX_SHEAR;
            resample(image, |y, x| (y, x + s * (y - cy)))
        }
        AugKind::ShearY => {
            let s = m * MAX_SHEAR;
            resample(image, |y, x| (y + s * (x - cx), x))
        }
        AugKind::TranslateX => {
            let shift = m * MAX_TRANSLATE_FRACTION * w as f64;
            resample(image, |y, x| (y, x - shift))
        }
        AugKind::TranslateY => {
            let shift = m * MAX_TRANSLATE_FRACTION * h as f64;
            resample(image, |y, x| (y - shift, x))
        }
    }
}

/// Builds an image whose pixel `(y, x)` is the bilinear sample of `image`
/// at `source(y, x)`.
fn resample(image: &Image, source: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (h, w, ch) = image.shape();
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y as f64, x as f64);
            for c in 0..ch {
                out.set(y, x, c, image.sample_bilinear(sy, sx, c));
            }
        }
    }
    out.clamp();
    out
}

fn autocontrast(image: &Image) -> Image {
    let (h, w, ch) = image.shape();
    let mut out = image.clone();
    for c in 0..ch {
        let values = (0..h * w).map(|i| image.pixels()[i * ch + c]);
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), v| (l.min(v), u.max(v)));
        if hi - lo < 1e-6 {
            continue;
        }
        for i in 0..h * w {
            let v = image.pixels()[i * ch + c];
            out.pixels_mut()[i * ch + c] = (v - lo) / (hi - lo);
        }
    }
    out.clamp();
    out
}

/// Histogram equalization on 256 bins per channel (PIL's lookup rule).
fn equalize(image: &Image) -> Image {
    let (h, w, ch) = image.shape();
    let n = h * w;
    let mut out = image.clone();
    for c in 0..ch {
        let bins: Vec<usize> = (0..n)
            .map(|i| (image.pixels()[i * ch + c] * 255.0).round() as usize)
            .collect();
        let mut hist = [0usize; 256];
        for &b in &bins {
            hist[b] += 1;
        }
        let last_nonzero = hist.iter().rposition(|&v| v > 0).unwrap_or(0);
        let step = (n - hist[last_nonzero]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0usize; 256];
        let mut cum = step / 2;
        for (i, &count) in hist.iter().enumerate() {
            lut[i] = (cum / step).min(255);
            cum += count;
        }
        for (i, &b) in bins.iter().enumerate() {
            out.pixels_mut()[i * ch + c] = lut[b] as f64 / 255.0;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugChain {
    ops: Vec<AugOp>,
}

impl AugChain {
    pub fn new(ops: Vec<AugOp>) -> Result<Self> {
        if !(1..=3).contains(&ops.len()) {
            return Err(Error::invalid(format!("augmentation chain length must be 1..=3, got {}", ops.len())));
        }
        Ok(Self { ops })
    }

    pub fn ops(&self) -> &[AugOp] {
        &self.ops
    }

    pub fn depth(&self) -> usize {
        self.ops.len()
    }

    pub fn apply(&self, image: &Image) -> Image {
        self.ops.iter().fold(image.clone(), |img, &op| apply_op(&img, op))
    }
}

/// Depth uniform in {1, 2, 3}; kinds and magnitudes uniform.
pub fn sample_chain<R: Rng + ?Sized>(rng: &mut R) -> AugChain {
    sample_chain_from(&AugKind::ALL, rng)
}

/// Like [`sample_chain`] but drawing kinds from `kinds` only.
pub fn sample_chain_from<R: Rng + ?Sized>(kinds: &[AugKind], rng: &mut R) -> AugChain {
    let depth = rng.random_range(1..=3);
    let ops = (0..depth)
        .map(|_| AugOp::new(kinds[rng.random_range(0..kinds.len())], rng.random::<f64>()))
        .collect();
    AugChain { ops }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub num_sequences: usize,
    pub alpha: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            num_sequences: 3,
            alpha: 1.0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_sequences == 0 {
            return Err(Error::invalid("num_sequences must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// All random choices behind one mixed augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixDraw {
    pub weights: Vec<f64>,
    pub eta: f64,
    pub chains: Vec<AugChain>,
}

impl MixDraw {
    pub fn sample<R: Rng + ?Sized>(cfg: &MixConfig, rng: &mut R) -> Result<Self> {
        Self::sample_from(cfg, &AugKind::ALL, rng)
    }

    pub fn sample_from<R: Rng + ?Sized>(cfg: &MixConfig, kinds: &[AugKind], rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let weights = dirichlet(cfg.alpha, cfg.num_sequences, rng);
        let eta = Beta::new(cfg.alpha, cfg.alpha)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(rng);
        let chains = (0..cfg.num_sequences)
            .map(|_| sample_chain_from(kinds, rng))
            .collect();
        Ok(Self { weights, eta, chains })
    }

    /// `η·x + (1-η)·Σ wᵢ·chainᵢ(x)`, clamped.
    pub fn apply(&self, image: &Image) -> Image {
        if self.eta == 1.0 {
            return image.clone();
        }
        let mut mixed = vec![0.0; image.len()];
        for (w, chain) in self.weights.iter().zip(&self.chains) {
            let out = chain.apply(image);
            for (m, v) in mixed.iter_mut().zip(out.pixels()) {
                *m += w * v;
            }
        }
        let px = image
            .pixels()
            .iter()
            .zip(&mixed)
            .map(|(x, s)| self.eta * x + (1.0 - self.eta) * s)
            .collect();
        image.with_pixels(px)
    }
}

pub fn augmix<R: Rng + ?Sized>(image: &Image, cfg: &MixConfig, rng: &mut R) -> Result<Image> {
    Ok(MixDraw::sample(cfg, rng)?.apply(image))
}

/// Random choices of the simple augmentation pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleAugParams {
    /// Crop window `(top, left, height, width)` in pixels.
    pub crop: (f64, f64, f64, f64),
    /// `(gain, offset)` when intensity jitter fires.
    pub jitter: Option<(f64, f64)>,
    pub grayscale: bool,
    pub blur: bool,
    pub flip: bool,
}

pub const CROP_AREA: (f64, f64) = (0.6, 1.0);
pub const JITTER_PROB: f64 = 0.8;
pub const GRAYSCALE_PROB: f64 = 0.2;
pub const BLUR_PROB: f64 = 0.5;
pub const FLIP_PROB: f64 = 0.5;

impl SimpleAugParams {
    /// Full-frame crop with every probabilistic stage skipped.
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            crop: (0.0, 0.0, height as f64, width as f64),
            jitter: None,
            grayscale: false,
            blur: false,
            flip: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let (h, w) = (height as f64, width as f64);
        let area = rng.random_range(CROP_AREA.0..=CROP_AREA.1);
        let log_ratio = rng.random_range((3.0f64 / 4.0).ln()..=(4.0f64 / 3.0).ln());
        let ratio = log_ratio.exp();
        let cw = ((area * ratio).sqrt() * w).min(w);
        let ch = ((area / ratio).sqrt() * h).min(h);
        let top = rng.random_range(0.0..=h - ch);
        let left = rng.random_range(0.0..=w - cw);
        let jitter = rng
            .random_bool(JITTER_PROB)
            .then(|| (rng.random_range(0.8..=1.2), rng.random_range(-0.1..=0.1)));
        Self {
            crop: (top, left, ch, cw),
            jitter,
            grayscale: rng.random_bool(GRAYSCALE_PROB),
            blur: rng.random_bool(BLUR_PROB),
            flip: rng.random_bool(FLIP_PROB),
        }
    }

    pub fn apply(&self, image: &Image) -> Image {
        let (h, w, ch) = image.shape();
        let (top, left, crop_h, crop_w) = self.crop;
        let (sy, sx) = (crop_h / h as f64, crop_w / w as f64);
        let mut out = resample(image, |y, x| (top + (y + 0.5) * sy - 0.5, left + (x + 0.5) * sx - 0.5));
        if let Some((gain, offset)) = self.jitter {
            for v in out.pixels_mut() {
                *v = *v * gain + offset;
            }
            out.clamp();
        }
        if self.grayscale && ch > 1 {
            for i in 0..h * w {
                let px = &mut out.pixels_mut()[i * ch..(i + 1) * ch];
                let mean = px.iter().sum::<f64>() / ch as f64;
                px.fill(mean);
            }
        }
        if self.blur {
            out = gaussian_blur3(&out);
        }
        if self.flip {
            out = hflip(&out);
        }
        out
    }
}

pub fn simple_augment<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    let (h, w, _) = image.shape();
    SimpleAugParams::sample(h, w, rng).apply(image)
}

pub fn hflip(image: &Image) -> Image {
    let (h, w, ch) = image.shape();
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out.set(y, x, c, image.at(y, w - 1 - x, c));
            }
        }
    }
    out
}

fn gaussian_blur3(image: &Image) -> Image {
    const K: [f64; 3] = [0.25, 0.5, 0.25];
    let (h, w, ch) = image.shape();
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (dy, ky) in K.iter().enumerate() {
                    for (dx, kx) in K.iter().enumerate() {
                        acc += ky * kx * image.at_clamped(y as isize + dy as isize - 1, x as isize + dx as isize - 1, c);
                    }
                }
                out.set(y, x, c, acc);
            }
        }
    }
    out.clamp();
    out
}
