//! Procedural grayscale pattern datasets.
//!
//! Class `c` renders pattern family `c mod 8`; every example jitters the
//! pattern's position, scale and intensity so classes are learnable but not
//! trivially memorizable.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Dataset, Image, LabeledExample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    FilledDisc,
    Ring,
    Cross,
    Checker,
    StripesH,
    StripesV,
    CornerBlob,
    Gradient,
}

impl Pattern {
    pub const ALL: [Pattern; 8] = [
        Pattern::FilledDisc,
        Pattern::Ring,
        Pattern::Cross,
        Pattern::Checker,
        Pattern::StripesH,
        Pattern::StripesV,
        Pattern::CornerBlob,
        Pattern::Gradient,
    ];

    pub fn for_class(class: usize) -> Self {
        Self::ALL[class % Self::ALL.len()]
    }
}

/// Renders one jittered instance of `pattern` into a `side × side` image.
pub fn render_pattern<R: Rng + ?Sized>(pattern: Pattern, side: usize, rng: &mut R) -> Image {
    let s = side as f64;
    let cx = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let cy = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let radius = rng.random_range(0.22..0.34) * s;
    let fg = rng.random_range(0.65..1.0);
    let bg = rng.random_range(0.0..0.2);
    let thickness = (0.09 * s).max(1.0) * rng.random_range(0.8..1.25);
    let period = (0.25 * s).max(2.0) * rng.random_range(0.85..1.2);
    let phase = rng.random_range(0.0..period);
    let corner = rng.random_range(0..4usize);
    let angle = rng.random_range(-PI / 6.0..PI / 6.0) + PI / 4.0;

    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (px - cx, py - cy);
            let dist = (dx * dx + dy * dy).sqrt();
            let v = match pattern {
                Pattern::FilledDisc => f64::from(u8::from(dist <= radius)),
                Pattern::Ring => f64::from(u8::from((dist - radius).abs() <= thickness)),
                Pattern::Cross => {
                    let inside = dx.abs() <= radius && dy.abs() <= radius;
                    f64::from(u8::from(inside && (dx.abs() <= thickness || dy.abs() <= thickness)))
                }
                Pattern::Checker => {
                    let a = ((px + phase) / period).floor() as i64;
                    let b = ((py + phase) / period).floor() as i64;
                    f64::from(u8::from((a + b).rem_euclid(2) == 0))
                }
                Pattern::StripesH => {
                    f64::from(u8::from((((py + phase) / period).floor() as i64).rem_euclid(2) == 0))
                }
                Pattern::StripesV => {
                    f64::from(u8::from((((px + phase) / period).floor() as i64).rem_euclid(2) == 0))
                }
                Pattern::CornerBlob => {
                    let (bx, by) = match corner {
                        0 => (0.22 * s, 0.22 * s),
                        1 => (0.78 * s, 0.22 * s),
                        2 => (0.22 * s, 0.78 * s),
                        _ => (0.78 * s, 0.78 * s),
                    };
                    let d2 = (px - bx).powi(2) + (py - by).powi(2);
                    (-d2 / (2.0 * (0.6 * radius).powi(2))).exp()
                }
                Pattern::Gradient => {
                    let t = (px * angle.cos() + py * angle.sin()) / (s * 1.414);
                    t.clamp(0.0, 1.0)
                }
            };
            pixels.push(bg + (fg - bg) * v);
        }
    }
    Image::new(side, side, 1, pixels).expect("rendered dims are valid")
}

/// `n` balanced grayscale examples over `num_classes` classes.
pub fn make_synthetic_dataset<R: Rng + ?Sized>(
    n: usize,
    num_classes: usize,
    side: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if num_classes == 0 || n < num_classes {
        return Err(Error::invalid(format!(
            "synthetic dataset needs n >= num_classes >= 1 (n={n}, C={num_classes})"
        )));
    }
    if side < 8 {
        return Err(Error::invalid(format!("synthetic image side must be >= 8, got {side}")));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(rng);
    let examples = labels
        .into_iter()
        .map(|label| LabeledExample {
            image: render_pattern(Pattern::for_class(label), side, rng),
            label: Some(label),
            corrupted: false,
        })
        .collect();
    Dataset::new(examples, num_classes)
}
