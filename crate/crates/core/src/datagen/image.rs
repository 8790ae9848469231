use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// A small image with pixels in `[0, 1]`, stored row-major with channels
/// interleaved (`(y * width + x) * channels + c`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::invalid(format!(
                "bad image dims {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                context: "image pixels",
                expected: vec![height, width, channels],
                actual: vec![pixels.len()],
            });
        }
        let mut img = Self {
            height,
            width,
            channels,
            pixels,
        };
        img.clamp();
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Pixel lookup with coordinates clamped to the border.
    #[inline]
    pub fn at_clamped(&self, y: isize, x: isize, c: usize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.at(y, x, c)
    }

    /// Bilinear sample at a continuous pixel-center coordinate, replicating
    /// edge pixels outside the image.
    pub fn sample_bilinear(&self, y: f64, x: f64, c: usize) -> f64 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        if fy == 0.0 && fx == 0.0 {
            return self.at_clamped(y0, x0, c);
        }
        let a = self.at_clamped(y0, x0, c);
        let b = self.at_clamped(y0, x0 + 1, c);
        let d = self.at_clamped(y0 + 1, x0, c);
        let e = self.at_clamped(y0 + 1, x0 + 1, c);
        let top = a + (b - a) * fx;
        let bottom = d + (e - d) * fx;
        top + (bottom - top) * fy
    }

    pub fn clamp(&mut self) {
        for p in &mut self.pixels {
            *p = p.clamp(0.0, 1.0);
        }
    }

    pub fn with_pixels(&self, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        let mut out = Self {
            pixels,
            ..*self
        };
        out.clamp();
        out
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.height * self.width;
        (0..n).map(|i| self.pixels[i * self.channels + c]).sum::<f64>() / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub image: Image,
    /// `None` for unlabeled (public) data.
    pub label: Option<usize>,
    /// Bookkeeping only; training never looks at it.
    pub corrupted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::invalid("dataset must be nonempty"))?;
        let shape = first.image.shape();
        for ex in &examples {
            if ex.image.shape() != shape {
                return Err(Error::invalid("all images in a dataset must share one shape"));
            }
            if let Some(label) = ex.label {
                if label >= num_classes {
                    return Err(Error::LabelOutOfRange { label, num_classes });
                }
            }
        }
        Ok(Self {
            examples,
            num_classes,
        })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<LabeledExample> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.examples[0].image.shape()
    }

    /// Flattened input width (`H * W * channels`).
    pub fn input_dim(&self) -> usize {
        let (h, w, c) = self.image_shape();
        h * w * c
    }

    pub fn is_labeled(&self) -> bool {
        self.examples.iter().all(|e| e.label.is_some())
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .map(|e| e.label.ok_or(Error::Unlabeled))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            if let Some(l) = e.label {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn corrupted_fraction(&self) -> f64 {
        self.examples.iter().filter(|e| e.corrupted).count() as f64 / self.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.examples[i].clone()).collect(),
            self.num_classes,
        )
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Self {
        Self {
            examples: self
                .examples
                .iter()
                .map(|e| LabeledExample {
                    label: None,
                    ..e.clone()
                })
                .collect(),
            num_classes: self.num_classes,
        }
    }

    /// Stacks the images at `indices` into a `[n, input_dim]` batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        images_to_batch(indices.iter().map(|&i| &self.examples[i].image))
    }

    pub fn all_images_batch(&self) -> Tensor {
        images_to_batch(self.examples.iter().map(|e| &e.image))
    }
}

pub fn images_to_batch<'a>(images: impl IntoIterator<Item = &'a Image>) -> Tensor {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut width = 0;
    for img in images {
        width = img.len();
        data.extend_from_slice(img.pixels());
        rows += 1;
    }
    Tensor::matrix(rows, width, data).expect("images in a batch share one shape")
}
