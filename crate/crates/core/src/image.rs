//! Real-valued rasters in `[0, 1]`.
//!
//! Pixels are addressed as `(y, x, c)`; storage is channel-planar so an
//! image converts to a `[C, H, W]` tensor without copying order around.

use gradcore::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite pixel value {v}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    /// Builds an image from a `[C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [c, h, w] => Self::new(h, w, c, t.data().to_vec()),
            ref s => Err(Error::Shape(format!("expected [C, H, W] tensor, got {s:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.tensor_shape().to_vec(), self.data.clone()).expect("consistent shape")
    }

    pub fn tensor_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Planar `[C, H, W]` values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.tensor_shape() == other.tensor_shape()
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.tensor_shape(),
                other.tensor_shape()
            )))
        }
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clip_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn linf_distance(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Single-plane BT.601 luma (or the plane itself for grayscale input).
    pub fn luma(&self) -> Vec<f64> {
        let n = self.height * self.width;
        if self.channels != 3 {
            return self.data[..n].to_vec();
        }
        (0..n)
            .map(|i| {
                LUMA_WEIGHTS[0] * self.data[i]
                    + LUMA_WEIGHTS[1] * self.data[n + i]
                    + LUMA_WEIGHTS[2] * self.data[2 * n + i]
            })
            .collect()
    }

    /// SHA-256 over the shape and the little-endian value bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in self.tensor_shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
