//! Dense image tensors in height × width × channel layout.

use crate::error::{Error, Result};

/// An `H×W×C` image stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FrameTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height >= 1 && width >= 1 && channels >= 1, "empty tensor");
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!("zero dimension in {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for u in 0..height {
            for v in 0..width {
                for c in 0..channels {
                    let i = t.index(u, v, c);
                    t.data[i] = f(u, v, c);
                }
            }
        }
        t
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, c: usize) -> usize {
        (u * self.width + v) * self.channels + c
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f32 {
        self.data[self.index(u, v, c)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, c: usize, value: f32) {
        let i = self.index(u, v, c);
        self.data[i] = value;
    }

    /// All channels of pixel `(u, v)`.
    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let i = self.index(u, v, 0);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, u: usize, v: usize) -> &mut [f32] {
        let i = self.index(u, v, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &FrameTensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> FrameTensor {
        FrameTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise clamp into `[lo, hi]`.
    pub fn clamp(&self, lo: f32, hi: f32) -> FrameTensor {
        self.map(|x| x.clamp(lo, hi))
    }

    pub fn max_abs_diff(&self, other: &FrameTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
