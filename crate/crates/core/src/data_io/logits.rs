use crate::error::{Error, Result};
use crate::tensor::FrameTensor;

/// Tolerance on the per-pixel probability sum.
pub const LOGIT_SUM_TOL: f32 = 1e-5;

/// Per-pixel categorical distribution over `L` classes (`H×W×L`).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticLogits(FrameTensor);

impl SemanticLogits {
    /// Validates non-negativity and unit row sums.
    pub fn new(t: FrameTensor) -> Result<Self> {
        for u in 0..t.height() {
            for v in 0..t.width() {
                let px = t.pixel(u, v);
                let sum: f64 = px.iter().map(|&x| x as f64).sum();
                if px.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > LOGIT_SUM_TOL as f64 {
                    return Err(Error::InvalidConfig(format!(
                        "logits at ({u}, {v}) are not a distribution (sum {sum})"
                    )));
                }
            }
        }
        Ok(Self(t))
    }

    /// Exact one-hot maps from integer class ids.
    pub fn one_hot(height: usize, width: usize, classes: usize, ids: &[u8]) -> Result<Self> {
        Self::softened(height, width, classes, ids, 0.0)
    }

    /// `softmax(onehot / τ)` per pixel; `τ = 0` gives exact one-hot maps.
    pub fn softened(height: usize, width: usize, classes: usize, ids: &[u8], tau: f64) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::shape("one class id per pixel required"));
        }
        if let Some(&bad) = ids.iter().find(|&&c| c as usize >= classes) {
            return Err(Error::InvalidConfig(format!("class {bad} outside {classes} classes")));
        }
        if !(tau >= 0.0) {
            return Err(Error::InvalidConfig(format!("temperature {tau} must be non-negative")));
        }
        // p_on = 1 / (1 + (L−1)e^{−1/τ}), p_off = e^{−1/τ} p_on
        let decay = if tau == 0.0 { 0.0 } else { (-1.0 / tau).exp() };
        let on = 1.0 / (1.0 + (classes as f64 - 1.0) * decay);
        let off = decay * on;
        let mut t = FrameTensor::filled(height, width, classes, off as f32);
        for (i, &c) in ids.iter().enumerate() {
            t.set(i / width, i % width, c as usize, on as f32);
        }
        Ok(Self(t))
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }

    pub fn as_tensor(&self) -> &FrameTensor {
        &self.0
    }

    pub fn into_tensor(self) -> FrameTensor {
        self.0
    }

    pub fn argmax(&self) -> Vec<u8> {
        self.0
            .data()
            .chunks_exact(self.classes())
            .map(|px| {
                let mut best = 0;
                for (i, &x) in px.iter().enumerate() {
                    if x > px[best] {
                        best = i;
                    }
                }
                best as u8
            })
            .collect()
    }
}
