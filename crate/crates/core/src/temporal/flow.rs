use crate::error::{Error, Result};
use crate::tensor::FrameTensor;

/// Per-pixel displacement from frame `i − 1` to frame `i`:
/// channel 0 is `Δrow`, channel 1 is `Δcolumn`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(FrameTensor);

impl FlowField {
    pub fn new(t: FrameTensor) -> Result<Self> {
        if t.channels() != 2 {
            return Err(Error::ChannelMismatch { expected: 2, found: t.channels() });
        }
        if !t.is_finite() {
            return Err(Error::InvalidConfig("flow field contains non-finite values".into()));
        }
        Ok(Self(t))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(FrameTensor::zeros(height, width, 2))
    }

    /// Uniform displacement everywhere.
    pub fn constant(height: usize, width: usize, du: f32, dv: f32) -> Self {
        Self(FrameTensor::from_fn(height, width, 2, |_, _, c| if c == 0 { du } else { dv }))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn at(&self, u: usize, v: usize) -> (f32, f32) {
        let px = self.0.pixel(u, v);
        (px[0], px[1])
    }

    pub fn as_tensor(&self) -> &FrameTensor {
        &self.0
    }
}

/// Source pixel `(u, v)` in frame `i − 1` matched to `(u2, v2)` in frame `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Correspondence {
    pub u: usize,
    pub v: usize,
    pub u2: usize,
    pub v2: usize,
}

impl Correspondence {
    pub fn source(&self) -> [f64; 2] {
        [self.u as f64, self.v as f64]
    }

    pub fn target(&self) -> [f64; 2] {
        [self.u2 as f64, self.v2 as f64]
    }

    pub fn displacement(&self) -> f64 {
        let du = self.u2 as f64 - self.u as f64;
        let dv = self.v2 as f64 - self.v as f64;
        du.hypot(dv)
    }
}

/// Pixel matches between two frames of size `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub height: usize,
    pub width: usize,
    pub matches: Vec<Correspondence>,
    /// Set when geometric verification could not run and the input was kept.
    pub verification_skipped: bool,
}

impl CorrespondenceSet {
    pub fn new(height: usize, width: usize, matches: Vec<Correspondence>) -> Result<Self> {
        if let Some(m) = matches.iter().find(|m| m.u >= height || m.u2 >= height || m.v >= width || m.v2 >= width) {
            return Err(Error::OutOfBounds { u: m.u2, v: m.v2, p: 1, h: height, w: width });
        }
        Ok(Self { height, width, matches, verification_skipped: false })
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn mean_motion(&self) -> f64 {
        if self.matches.is_empty() {
            return 0.0;
        }
        self.matches.iter().map(Correspondence::displacement).sum::<f64>() / self.matches.len() as f64
    }
}

/// One candidate per source pixel at `round((u, v) + F[u, v])`, rounding half
/// away from zero; targets outside the frame are dropped.
pub fn flow_to_correspondences(flow: &FlowField) -> CorrespondenceSet {
    let (h, w) = (flow.height(), flow.width());
    let mut matches = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (du, dv) = flow.at(u, v);
            let u2 = (u as f64 + du as f64).round();
            let v2 = (v as f64 + dv as f64).round();
            if u2 >= 0.0 && v2 >= 0.0 && u2 < h as f64 && v2 < w as f64 {
                matches.push(Correspondence { u, v, u2: u2 as usize, v2: v2 as usize });
            }
        }
    }
    CorrespondenceSet { height: h, width: w, matches, verification_skipped: false }
}
