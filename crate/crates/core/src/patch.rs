//! Patch decomposition, per-patch conditional denoising and spatial blending.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::data_io::{Dataset, SemanticLogits};
use crate::ddpm::{reverse_step, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, stream};
use crate::tensor::FrameTensor;

/// Top-left corners of the `p×p` windows covering an `H×W` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub cell: usize,
    /// Row-major `(u, v)` positions.
    pub positions: Vec<(usize, usize)>,
}

fn window_starts(extent: usize, p: usize, r: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..).map(|a| a * r).take_while(|&s| s + p <= extent).collect();
    if !(extent - p).is_multiple_of(r) {
        starts.push(extent - p);
    }
    starts
}

/// Slides a `p×p` window with stride `r`; a boundary-aligned row/column is
/// appended when `r` does not divide `H − p` (resp. `W − p`).
pub fn decompose(height: usize, width: usize, p: usize, r: usize) -> Result<PatchGrid> {
    if p == 0 || p > height || p > width {
        return Err(Error::PatchTooLarge { p, h: height, w: width });
    }
    if r == 0 || r > p {
        return Err(Error::InvalidConfig(format!("cell size {r} must be in [1, {p}]")));
    }
    let rows = window_starts(height, p, r);
    let cols = window_starts(width, p, r);
    let positions = rows.iter().flat_map(|&u| cols.iter().map(move |&v| (u, v))).collect();
    Ok(PatchGrid { height, width, patch: p, cell: r, positions })
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of windows covering each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut count = vec![0u32; self.height * self.width];
        for &(u, v) in &self.positions {
            for row in u..u + self.patch {
                count[row * self.width + v..row * self.width + v + self.patch]
                    .iter_mut()
                    .for_each(|c| *c += 1);
            }
        }
        count
    }

    /// Crops every window of `t`.
    pub fn crop_all(&self, t: &FrameTensor) -> Result<PatchSet> {
        if (t.height(), t.width()) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "tensor {:?} vs grid {}x{}",
                t.shape(),
                self.height,
                self.width
            )));
        }
        let patches = self.positions.iter().map(|&pos| crop(t, pos, self.patch)).collect::<Result<_>>()?;
        Ok(PatchSet { positions: self.positions.clone(), patch: self.patch, patches })
    }
}

/// Patches of one tensor with their grid positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub positions: Vec<(usize, usize)>,
    pub patch: usize,
    pub patches: Vec<FrameTensor>,
}

/// Copy of the `p×p` window at `(u, v)`, all channels.
pub fn crop(t: &FrameTensor, (u, v): (usize, usize), p: usize) -> Result<FrameTensor> {
    if p == 0 || u + p > t.height() || v + p > t.width() {
        return Err(Error::OutOfBounds { u, v, p, h: t.height(), w: t.width() });
    }
    let c = t.channels();
    let mut data = Vec::with_capacity(p * p * c);
    for row in u..u + p {
        let start = t.index(row, v, 0);
        data.extend_from_slice(&t.data()[start..start + p * c]);
    }
    FrameTensor::from_vec(p, p, c, data)
}

/// Per-pixel mean of the overlapping patch values.
pub fn blend_spatial(set: &PatchSet, height: usize, width: usize) -> Result<FrameTensor> {
    if set.patches.len() != set.positions.len() {
        return Err(Error::LengthMismatch(format!(
            "{} patches for {} positions",
            set.patches.len(),
            set.positions.len()
        )));
    }
    let channels = set.patches.first().map(|p| p.channels()).ok_or(Error::CoverageHole { u: 0, v: 0 })?;
    let p = set.patch;
    let mut acc = vec![0f64; height * width * channels];
    let mut count = vec![0u32; height * width];
    for (patch, &(u, v)) in set.patches.iter().zip(&set.positions) {
        if patch.shape() != (p, p, channels) {
            return Err(Error::shape(format!("patch {:?}, expected {p}x{p}x{channels}", patch.shape())));
        }
        if u + p > height || v + p > width {
            return Err(Error::OutOfBounds { u, v, p, h: height, w: width });
        }
        for du in 0..p {
            let row = u + du;
            count[row * width + v..row * width + v + p].iter_mut().for_each(|c| *c += 1);
            let dst = &mut acc[(row * width + v) * channels..(row * width + v + p) * channels];
            let src = &patch.data()[du * p * channels..(du + 1) * p * channels];
            for (a, &s) in dst.iter_mut().zip(src) {
                *a += s as f64;
            }
        }
    }
    let mut out = FrameTensor::zeros(height, width, channels);
    for (i, &n) in count.iter().enumerate() {
        if n == 0 {
            return Err(Error::CoverageHole { u: i / width, v: i % width });
        }
        for c in 0..channels {
            out.data_mut()[i * channels + c] = (acc[i * channels + c] / n as f64) as f32;
        }
    }
    Ok(out)
}

/// How overlapping patches are merged within one denoising step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendMode {
    /// Step every patch with its own noise, then average the denoised patches.
    #[default]
    Denoised,
    /// Average the predicted noise, then take a single full-image step.
    Noise,
}

impl std::str::FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoised" => Ok(BlendMode::Denoised),
            "noise" => Ok(BlendMode::Noise),
            _ => Err(Error::InvalidConfig(format!("unknown blend mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for BlendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlendMode::Denoised => "denoised",
            BlendMode::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch: usize,
    pub cell: usize,
    pub blend: BlendMode,
}

/// Identifies the random streams of one frame's sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub frame: u64,
}

impl NoiseKey {
    /// Stream for `z` of patch `k` at step `t`.
    pub fn patch_stream(&self, t: usize, k: usize) -> crate::rng::Rng {
        stream(self.seed, &[self.frame, t as u64, k as u64])
    }

    /// Stream for the full-image `z` used in [`BlendMode::Noise`].
    pub fn image_stream(&self, t: usize) -> crate::rng::Rng {
        stream(self.seed, &[self.frame, t as u64, u64::MAX])
    }

    /// Stream for the initial `X_T`.
    pub fn init_stream(&self) -> crate::rng::Rng {
        stream(self.seed, &[self.frame, u64::MAX, 0])
    }
}

/// One semantic-guided reverse step of a full image: decompose, step each
/// patch with the conditional noise estimate, blend.
#[allow(clippy::too_many_arguments)]
pub fn denoise_image_step<P: NoisePredictor + Sync + ?Sized>(
    x_t: &FrameTensor,
    ir: &FrameTensor,
    logits: &SemanticLogits,
    t: usize,
    denoiser: &P,
    schedule: &NoiseSchedule,
    cfg: &PatchConfig,
    key: NoiseKey,
) -> Result<FrameTensor> {
    schedule.check_step(t)?;
    let (h, w) = (x_t.height(), x_t.width());
    for (name, o) in [("infrared", ir), ("logits", logits.as_tensor())] {
        if (o.height(), o.width()) != (h, w) {
            return Err(Error::shape(format!("{name} {:?} vs frame {h}x{w}", o.shape())));
        }
    }
    let grid = decompose(h, w, cfg.patch, cfg.cell)?;
    let p = cfg.patch;
    let c = x_t.channels();
    let results: Vec<FrameTensor> = grid
        .positions
        .par_iter()
        .enumerate()
        .map(|(k, &pos)| {
            let xk = crop(x_t, pos, p)?;
            let yk = crop(ir, pos, p)?;
            let sk = crop(logits.as_tensor(), pos, p)?;
            let eps = denoiser.predict(&xk, &yk, &sk, t)?;
            match cfg.blend {
                BlendMode::Noise => Ok(eps),
                BlendMode::Denoised => {
                    let z = if t == 1 {
                        FrameTensor::zeros(p, p, c)
                    } else {
                        normal_tensor(&mut key.patch_stream(t, k), p, p, c)
                    };
                    reverse_step(&xk, &eps, t, &z, schedule)
                }
            }
        })
        .collect::<Result<_>>()?;
    let set = PatchSet { positions: grid.positions, patch: p, patches: results };
    let blended = blend_spatial(&set, h, w)?;
    match cfg.blend {
        BlendMode::Denoised => Ok(blended),
        BlendMode::Noise => {
            let z = if t == 1 { FrameTensor::zeros(h, w, c) } else { normal_tensor(&mut key.image_stream(t), h, w, c) };
            reverse_step(x_t, &blended, t, &z, schedule)
        }
    }
}

/// Aligned training patches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchBatch {
    pub visible: Vec<FrameTensor>,
    pub infrared: Vec<FrameTensor>,
    pub logits: Vec<FrameTensor>,
    /// `(image index, u, v)` per patch.
    pub origins: Vec<(usize, usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }
}

/// Crops `patches_per_image` aligned `(x, y, s)` triples from each of
/// `n_images` randomly chosen frames. Frames are drawn without replacement
/// when the dataset is large enough, with replacement otherwise.
pub fn random_patch_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    n_images: usize,
    patches_per_image: usize,
    p: usize,
    rng: &mut R,
) -> Result<PatchBatch> {
    if dataset.visible.is_empty() || dataset.visible.len() != dataset.len() {
        return Err(Error::InvalidConfig("training needs visible frames for every infrared frame".into()));
    }
    let (h, w) = (dataset.manifest.height, dataset.manifest.width);
    if h < p || w < p {
        return Err(Error::ImageTooSmall { h, w, min: p });
    }
    let images: Vec<usize> = if n_images <= dataset.len() {
        sample(rng, dataset.len(), n_images).into_vec()
    } else {
        (0..n_images).map(|_| rng.random_range(0..dataset.len())).collect()
    };
    let mut batch = PatchBatch::default();
    for &i in &images {
        for _ in 0..patches_per_image {
            let u = rng.random_range(0..=h - p);
            let v = rng.random_range(0..=w - p);
            batch.visible.push(crop(&dataset.visible[i], (u, v), p)?);
            batch.infrared.push(crop(&dataset.infrared[i], (u, v), p)?);
            batch.logits.push(crop(dataset.logits[i].as_tensor(), (u, v), p)?);
            batch.origins.push((i, u, v));
        }
    }
    Ok(batch)
}
