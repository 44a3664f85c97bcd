//! Frame-by-frame video translation with flow-guided trajectory blending.

use crate::data_io::SemanticLogits;
use crate::ddpm::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::patch::{denoise_image_step, NoiseKey, PatchConfig};
use crate::rng::normal_tensor;
use crate::tensor::FrameTensor;

use super::blend::{temporal_blend, BlendWeight, CollisionPolicy};
use super::flow::{flow_to_correspondences, CorrespondenceSet, FlowField};
use super::ransac::{geometric_verification, RansacConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConfig {
    pub w_t: f64,
    pub omega: f64,
    pub collision: CollisionPolicy,
    pub ransac: RansacConfig,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self { w_t: 1.0, omega: 0.9, collision: CollisionPolicy::Average, ransac: RansacConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoTranslation {
    /// Final frames clamped to `[-1, 1]`.
    pub frames: Vec<FrameTensor>,
    /// Calls to geometric verification; one per frame pair.
    pub verification_calls: usize,
    /// Per frame pair: whether verification took the skip path.
    pub skipped: Vec<bool>,
}

/// Full reverse trajectory `[X_{T-1}, ..., X_0]` of one frame without
/// temporal guidance. `X_0` is left unclamped.
pub fn translate_trajectory<P: NoisePredictor + Sync + ?Sized>(
    ir: &FrameTensor,
    logits: &SemanticLogits,
    denoiser: &P,
    schedule: &NoiseSchedule,
    patch: &PatchConfig,
    key: NoiseKey,
) -> Result<Vec<FrameTensor>> {
    let mut x = normal_tensor(&mut key.init_stream(), ir.height(), ir.width(), 3);
    let mut traj = Vec::with_capacity(schedule.steps());
    for t in (1..=schedule.steps()).rev() {
        x = denoise_image_step(&x, ir, logits, t, denoiser, schedule, patch, key)?;
        traj.push(x.clone());
    }
    Ok(traj)
}

/// Single-image translation, clamped to `[-1, 1]`.
pub fn translate_image<P: NoisePredictor + Sync + ?Sized>(
    ir: &FrameTensor,
    logits: &SemanticLogits,
    denoiser: &P,
    schedule: &NoiseSchedule,
    patch: &PatchConfig,
    key: NoiseKey,
) -> Result<FrameTensor> {
    let traj = translate_trajectory(ir, logits, denoiser, schedule, patch, key)?;
    Ok(traj.last().expect("at least one step").clamp(-1.0, 1.0))
}

/// Translates an infrared video. Frame `i` uses noise key `(seed, i)`; every
/// frame after the first is blended at each step against the previous
/// frame's state at the same step, through verified flow correspondences.
#[allow(clippy::too_many_arguments)]
pub fn translate_video<P: NoisePredictor + Sync + ?Sized>(
    ir: &[FrameTensor],
    logits: &[SemanticLogits],
    flows: &[FlowField],
    denoiser: &P,
    schedule: &NoiseSchedule,
    patch: &PatchConfig,
    temporal: &TemporalConfig,
    seed: u64,
) -> Result<VideoTranslation> {
    if ir.is_empty() {
        return Err(Error::LengthMismatch("no frames to translate".into()));
    }
    if logits.len() != ir.len() || flows.len() + 1 != ir.len() {
        return Err(Error::LengthMismatch(format!(
            "{} frames, {} logit maps, {} flows",
            ir.len(),
            logits.len(),
            flows.len()
        )));
    }
    let (h, w) = (ir[0].height(), ir[0].width());
    for f in flows {
        if (f.height(), f.width()) != (h, w) {
            return Err(Error::shape(format!("flow {}x{} vs frame {h}x{w}", f.height(), f.width())));
        }
    }
    let initial = BlendWeight::new(temporal.w_t, temporal.omega)?;

    let key = |i: usize| NoiseKey { seed, frame: i as u64 };
    let mut prev = translate_trajectory(&ir[0], &logits[0], denoiser, schedule, patch, key(0))?;
    let mut frames = vec![prev.last().expect("non-empty trajectory").clamp(-1.0, 1.0)];
    let mut verification_calls = 0;
    let mut skipped = Vec::with_capacity(flows.len());

    for i in 1..ir.len() {
        let corrs: CorrespondenceSet = {
            verification_calls += 1;
            geometric_verification(&flow_to_correspondences(&flows[i - 1]), &temporal.ransac)
        };
        skipped.push(corrs.verification_skipped);

        let mut x = normal_tensor(&mut key(i).init_stream(), h, w, 3);
        let mut weight = initial;
        let mut traj = Vec::with_capacity(schedule.steps());
        for (step, t) in (1..=schedule.steps()).rev().enumerate() {
            let x_hat = denoise_image_step(&x, &ir[i], &logits[i], t, denoiser, schedule, patch, key(i))?;
            let (blended, next) = temporal_blend(&x_hat, &prev[step], &corrs, weight, temporal.collision)?;
            weight = next;
            x = blended;
            traj.push(x.clone());
        }
        frames.push(x.clamp(-1.0, 1.0));
        prev = traj;
    }
    Ok(VideoTranslation { frames, verification_calls, skipped })
}
