//! Conditional noise-prediction network, its optimizer and EMA shadow.

mod checkpoint;
pub mod layers;
mod unet;

use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, StoredReal};
pub use layers::{Act, ParamEntry, Real};
pub use unet::{Tape, UNet};

use crate::ddpm::{check_patch_batch, draw_noise, forward_sample, NoiseDraw, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::patch::PatchBatch;
use crate::tensor::FrameTensor;

/// Shape and width of the denoiser.
///
/// Input channels are laid out as `[visible(3) | infrared(1 or 3) | logits(L)]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub patch_size: usize,
    pub num_classes: usize,
    pub base_width: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub use_attention: bool,
    pub num_groups: usize,
    /// Feed the infrared channel three times instead of once.
    pub ir_replicate_3: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            num_classes: 8,
            base_width: 32,
            depth: 2,
            time_embed_dim: 64,
            use_attention: false,
            num_groups: 8,
            ir_replicate_3: false,
        }
    }
}

impl DenoiserConfig {
    pub fn ir_channels(&self) -> usize {
        if self.ir_replicate_3 {
            3
        } else {
            1
        }
    }

    pub fn in_channels(&self) -> usize {
        3 + self.ir_channels() + self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(1 << self.depth) {
            return bad(format!(
                "patch size {} not divisible by 2^{}",
                self.patch_size, self.depth
            ));
        }
        if self.num_classes == 0 {
            return bad("need at least one semantic class".into());
        }
        if self.num_groups == 0 || self.base_width == 0 || !self.base_width.is_multiple_of(self.num_groups) {
            return bad(format!(
                "base width {} not divisible into {} groups",
                self.base_width, self.num_groups
            ));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return bad(format!("time embedding dimension {} must be even", self.time_embed_dim));
        }
        Ok(())
    }
}

/// `[sin(t/10000^{2k/d}), cos(t/10000^{2k/d})]` interleaved for `k < d/2`.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::OddDimension(dim));
    }
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let freq = 10000f64.powf(2.0 * k as f64 / dim as f64);
        let arg = t as f64 / freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// Trainable weights and their exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<F> {
    pub params: Vec<F>,
    pub ema: Vec<F>,
}

/// A network together with its weights.
#[derive(Debug, Clone)]
pub struct Denoiser<F: Real = f32> {
    net: UNet,
    weights: DenoiserParams<F>,
    use_ema: bool,
}

/// Lays out the network for `config` and draws He-scaled initial weights.
pub fn build_denoiser<F: Real, R: rand::Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Result<Denoiser<F>> {
    config.validate()?;
    let net = UNet::new(config);
    let params = net.init_params(rng);
    let ema = params.clone();
    Ok(Denoiser { net, weights: DenoiserParams { params, ema }, use_ema: false })
}

/// One training example in network layout.
#[derive(Debug, Clone)]
pub struct TrainingSample<F> {
    pub input: Act<F>,
    pub t: usize,
    pub target: Vec<F>,
}

// Fixed so gradient reduction order never depends on the thread count.
const GRAD_CHUNK: usize = 4;

impl<F: Real> Denoiser<F> {
    pub fn from_parts(config: &DenoiserConfig, weights: DenoiserParams<F>) -> Result<Self> {
        config.validate()?;
        let net = UNet::new(config);
        if weights.params.len() != net.param_count() || weights.ema.len() != net.param_count() {
            return Err(Error::shape(format!(
                "{} / {} weights for a network with {} parameters",
                weights.params.len(),
                weights.ema.len(),
                net.param_count()
            )));
        }
        Ok(Self { net, weights, use_ema: false })
    }

    pub fn config(&self) -> &DenoiserConfig {
        self.net.config()
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn weights(&self) -> &DenoiserParams<F> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut DenoiserParams<F> {
        &mut self.weights
    }

    /// Select the EMA shadow (`true`) or the raw weights for prediction.
    pub fn set_use_ema(&mut self, on: bool) {
        self.use_ema = on;
    }

    pub fn uses_ema(&self) -> bool {
        self.use_ema
    }

    fn active(&self) -> &[F] {
        if self.use_ema {
            &self.weights.ema
        } else {
            &self.weights.params
        }
    }

    /// Packs HWC patches into a planar `[x | y | s]` input.
    pub fn pack_input(&self, x: &FrameTensor, y: &FrameTensor, s: &FrameTensor) -> Result<Act<F>> {
        let cfg = self.config();
        let p = cfg.patch_size;
        for (name, t, c) in [("visible", x, 3), ("infrared", y, 1), ("logits", s, cfg.num_classes)] {
            if t.height() != p || t.width() != p || t.channels() != c {
                return Err(Error::shape(format!(
                    "{name} patch {:?}, expected {p}x{p}x{c}",
                    t.shape()
                )));
            }
        }
        let n = p * p;
        let mut act = Act::zeros(cfg.in_channels(), p, p);
        let mut put = |ch: usize, src: &FrameTensor, sc: usize| {
            let dst = &mut act.data[ch * n..(ch + 1) * n];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = F::from_f32(src.data()[i * src.channels() + sc]).unwrap();
            }
        };
        let mut ch = 0;
        for c in 0..3 {
            put(ch, x, c);
            ch += 1;
        }
        for _ in 0..cfg.ir_channels() {
            put(ch, y, 0);
            ch += 1;
        }
        for c in 0..cfg.num_classes {
            put(ch, s, c);
            ch += 1;
        }
        Ok(act)
    }

    /// `ε_θ(x_t, y, s, t)` for one `p×p` patch.
    pub fn predict_noise(&self, x: &FrameTensor, y: &FrameTensor, s: &FrameTensor, t: usize) -> Result<FrameTensor> {
        let input = self.pack_input(x, y, s)?;
        let (out, _) = self.net.forward(self.active(), &input, t);
        Ok(planar_to_frame(&out))
    }

    /// Builds network-layout samples from a patch batch and its noise draws.
    pub fn prepare_samples(
        &self,
        batch: &PatchBatch,
        draws: &[NoiseDraw],
        schedule: &NoiseSchedule,
    ) -> Result<Vec<TrainingSample<F>>> {
        check_patch_batch(&batch.visible, &batch.infrared, &batch.logits)?;
        if draws.len() != batch.len() {
            return Err(Error::shape("one noise draw per patch required"));
        }
        (0..batch.len())
            .map(|k| {
                let d = &draws[k];
                let x_t = forward_sample(&batch.visible[k], d.t, &d.eps, schedule)?;
                let input = self.pack_input(&x_t, &batch.infrared[k], &batch.logits[k])?;
                let target = frame_to_planar(&d.eps).data;
                Ok(TrainingSample { input, t: d.t, target })
            })
            .collect()
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn train_step<R: rand::Rng + ?Sized>(
        &mut self,
        opt: &mut OptimizerState<F>,
        batch: &PatchBatch,
        schedule: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<f64> {
        check_patch_batch(&batch.visible, &batch.infrared, &batch.logits)?;
        let draws = draw_noise(rng, batch.len(), batch.visible[0].shape(), schedule);
        let samples = self.prepare_samples(batch, &draws, schedule)?;
        let (loss, grad) = loss_and_grad(&self.net, &self.weights.params, &samples);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: opt.step });
        }
        opt.apply(&mut self.weights.params, &grad)?;
        Ok(loss)
    }
}

impl<F: Real> NoisePredictor for Denoiser<F> {
    fn predict(&self, x_t: &FrameTensor, ir: &FrameTensor, logits: &FrameTensor, t: usize) -> Result<FrameTensor> {
        self.predict_noise(x_t, ir, logits, t)
    }
}

pub(crate) fn planar_to_frame<F: Real>(a: &Act<F>) -> FrameTensor {
    let n = a.hw();
    FrameTensor::from_fn(a.h, a.w, a.c, |u, v, c| a.data[c * n + u * a.w + v].to_f32().unwrap())
}

pub(crate) fn frame_to_planar<F: Real>(t: &FrameTensor) -> Act<F> {
    let (h, w, c) = t.shape();
    let mut a = Act::zeros(c, h, w);
    for (i, &v) in t.data().iter().enumerate() {
        let (pix, ch) = (i / c, i % c);
        a.data[ch * h * w + pix] = F::from_f32(v).unwrap();
    }
    a
}

fn sample_terms<F: Real>(out: &Act<F>, target: &[F], scale: F) -> (f64, Act<F>) {
    let mut sq = 0.0f64;
    let mut dout = Act::zeros(out.c, out.h, out.w);
    for ((d, &o), &e) in dout.data.iter_mut().zip(&out.data).zip(target) {
        let r = o - e;
        let rf = r.to_f64().unwrap();
        sq += rf * rf;
        *d = r * scale;
    }
    (sq, dout)
}

/// Mean squared noise-prediction error over all samples and elements.
pub fn batch_loss<F: Real>(net: &UNet, params: &[F], samples: &[TrainingSample<F>]) -> f64 {
    let count: usize = samples.iter().map(|s| s.target.len()).sum();
    let sums: Vec<f64> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|s| {
                    let (out, _) = net.forward(params, &s.input, s.t);
                    sample_terms(&out, &s.target, F::zero()).0
                })
                .sum()
        })
        .collect();
    sums.into_iter().sum::<f64>() / count as f64
}

/// Loss and its exact gradient with respect to `params`.
pub fn loss_and_grad<F: Real>(net: &UNet, params: &[F], samples: &[TrainingSample<F>]) -> (f64, Vec<F>) {
    let count: usize = samples.iter().map(|s| s.target.len()).sum();
    let scale = F::lit(2.0 / count as f64);
    let partials: Vec<(f64, Vec<F>)> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![F::zero(); params.len()];
            let mut sq = 0.0;
            for s in chunk {
                let (out, tape) = net.forward(params, &s.input, s.t);
                let (l, dout) = sample_terms(&out, &s.target, scale);
                sq += l;
                net.backward(params, &tape, &dout, &mut g);
            }
            (sq, g)
        })
        .collect();
    let mut grad = vec![F::zero(); params.len()];
    let mut total = 0.0;
    for (sq, g) in partials {
        total += sq;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (total / count as f64, grad)
}

/// Smallest denominator used when comparing gradients, so entries whose
/// true gradient is zero are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

/// Worst relative disagreement between the analytic gradient and central
/// differences with step `h`, over the parameters listed in `indices`.
/// Returns `(worst error, index of the worst parameter)`.
pub fn max_gradient_error(
    net: &UNet,
    params: &[f64],
    samples: &[TrainingSample<f64>],
    indices: &[usize],
    h: f64,
) -> (f64, usize) {
    let (_, grad) = loss_and_grad(net, params, samples);
    let mut p = params.to_vec();
    let mut worst = (0.0, indices.first().copied().unwrap_or(0));
    for &i in indices {
        let orig = p[i];
        p[i] = orig + h;
        let up = batch_loss(net, &p, samples);
        p[i] = orig - h;
        let down = batch_loss(net, &p, samples);
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(GRAD_CHECK_FLOOR);
        if !(err <= worst.0) {
            worst = (err, i);
        }
    }
    worst
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F = f32> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![F::zero(); param_count],
            v: vec![F::zero(); param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn apply(&mut self, params: &mut [F], grad: &[F]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer holds {} moments, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i].to_f64().unwrap();
            let m = b1 * self.m[i].to_f64().unwrap() + (1.0 - b1) * g;
            let v = b2 * self.v[i].to_f64().unwrap() + (1.0 - b2) * g * g;
            self.m[i] = F::lit(m);
            self.v[i] = F::lit(v);
            let update = self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            params[i] = params[i] - F::lit(update);
        }
        Ok(())
    }
}

/// `ema ← momentum·ema + (1 − momentum)·params`, elementwise.
pub fn ema_update<F: Real>(ema: &mut [F], params: &[F], momentum: f64) -> Result<()> {
    if ema.len() != params.len() {
        return Err(Error::shape(format!("ema {} vs params {}", ema.len(), params.len())));
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::InvalidConfig(format!("EMA momentum {momentum} outside [0, 1]")));
    }
    for (e, &p) in ema.iter_mut().zip(params) {
        let (ef, pf) = (e.to_f64().unwrap(), p.to_f64().unwrap());
        let mixed = F::lit(momentum * ef + (1.0 - momentum) * pf);
        let (lo, hi) = if *e <= p { (*e, p) } else { (p, *e) };
        *e = mixed.max(lo).min(hi);
    }
    Ok(())
}

#[cfg(test)]
mod tests;
