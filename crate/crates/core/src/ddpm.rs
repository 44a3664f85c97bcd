//! Variance schedules and the forward/reverse diffusion primitives.
//!
//! Timesteps are 1-based: `t ∈ [1, T]`, with `ᾱ_0 = 1`.

use crate::error::{Error, Result};
use crate::rng::normal_tensor;
use crate::tensor::FrameTensor;

/// Per-step reverse noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// `σ_t = √β_t`
    #[default]
    Beta,
    /// `σ_t = √(β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t))`
    BetaTilde,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SigmaMode::Beta),
            "beta_tilde" => Ok(SigmaMode::BetaTilde),
            _ => Err(Error::InvalidConfig(format!("unknown sigma mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SigmaMode::Beta => "beta",
            SigmaMode::BetaTilde => "beta_tilde",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    sigma_mode: SigmaMode,
}

/// Linear betas from `beta_start` to `beta_end`, both endpoints included.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        (0..steps)
            .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas, SigmaMode::Beta)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>, sigma_mode: SigmaMode) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("T must be at least 1".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut s = Self { betas, alphas, alpha_bars, sigmas: Vec::new(), sigma_mode };
        s.sigmas = s.compute_sigmas(sigma_mode);
        Ok(s)
    }

    fn compute_sigmas(&self, mode: SigmaMode) -> Vec<f64> {
        (1..=self.steps())
            .map(|t| match mode {
                SigmaMode::Beta => self.beta(t).sqrt(),
                SigmaMode::BetaTilde => {
                    (self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))).sqrt()
                }
            })
            .collect()
    }

    pub fn with_sigma_mode(mut self, mode: SigmaMode) -> Self {
        self.sigma_mode = mode;
        self.sigmas = self.compute_sigmas(mode);
        self
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · eps`.
pub fn forward_sample(
    x0: &FrameTensor,
    t: usize,
    eps: &FrameTensor,
    schedule: &NoiseSchedule,
) -> Result<FrameTensor> {
    schedule.check_step(t)?;
    x0.ensure_same_shape(eps, "forward_sample")?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x0.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = (a * *o as f64 + b * *e as f64) as f32;
    }
    Ok(out)
}

/// One ancestral step: `(x_t − β_t/√(1−ᾱ_t) · eps_pred) / √α_t + σ_t · z`.
pub fn reverse_step(
    x_t: &FrameTensor,
    eps_pred: &FrameTensor,
    t: usize,
    z: &FrameTensor,
    schedule: &NoiseSchedule,
) -> Result<FrameTensor> {
    schedule.check_step(t)?;
    x_t.ensure_same_shape(eps_pred, "reverse_step eps_pred")?;
    x_t.ensure_same_shape(z, "reverse_step z")?;
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let eps_coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sigma = schedule.sigma(t);
    let mut out = x_t.clone();
    for ((o, e), zz) in out.data_mut().iter_mut().zip(eps_pred.data()).zip(z.data()) {
        let mean = inv_sqrt_alpha * (*o as f64 - eps_coef * *e as f64);
        *o = (mean + sigma * *zz as f64) as f32;
    }
    Ok(out)
}

/// A conditional noise predictor `ε_θ(x_t, y, s, t)`.
pub trait NoisePredictor {
    fn predict(
        &self,
        x_t: &FrameTensor,
        ir: &FrameTensor,
        logits: &FrameTensor,
        t: usize,
    ) -> Result<FrameTensor>;
}

/// A sampled timestep and its Gaussian noise for one training patch.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: FrameTensor,
}

/// Draws `t ~ U[1, T]` then `ε ~ N(0, I)` for each patch, in patch order.
pub fn draw_noise<R: rand::Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
) -> Vec<NoiseDraw> {
    (0..count)
        .map(|_| {
            let t = rng.random_range(1..=schedule.steps());
            let eps = normal_tensor(rng, shape.0, shape.1, shape.2);
            NoiseDraw { t, eps }
        })
        .collect()
}

pub(crate) fn check_patch_batch(
    x0: &[FrameTensor],
    ir: &[FrameTensor],
    logits: &[FrameTensor],
) -> Result<()> {
    if x0.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if ir.len() != x0.len() || logits.len() != x0.len() {
        return Err(Error::shape(format!(
            "patch counts {} / {} / {}",
            x0.len(),
            ir.len(),
            logits.len()
        )));
    }
    let (h, w, _) = x0[0].shape();
    for ((x, y), s) in x0.iter().zip(ir).zip(logits) {
        for (name, p) in [("visible", x), ("infrared", y), ("logits", s)] {
            if p.height() != h || p.width() != w {
                return Err(Error::shape(format!("{name} patch {:?}, expected {h}x{w}", p.shape())));
            }
        }
        if x.channels() != x0[0].channels()
            || y.channels() != ir[0].channels()
            || s.channels() != logits[0].channels()
        {
            return Err(Error::shape("non-uniform channel count in batch"));
        }
    }
    Ok(())
}

/// Mean squared error between drawn noise and the predictor's estimate,
/// averaged over patches and elements.
pub fn training_loss<P: NoisePredictor + ?Sized, R: rand::Rng + ?Sized>(
    x0_patches: &[FrameTensor],
    ir_patches: &[FrameTensor],
    logit_patches: &[FrameTensor],
    denoiser: &P,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    check_patch_batch(x0_patches, ir_patches, logit_patches)?;
    let draws = draw_noise(rng, x0_patches.len(), x0_patches[0].shape(), schedule);
    loss_for_draws(x0_patches, ir_patches, logit_patches, &draws, denoiser, schedule)
}

/// Loss for an already drawn set of `(t, ε)`.
pub fn loss_for_draws<P: NoisePredictor + ?Sized>(
    x0_patches: &[FrameTensor],
    ir_patches: &[FrameTensor],
    logit_patches: &[FrameTensor],
    draws: &[NoiseDraw],
    denoiser: &P,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    check_patch_batch(x0_patches, ir_patches, logit_patches)?;
    if draws.len() != x0_patches.len() {
        return Err(Error::shape("one noise draw per patch required"));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (((x0, y), s), d) in x0_patches.iter().zip(ir_patches).zip(logit_patches).zip(draws) {
        let x_t = forward_sample(x0, d.t, &d.eps, schedule)?;
        let pred = denoiser.predict(&x_t, y, s, d.t)?;
        pred.ensure_same_shape(&d.eps, "predicted noise")?;
        total += pred
            .data()
            .iter()
            .zip(d.eps.data())
            .map(|(p, e)| {
                let r = *e as f64 - *p as f64;
                r * r
            })
            .sum::<f64>();
        count += pred.data().len();
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    fn scalar(v: f32) -> FrameTensor {
        FrameTensor::filled(1, 1, 1, v)
    }

    #[test]
    fn linear_schedule_small_cases() {
        let s = make_linear_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
        let s = make_linear_schedule(1, 0.001, 0.02).unwrap();
        assert_eq!(s.betas(), &[0.001]);
        assert_abs_diff_eq!(s.alpha_bar(1), 0.999, epsilon = 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn linear_schedule_endpoints_and_errors() {
        let s = make_linear_schedule(50, 1e-4, 0.05).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_abs_diff_eq!(s.beta(50), 0.05, epsilon = 1e-15);
        assert!(make_linear_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.02).is_err());
        assert!(make_linear_schedule(10, 0.03, 0.02).is_err());
        assert!(make_linear_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn thousand_step_alpha_bar_matches_product_oracle() {
        // Oracle: plain product loop over independently computed betas.
        let mut prod = 1.0f64;
        for i in 0..1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * (i as f64) / 999.0;
            prod *= 1.0 - beta;
        }
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        assert!(s.alpha_bar(1000) < 1e-3);
        assert_abs_diff_eq!(s.alpha_bar(1000), prod, epsilon = 1e-15);
        // Frozen from a 50-digit product evaluation.
        assert_abs_diff_eq!(s.alpha_bar(1000), 4.035_829_765_375_683e-5, epsilon = 1e-15);
    }

    #[test]
    fn sigma_modes() {
        let s = make_linear_schedule(10, 1e-3, 0.1).unwrap();
        assert_abs_diff_eq!(s.sigma(4), s.beta(4).sqrt(), epsilon = 1e-15);
        let s = s.with_sigma_mode(SigmaMode::BetaTilde);
        assert_eq!(s.sigma(1), 0.0);
        let want = (s.beta(4) * (1.0 - s.alpha_bar(3)) / (1.0 - s.alpha_bar(4))).sqrt();
        assert_abs_diff_eq!(s.sigma(4), want, epsilon = 1e-15);
        assert!("nope".parse::<SigmaMode>().is_err());
    }

    #[test]
    fn forward_sample_cases() {
        let s = make_linear_schedule(2, 0.5, 0.5).unwrap();
        let out = forward_sample(&scalar(1.0), 2, &scalar(1.0), &s).unwrap();
        assert_abs_diff_eq!(out.get(0, 0, 0), 0.5 + 0.75f32.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(out.get(0, 0, 0), 1.3660, epsilon = 1e-4);

        let x0 = FrameTensor::from_fn(3, 4, 3, |u, v, c| (u + 2 * v + c) as f32 * 0.1 - 0.5);
        let zero = FrameTensor::zeros(3, 4, 3);
        let out = forward_sample(&x0, 2, &zero, &s).unwrap();
        for (o, x) in out.data().iter().zip(x0.data()) {
            assert_abs_diff_eq!(*o, 0.5 * x, epsilon = 1e-7);
        }
        let ones = FrameTensor::filled(3, 4, 3, 1.0);
        let out = forward_sample(&zero, 1, &ones, &s).unwrap();
        assert!(out.data().iter().all(|&o| (o - 0.5f32.sqrt()).abs() < 1e-7));
    }

    #[test]
    fn forward_and_reverse_errors() {
        let s = make_linear_schedule(2, 0.5, 0.5).unwrap();
        let a = FrameTensor::zeros(2, 2, 3);
        let b = FrameTensor::zeros(2, 3, 3);
        assert!(matches!(forward_sample(&a, 1, &b, &s), Err(Error::ShapeMismatch(_))));
        assert!(matches!(forward_sample(&a, 0, &a, &s), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(forward_sample(&a, 3, &a, &s), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(reverse_step(&a, &a, 1, &b, &s), Err(Error::ShapeMismatch(_))));
        assert!(matches!(reverse_step(&a, &a, 5, &a, &s), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn reverse_step_cases() {
        let s = make_linear_schedule(3, 0.1, 0.3).unwrap();
        let x = FrameTensor::from_fn(2, 2, 3, |u, v, c| (u * 7 + v * 3 + c) as f32 * 0.05);
        let zero = FrameTensor::zeros(2, 2, 3);
        let out = reverse_step(&x, &zero, 2, &zero, &s).unwrap();
        for (o, xi) in out.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(*o as f64, *xi as f64 / s.alpha(2).sqrt(), epsilon = 1e-6);
        }

        // T = 1 exact round trip.
        let s1 = make_linear_schedule(1, 0.02, 0.02).unwrap();
        let x0 = FrameTensor::from_fn(4, 4, 3, |u, v, c| ((u * 13 + v * 5 + c * 3) % 17) as f32 / 8.5 - 1.0);
        let mut rng = seeded(3);
        let eps = normal_tensor(&mut rng, 4, 4, 3);
        let x1 = forward_sample(&x0, 1, &eps, &s1).unwrap();
        let back = reverse_step(&x1, &eps, 1, &zero_like(&x0), &s1).unwrap();
        assert!(back.max_abs_diff(&x0) <= 1e-6);
    }

    #[test]
    fn reverse_step_with_zero_beta_is_identity() {
        // β_t = 0 lies outside the schedule domain, so build the arrays directly.
        let s = NoiseSchedule {
            betas: vec![0.5, 0.0],
            alphas: vec![0.5, 1.0],
            alpha_bars: vec![0.5, 0.5],
            sigmas: vec![0.5f64.sqrt(), 0.0],
            sigma_mode: SigmaMode::Beta,
        };
        let x = FrameTensor::from_fn(2, 3, 3, |u, v, c| (u + v + c) as f32 - 2.0);
        let eps = FrameTensor::filled(2, 3, 3, 0.7);
        let out = reverse_step(&x, &eps, 2, &FrameTensor::zeros(2, 3, 3), &s).unwrap();
        assert_eq!(out, x);
    }

    fn zero_like(x: &FrameTensor) -> FrameTensor {
        FrameTensor::zeros(x.height(), x.width(), x.channels())
    }

    struct ConstPredictor(f32);

    impl NoisePredictor for ConstPredictor {
        fn predict(&self, x_t: &FrameTensor, _: &FrameTensor, _: &FrameTensor, _: usize) -> Result<FrameTensor> {
            Ok(FrameTensor::filled(x_t.height(), x_t.width(), x_t.channels(), self.0))
        }
    }

    fn toy_batch(n: usize, p: usize) -> (Vec<FrameTensor>, Vec<FrameTensor>, Vec<FrameTensor>) {
        let x = (0..n).map(|k| FrameTensor::filled(p, p, 3, 0.1 * k as f32 - 0.3)).collect();
        let y = (0..n).map(|_| FrameTensor::filled(p, p, 1, 0.2)).collect();
        let s = (0..n).map(|_| FrameTensor::filled(p, p, 2, 0.5)).collect();
        (x, y, s)
    }

    #[test]
    fn zero_predictor_loss_is_unit_variance() {
        let s = make_linear_schedule(50, 1e-4, 0.05).unwrap();
        let (x, y, l) = toy_batch(8, 8);
        let mut rng = seeded(11);
        let mut acc = 0.0;
        let reps = 10; // 10 × 8 patches × 192 elements ≈ 1.5e4 draws
        for _ in 0..reps {
            acc += training_loss(&x, &y, &l, &ConstPredictor(0.0), &s, &mut rng).unwrap();
        }
        assert_abs_diff_eq!(acc / reps as f64, 1.0, epsilon = 0.05);
    }

    #[test]
    fn constant_predictor_loss_replays_seeded_draw() {
        let s = make_linear_schedule(50, 1e-4, 0.05).unwrap();
        let (x, y, l) = toy_batch(1, 4);
        let c = 0.25f32;
        let loss = training_loss(&x, &y, &l, &ConstPredictor(c), &s, &mut seeded(99)).unwrap();
        // Replay: the first draw is t, followed by the noise elements.
        let mut rng = seeded(99);
        let _t: usize = rand::Rng::random_range(&mut rng, 1..=50);
        let eps = normal_tensor(&mut rng, 4, 4, 3);
        let want = eps.data().iter().map(|e| (*e as f64 - c as f64).powi(2)).sum::<f64>() / 48.0;
        assert_abs_diff_eq!(loss, want, epsilon = 1e-12);
    }

    #[test]
    fn empty_or_ragged_batches_fail() {
        let s = make_linear_schedule(5, 1e-4, 0.05).unwrap();
        let mut rng = seeded(1);
        let r = training_loss(&[], &[], &[], &ConstPredictor(0.0), &s, &mut rng);
        assert!(matches!(r, Err(Error::EmptyBatch)));
        let (x, y, l) = toy_batch(2, 4);
        let r = training_loss(&x, &y[..1], &l, &ConstPredictor(0.0), &s, &mut rng);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
        let bad = vec![FrameTensor::zeros(4, 5, 1), FrameTensor::zeros(4, 5, 1)];
        let r = training_loss(&x, &bad, &l, &ConstPredictor(0.0), &s, &mut rng);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }
}
