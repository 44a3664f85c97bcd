//! PSNR, SSIM and a flow-based temporal consistency error.

use std::fmt::Write as _;

use crate::data_io::luminance;
use crate::error::{Error, Result};
use crate::temporal::{flow_to_correspondences, geometric_verification, FlowField, RansacConfig};
use crate::tensor::FrameTensor;

pub const PSNR_CAP_DB: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Which planes a metric reads. Luminance is the reporting default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Plane {
    #[default]
    Luminance,
    /// Every channel, for debugging.
    AllChannels,
}

fn planes(a: &FrameTensor, b: &FrameTensor, plane: Plane) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    a.ensure_same_shape(b, "metric operand")?;
    match plane {
        Plane::Luminance => {
            let (ya, yb) = (luminance(a)?, luminance(b)?);
            Ok(vec![(to_f64(ya.data()), to_f64(yb.data()))])
        }
        Plane::AllChannels => {
            let c = a.channels();
            Ok((0..c)
                .map(|k| {
                    let pick = |t: &FrameTensor| t.data().iter().skip(k).step_by(c).map(|&x| x as f64).collect();
                    (pick(a), pick(b))
                })
                .collect())
        }
    }
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`, on luminance.
pub fn psnr(a: &FrameTensor, b: &FrameTensor) -> Result<f64> {
    psnr_on(a, b, Plane::Luminance)
}

pub fn psnr_on(a: &FrameTensor, b: &FrameTensor, plane: Plane) -> Result<f64> {
    let ps = planes(a, b, plane)?;
    let n: usize = ps.iter().map(|p| p.0.len()).sum();
    let sse: f64 = ps.iter().flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q))).sum();
    let mse = sse / n as f64;
    if mse < MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, w) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *w = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|w| *w /= s);
    g
}

/// Valid-mode separable Gaussian filter.
fn filter(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for u in 0..h {
        for v in 0..ow {
            rows[u * ow + v] = g.iter().enumerate().map(|(k, &gk)| gk * x[u * w + v + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for u in 0..oh {
        for v in 0..ow {
            out[u * ow + v] = g.iter().enumerate().map(|(k, &gk)| gk * rows[(u + k) * ow + v]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_taps();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (ma, mb) = (filter(a, h, w, &g), filter(b, h, w, &g));
    let (saa, sbb, sab) = (
        filter(&prod(a, a), h, w, &g),
        filter(&prod(b, b), h, w, &g),
        filter(&prod(a, b), h, w, &g),
    );
    let n = ma.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mu_a, mu_b) = (ma[i], mb[i]);
        let var_a = saa[i] - mu_a * mu_a;
        let var_b = sbb[i] - mu_b * mu_b;
        let cov = sab[i] - mu_a * mu_b;
        total += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
    }
    total / n as f64
}

/// Mean structural similarity over all valid 11×11 Gaussian windows, on
/// luminance, for images in `[0, 1]`.
pub fn ssim(a: &FrameTensor, b: &FrameTensor) -> Result<f64> {
    ssim_on(a, b, Plane::Luminance)
}

pub fn ssim_on(a: &FrameTensor, b: &FrameTensor, plane: Plane) -> Result<f64> {
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { h, w, min: SSIM_WINDOW });
    }
    let ps = planes(a, b, plane)?;
    Ok(ps.iter().map(|(x, y)| ssim_plane(x, y, h, w)).sum::<f64>() / ps.len() as f64)
}

/// Mean over consecutive pairs of the MSE between frame `i` at flow targets
/// and frame `i − 1` at the sources. Pairs without correspondences are left
/// out of the mean.
pub fn warped_frame_error(frames: &[FrameTensor], flows: &[FlowField], verify: Option<&RansacConfig>) -> Result<f64> {
    if frames.len() < 2 || flows.len() + 1 != frames.len() {
        return Err(Error::LengthMismatch(format!("{} frames, {} flows", frames.len(), flows.len())));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, flow) in flows.iter().enumerate() {
        let (prev, cur) = (&frames[i], &frames[i + 1]);
        prev.ensure_same_shape(cur, "video frame")?;
        if (flow.height(), flow.width()) != (cur.height(), cur.width()) {
            return Err(Error::shape(format!("flow {}x{} vs frame {:?}", flow.height(), flow.width(), cur.shape())));
        }
        let mut corrs = flow_to_correspondences(flow);
        if let Some(cfg) = verify {
            corrs = geometric_verification(&corrs, cfg);
        }
        if corrs.is_empty() {
            continue;
        }
        let mut sse = 0.0;
        for m in &corrs.matches {
            for (&p, &q) in prev.pixel(m.u, m.v).iter().zip(cur.pixel(m.u2, m.v2)) {
                sse += (q as f64 - p as f64).powi(2);
            }
        }
        sum += sse / (corrs.len() * cur.channels()) as f64;
        pairs += 1;
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

/// Per-frame quality scores plus the optional temporal error.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub warped_error: Option<f64>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn min(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

impl MetricReport {
    /// Scores generated frames against references, both in `[0, 1]`.
    pub fn evaluate(generated: &[FrameTensor], reference: &[FrameTensor], flows: Option<&[FlowField]>) -> Result<Self> {
        if generated.len() != reference.len() || generated.is_empty() {
            return Err(Error::LengthMismatch(format!(
                "{} generated vs {} reference frames",
                generated.len(),
                reference.len()
            )));
        }
        let psnr = generated.iter().zip(reference).map(|(g, r)| psnr(g, r)).collect::<Result<_>>()?;
        let ssim = generated.iter().zip(reference).map(|(g, r)| ssim(g, r)).collect::<Result<_>>()?;
        let warped_error = match flows {
            Some(f) if generated.len() > 1 => Some(warped_frame_error(generated, f, None)?),
            _ => None,
        };
        Ok(Self { psnr, ssim, warped_error })
    }

    pub fn frames(&self) -> usize {
        self.psnr.len()
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn min_psnr(&self) -> f64 {
        min(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    pub fn min_ssim(&self) -> f64 {
        min(&self.ssim)
    }

    /// `key=value` summary lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames={}", self.frames());
        let _ = writeln!(s, "psnr_mean={}", self.mean_psnr());
        let _ = writeln!(s, "psnr_min={}", self.min_psnr());
        let _ = writeln!(s, "ssim_mean={}", self.mean_ssim());
        let _ = writeln!(s, "ssim_min={}", self.min_ssim());
        if let Some(e) = self.warped_error {
            let _ = writeln!(s, "warped_error={e}");
        }
        s
    }

    /// CSV with header `frame_index,psnr_db,ssim`.
    pub fn csv(&self) -> String {
        let mut s = String::from("frame_index,psnr_db,ssim\n");
        for (i, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(s, "{i},{p},{q}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise_image(seed: u64, h: usize, w: usize, c: usize) -> FrameTensor {
        let mut rng = seeded(seed);
        FrameTensor::from_fn(h, w, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    fn structured(h: usize, w: usize) -> FrameTensor {
        FrameTensor::from_fn(h, w, 1, |u, v, _| {
            let s = ((u as f32 * 0.4).sin() * (v as f32 * 0.3).cos()) * 0.4 + 0.5;
            if (u / 6 + v / 6) % 2 == 0 { s } else { 1.0 - s }
        })
    }

    #[test]
    fn psnr_cases() {
        let a = noise_image(1, 8, 8, 3);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let z = FrameTensor::zeros(4, 4, 1);
        let h = FrameTensor::filled(4, 4, 1, 0.5);
        assert!((psnr(&z, &h).unwrap() - 6.020_599_913_279_624).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_mse() {
        let a = noise_image(2, 16, 16, 1);
        let mut rng = seeded(3);
        let b = a.map(|x| x + rng.random_range(-0.05f32..0.05));
        let mse = a.data().iter().zip(b.data()).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>() / 256.0;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let a = noise_image(4, 16, 16, 3);
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.02, 0.05, 0.1, 0.2] {
            let mut rng = seeded(5);
            let b = a.map(|x| x + amp * rng.random_range(-1.0f32..1.0));
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_constant_images() {
        let a = noise_image(6, 16, 20, 3);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let (x, y) = (0.3f32, 0.7f32);
        let ca = FrameTensor::filled(12, 12, 1, x);
        let cb = FrameTensor::filled(12, 12, 1, y);
        let (x, y) = (x as f64, y as f64);
        let expect = (2.0 * x * y + SSIM_C1) / (x * x + y * y + SSIM_C1);
        assert!((ssim(&ca, &cb).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_needs_a_full_window() {
        let a = FrameTensor::zeros(10, 30, 1);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    /// Direct 2-D weighted window sums at every valid position.
    fn ssim_naive(a: &FrameTensor, b: &FrameTensor) -> f64 {
        let (h, w) = (a.height(), a.width());
        let half = 5i32;
        let mut win = [[0.0f64; 11]; 11];
        let mut total_w = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                let (di, dj) = (i as i32 - half, j as i32 - half);
                *x = (-((di * di + dj * dj) as f64) / (2.0 * 1.5 * 1.5)).exp();
                total_w += *x;
            }
        }
        let mut acc = 0.0;
        let mut count = 0;
        for u in 0..=h - 11 {
            for v in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = win[i][j] / total_w;
                        let x = a.get(u + i, v + j, 0) as f64;
                        let y = b.get(u + i, v + j, 0) as f64;
                        ma += g * x;
                        mb += g * y;
                        saa += g * x * x;
                        sbb += g * y * y;
                        sab += g * x * y;
                    }
                }
                let (va, vb, cv) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cv + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_naive_windows() {
        for seed in 0..4 {
            let a = noise_image(10 + seed, 19, 23, 1);
            let mut rng = seeded(20 + seed);
            let b = a.map(|x| (x + rng.random_range(-0.3f32..0.3)).clamp(0.0, 1.0));
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_naive(&a, &b);
            assert!((fast - slow).abs() <= 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_prefers_noise_over_scrambled_structure() {
        let a = structured(36, 36);
        let mut rng = seeded(8);
        let noisy = a.map(|x| x + rng.random_range(-0.03f32..0.03));
        // Swap 12×12 blocks around.
        let scrambled = FrameTensor::from_fn(36, 36, 1, |u, v, _| {
            let (bu, bv) = (u / 12, v / 12);
            let (su, sv) = ((bv + 1) % 3, (bu + 2) % 3);
            a.get(su * 12 + u % 12, sv * 12 + v % 12, 0)
        });
        assert!(ssim(&a, &scrambled).unwrap() < ssim(&a, &noisy).unwrap());
    }

    #[test]
    fn rgb_plane_mode_averages_channels() {
        let a = noise_image(30, 12, 12, 3);
        let b = noise_image(31, 12, 12, 3);
        let per: Vec<f64> = (0..3)
            .map(|k| {
                let pick = |t: &FrameTensor| FrameTensor::from_fn(12, 12, 1, |u, v, _| t.get(u, v, k));
                psnr(&pick(&a), &pick(&b)).unwrap()
            })
            .collect();
        // Channel-pooled MSE lies between the per-channel extremes.
        let pooled = psnr_on(&a, &b, Plane::AllChannels).unwrap();
        assert!(pooled >= min(&per) - 1e-12 && pooled <= per.iter().copied().fold(0.0, f64::max) + 1e-12);
        assert!(ssim_on(&a, &b, Plane::AllChannels).unwrap() <= 1.0);
    }

    #[test]
    fn warped_error_cases() {
        let still = vec![noise_image(40, 6, 6, 3); 3];
        let zero = vec![FlowField::zeros(6, 6); 2];
        assert_eq!(warped_frame_error(&still, &zero, None).unwrap(), 0.0);

        let f0 = noise_image(41, 6, 6, 3);
        let shifted = FrameTensor::from_fn(6, 6, 3, |u, v, k| if v == 0 { 0.5 } else { f0.get(u, v - 1, k) });
        let flows = vec![FlowField::constant(6, 6, 0.0, 1.0)];
        assert_eq!(warped_frame_error(&[f0.clone(), shifted.clone()], &flows, None).unwrap(), 0.0);

        let d = 0.25f32;
        let offset = FrameTensor::from_fn(6, 6, 3, |u, v, k| shifted.get(u, v, k) + if v == 0 { 0.0 } else { d });
        let e = warped_frame_error(&[f0, offset], &flows, None).unwrap();
        assert!((e - (d as f64).powi(2)).abs() < 1e-12);

        assert!(matches!(warped_frame_error(&still, &zero[..1], None), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn report_mean_equals_rows() {
        let gen: Vec<_> = (0..3).map(|i| noise_image(50 + i, 12, 12, 3)).collect();
        let refs: Vec<_> = (0..3).map(|i| noise_image(60 + i, 12, 12, 3)).collect();
        let r = MetricReport::evaluate(&gen, &refs, None).unwrap();
        assert_eq!(r.mean_psnr(), r.psnr.iter().sum::<f64>() / 3.0);
        assert_eq!(r.csv().lines().count(), 4);
        assert!(r.summary().contains("frames=3"));
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            let a = noise_image(seed, 12, 13, 3);
            let b = noise_image(seed + 7, 12, 13, 3);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }
    }
}
