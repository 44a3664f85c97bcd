//! RANSAC geometric verification of flow correspondences.

use rand::seq::index::sample;

use super::epipolar::{estimate_fundamental_8pt, sampson_distance, FundamentalMatrix, PointPair};
use super::flow::CorrespondenceSet;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub max_iters: usize,
    /// Sampson inlier threshold in px².
    pub threshold: f64,
    pub confidence: f64,
    /// Mean displacement (px) below which the pair counts as near static.
    pub min_motion: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { max_iters: 1000, threshold: 1.0, confidence: 0.999, min_motion: 0.5, seed: 0 }
    }
}

/// Outcome of a RANSAC fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub model: FundamentalMatrix,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

const REFITS: usize = 10;
// Local optimization gathers support at this multiple of the threshold.
const LO_SCALE: f64 = 4.0;

type Hypothesis = (FundamentalMatrix, Vec<bool>, usize);

fn classify(model: &FundamentalMatrix, pairs: &[PointPair], threshold: f64) -> (Vec<bool>, usize) {
    let mask: Vec<bool> = pairs.iter().map(|p| sampson_distance(model, p.0, p.1) <= threshold).collect();
    let n = mask.iter().filter(|&&b| b).count();
    (mask, n)
}

/// Iterated least-squares refits on the support of the current model while
/// the support threshold shrinks from `LO_SCALE·threshold` to `threshold`.
fn local_optimize(pairs: &[PointPair], threshold: f64, start: Hypothesis) -> Hypothesis {
    let mut current = start.0;
    let mut best = start;
    for k in 0..REFITS {
        let frac = k as f64 / (REFITS - 1) as f64;
        let (support_mask, _) = classify(&current, pairs, threshold * (LO_SCALE - (LO_SCALE - 1.0) * frac));
        let support: Vec<PointPair> = pairs.iter().zip(&support_mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
        let Ok(refit) = estimate_fundamental_8pt(&support) else {
            break;
        };
        let (mask, n) = classify(&refit, pairs, threshold);
        if n > best.2 {
            best = (refit, mask, n);
        }
        current = refit;
    }
    best
}

/// Consensus-maximal fundamental matrix over random 8-subsets. Every new
/// best hypothesis is locally refined by refitting on its support. Ties
/// keep the earliest hypothesis. `None` when every sample was degenerate.
pub fn ransac_fundamental(pairs: &[PointPair], cfg: &RansacConfig) -> Option<RansacFit> {
    if pairs.len() < 8 {
        return None;
    }
    let mut rng = stream(cfg.seed, &[pairs.len() as u64]);
    let mut best: Option<Hypothesis> = None;
    let mut needed = cfg.max_iters;
    let mut iters = 0;
    let mut subset = Vec::with_capacity(8);
    while iters < needed.min(cfg.max_iters) {
        iters += 1;
        subset.clear();
        subset.extend(sample(&mut rng, pairs.len(), 8).into_iter().map(|i| pairs[i]));
        let Ok(model) = estimate_fundamental_8pt(&subset) else {
            continue;
        };
        let (mask, n) = classify(&model, pairs, cfg.threshold);
        if best.as_ref().is_none_or(|b| n > b.2) {
            let refined = local_optimize(pairs, cfg.threshold, (model, mask, n));
            let ratio = refined.2 as f64 / pairs.len() as f64;
            let p_fail = 1.0 - ratio.powi(8);
            needed = if p_fail <= 0.0 {
                0
            } else if p_fail >= 1.0 {
                cfg.max_iters
            } else {
                ((1.0 - cfg.confidence).ln() / p_fail.ln()).ceil().max(1.0) as usize
            };
            best = Some(refined);
        }
    }
    let (model, inliers, _) = best?;
    Some(RansacFit { model, inliers, iterations: iters })
}

/// Keeps only epipolar-consistent correspondences. Sets with fewer than 8
/// matches, near-static pairs and fully degenerate samples are returned
/// unchanged with `verification_skipped` set.
pub fn geometric_verification(corrs: &CorrespondenceSet, cfg: &RansacConfig) -> CorrespondenceSet {
    let skip = || CorrespondenceSet { verification_skipped: true, ..corrs.clone() };
    if corrs.len() < 8 || corrs.mean_motion() < cfg.min_motion {
        return skip();
    }
    let pairs: Vec<PointPair> = corrs.matches.iter().map(|m| (m.source(), m.target())).collect();
    match ransac_fundamental(&pairs, cfg) {
        None => skip(),
        Some(fit) => CorrespondenceSet {
            height: corrs.height,
            width: corrs.width,
            matches: corrs.matches.iter().zip(&fit.inliers).filter(|(_, &m)| m).map(|(c, _)| *c).collect(),
            verification_skipped: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::flow::Correspondence;
    use crate::temporal::TwoViewScene;
    use rand::Rng;

    /// Rectified pair: rows preserved, columns shifted by a per-point disparity.
    fn rectified(n: usize, seed: u64) -> CorrespondenceSet {
        let mut rng = crate::rng::seeded(seed);
        let m = (0..n)
            .map(|_| {
                let (u, v) = (rng.random_range(0..200), rng.random_range(0..150));
                Correspondence { u, v, u2: u, v2: v + rng.random_range(1..50) }
            })
            .collect();
        CorrespondenceSet::new(200, 200, m).unwrap()
    }

    #[test]
    fn exact_inliers_are_all_kept() {
        let c = rectified(200, 5);
        let out = geometric_verification(&c, &RansacConfig::default());
        assert!(!out.verification_skipped);
        assert_eq!(out.matches, c.matches);
    }

    #[test]
    fn fewer_than_eight_skip() {
        let c = rectified(7, 1);
        let out = geometric_verification(&c, &RansacConfig::default());
        assert!(out.verification_skipped);
        assert_eq!(out.matches, c.matches);
    }

    #[test]
    fn near_static_pairs_skip() {
        let m = (0..50).map(|i| Correspondence { u: i, v: i, u2: i, v2: i }).collect();
        let c = CorrespondenceSet::new(60, 60, m).unwrap();
        let out = geometric_verification(&c, &RansacConfig::default());
        assert!(out.verification_skipped);
        assert_eq!(out.len(), 50);
    }

    #[test]
    fn rejects_uniform_outliers() {
        for seed in 0..10 {
            let scene = TwoViewScene::generate(140, 60, 480, 640, seed);
            let set = scene.rounded_set();
            let out = geometric_verification(&set, &RansacConfig { seed, ..RansacConfig::default() });
            assert!(!out.verification_skipped);
            let truth = &set.matches[..140];
            let kept_in = out.matches.iter().filter(|m| truth.contains(m)).count();
            let kept_out = out.len() - kept_in;
            assert!(kept_in >= 133 && kept_out <= 3, "seed {seed}: {kept_in} inliers, {kept_out} outliers");
        }
    }

    #[test]
    fn fit_is_deterministic_in_seed() {
        let scene = TwoViewScene::generate(60, 20, 240, 320, 3);
        let cfg = RansacConfig { seed: 4, ..RansacConfig::default() };
        let pairs: Vec<PointPair> = scene.inliers.iter().chain(&scene.outliers).copied().collect();
        assert_eq!(ransac_fundamental(&pairs, &cfg), ransac_fundamental(&pairs, &cfg));
    }
}
