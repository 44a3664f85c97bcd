//! Synthetic two-camera scenes with a known fundamental matrix.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;

use super::epipolar::{FundamentalMatrix, PointPair};
use super::flow::{Correspondence, CorrespondenceSet};
use crate::rng::stream;

/// Exact projections of random 3D points into two views, plus uniform outliers.
#[derive(Debug, Clone)]
pub struct TwoViewScene {
    pub fundamental: FundamentalMatrix,
    pub height: usize,
    pub width: usize,
    pub inliers: Vec<PointPair>,
    pub outliers: Vec<PointPair>,
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

impl TwoViewScene {
    pub fn generate(n_inliers: usize, n_outliers: usize, height: usize, width: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[0x2F1E]);
        let focal = 0.8 * height.max(width) as f64;
        let k = Matrix3::new(focal, 0.0, height as f64 / 2.0, 0.0, focal, width as f64 / 2.0, 0.0, 0.0, 1.0);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rot = Rotation3::new(axis.normalize() * rng.random_range(0.05..0.2));
        let t = Vector3::new(rng.random_range(0.3..0.8), rng.random_range(-0.4..0.4), rng.random_range(-0.2..0.2));
        let k_inv = k.try_inverse().expect("intrinsics invertible");
        let f = k_inv.transpose() * skew(&t) * rot.matrix() * k_inv;
        let fundamental = FundamentalMatrix::from_matrix(f).expect("non-degenerate geometry");

        let inside = |p: &Vector3<f64>| -> Option<[f64; 2]> {
            let (a, b) = (p.x / p.z, p.y / p.z);
            (a >= 0.0 && b >= 0.0 && a <= (height - 1) as f64 && b <= (width - 1) as f64).then_some([a, b])
        };
        let mut inliers = Vec::with_capacity(n_inliers);
        while inliers.len() < n_inliers {
            let x = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..9.0));
            let p1 = k * x;
            let p2 = k * (rot * x + t);
            if let (Some(a), Some(b)) = (inside(&p1), inside(&p2)) {
                inliers.push((a, b));
            }
        }
        let mut outliers = Vec::with_capacity(n_outliers);
        while outliers.len() < n_outliers {
            let a = [rng.random_range(0.0..(height - 1) as f64), rng.random_range(0.0..(width - 1) as f64)];
            let b = [rng.random_range(0.0..(height - 1) as f64), rng.random_range(0.0..(width - 1) as f64)];
            // Uniform pairs rarely land on their epipolar line; keep only clear outliers.
            if super::epipolar::sampson_distance(&fundamental, a, b) > 25.0 {
                outliers.push((a, b));
            }
        }
        Self { fundamental, height, width, inliers, outliers }
    }

    /// Integer correspondences: inliers first, then outliers.
    pub fn rounded_set(&self) -> CorrespondenceSet {
        let to_corr = |(a, b): &PointPair| Correspondence {
            u: a[0].round() as usize,
            v: a[1].round() as usize,
            u2: b[0].round() as usize,
            v2: b[1].round() as usize,
        };
        let matches = self.inliers.iter().chain(&self.outliers).map(to_corr).collect();
        CorrespondenceSet::new(self.height, self.width, matches).expect("points inside the frame")
    }
}
