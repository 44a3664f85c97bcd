//! Normalized eight-point estimation of the fundamental matrix.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Rank-2 fundamental matrix with unit Frobenius norm; `x2ᵀ F x1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

/// A point pair in homogeneous-able pixel coordinates `(row, column)`.
pub type PointPair = ([f64; 2], [f64; 2]);

// Ratio below which the 8th singular value of the design matrix counts as zero.
pub const RANK_TOL: f64 = 1e-9;

impl FundamentalMatrix {
    /// Normalizes to unit Frobenius norm and enforces rank 2.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut s = svd.singular_values;
        let smallest = s.imin();
        s[smallest] = 0.0;
        let f = u * Matrix3::from_diagonal(&s) * vt;
        let norm = f.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateConfiguration("zero fundamental matrix".into()));
        }
        Ok(Self(f / norm))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }

    /// Sign-insensitive distance `min(‖A − B‖, ‖A + B‖)`.
    pub fn distance(&self, other: &FundamentalMatrix) -> f64 {
        (self.0 - other.0).norm().min((self.0 + other.0).norm())
    }

    /// Algebraic residual `x2ᵀ F x1`.
    pub fn residual(&self, x1: [f64; 2], x2: [f64; 2]) -> f64 {
        hom(x2).dot(&(self.0 * hom(x1)))
    }
}

fn hom(p: [f64; 2]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], 1.0)
}

/// Similarity moving the centroid to the origin with mean distance `√2`.
fn normalizing_transform(points: impl Iterator<Item = [f64; 2]> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Hartley-normalized linear solve with rank-2 enforcement.
pub fn estimate_fundamental_8pt(pairs: &[PointPair]) -> Result<FundamentalMatrix> {
    if pairs.len() < 8 {
        return Err(Error::DegenerateConfiguration(format!("{} correspondences, need 8", pairs.len())));
    }
    let t1 = normalizing_transform(pairs.iter().map(|p| p.0));
    let t2 = normalizing_transform(pairs.iter().map(|p| p.1));
    let rows = pairs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p1, p2)) in pairs.iter().enumerate() {
        let x = t1 * hom(*p1);
        let y = t2 * hom(*p2);
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = y[r] * x[c];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if sv(0) <= 0.0 || sv(7) <= RANK_TOL * sv(0) {
        return Err(Error::DegenerateConfiguration("design matrix rank below 8".into()));
    }
    let null = vt.row(order[8]);
    let f_norm = Matrix3::from_row_slice(&null.iter().copied().collect::<Vec<_>>());
    let rank2 = FundamentalMatrix::from_matrix(f_norm)?;
    FundamentalMatrix::from_matrix(t2.transpose() * rank2.0 * t1)
}

/// First-order geometric error of `x1 ↔ x2` under `f`; `+∞` when the
/// epipolar gradients vanish.
pub fn sampson_distance(f: &FundamentalMatrix, x1: [f64; 2], x2: [f64; 2]) -> f64 {
    let (a, b) = (hom(x1), hom(x2));
    let fx = f.0 * a;
    let ftx = f.0.transpose() * b;
    let num = b.dot(&fx).powi(2);
    let den = fx[0] * fx[0] + fx[1] * fx[1] + ftx[0] * ftx[0] + ftx[1] * ftx[1];
    if den == 0.0 {
        return f64::INFINITY;
    }
    num / den
}
