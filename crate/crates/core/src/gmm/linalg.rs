//! Closed-form helpers for 2-vectors and symmetric 2×2 matrices.

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower-triangular Cholesky factor `[l11, l21, l22]`, or `None` when the
/// matrix is not (numerically) positive definite.
pub fn cholesky(m: &Mat2) -> Option<[f64; 3]> {
    let a = m[0][0];
    if !(a > 0.0) || !a.is_finite() {
        return None;
    }
    let l11 = a.sqrt();
    let l21 = m[1][0] / l11;
    let rest = m[1][1] - l21 * l21;
    if !(rest > 0.0) || !rest.is_finite() {
        return None;
    }
    Some([l11, l21, rest.sqrt()])
}

pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn inverse(m: &Mat2) -> Option<Mat2> {
    let d = det(m);
    if !(d > 0.0) || !d.is_finite() {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

pub fn add_diagonal(m: &Mat2, eps: f64) -> Mat2 {
    [[m[0][0] + eps, m[0][1]], [m[1][0], m[1][1] + eps]]
}

/// Symmetrize and add `eps·I` until a Cholesky factorization succeeds.
pub fn regularize(m: &Mat2, eps: f64) -> Mat2 {
    let off = 0.5 * (m[0][1] + m[1][0]);
    let mut out = [[m[0][0].max(0.0), off], [off, m[1][1].max(0.0)]];
    let mut bump = eps;
    while cholesky(&out).is_none() {
        out = add_diagonal(&out, bump);
        bump *= 10.0;
    }
    out
}

/// Squared Mahalanobis distance of `x` from `mean` under `cov`, using the
/// Cholesky factor for stability.
pub fn mahalanobis_sq(x: &Vec2, mean: &Vec2, chol: &[f64; 3]) -> f64 {
    let [l11, l21, l22] = *chol;
    let d0 = x[0] - mean[0];
    let d1 = x[1] - mean[1];
    let z0 = d0 / l11;
    let z1 = (d1 - l21 * z0) / l22;
    z0 * z0 + z1 * z1
}

/// `ln N(x | mean, cov)` given the Cholesky factor of `cov`.
pub fn log_pdf(x: &Vec2, mean: &Vec2, chol: &[f64; 3]) -> f64 {
    let half_log_det = chol[0].ln() + chol[2].ln();
    -LN_2PI - half_log_det - 0.5 * mahalanobis_sq(x, mean, chol)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Eigen-decomposition of a symmetric 2×2 matrix: `(λ_major, λ_minor, angle)`
/// where `angle` is the direction of the major axis in radians.
pub fn symmetric_eigen(m: &Mat2) -> (f64, f64, f64) {
    let a = m[0][0];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let c = m[1][1];
    let mid = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    (mid + radius, mid - radius, angle)
}
