use nalgebra::{SMatrix, SVector};

use super::{SigmaParams, StateCovariance, StateVector, STATE_DIM};
use crate::error::{Error, Result};

pub const SIGMA_COUNT: usize = 2 * STATE_DIM + 1;

const SQRT_JITTER: f64 = 1e-9;

/// Merwe scaled sigma points with their weights.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    pub points: [StateVector; SIGMA_COUNT],
    pub mean_weights: [f64; SIGMA_COUNT],
    pub cov_weights: [f64; SIGMA_COUNT],
}

/// Symmetric square root `S = V·diag(√λ)·Vᵀ` with negative eigenvalues
/// clipped to zero, so that `S·S = C` for PSD `C`.
pub fn symmetric_sqrt(cov: &StateCovariance) -> Option<StateCovariance> {
    let attempt = |c: StateCovariance| {
        let eig = c.symmetric_eigen();
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let s = eig.eigenvectors * StateCovariance::from_diagonal(&roots) * eig.eigenvectors.transpose();
        s.iter().all(|v| v.is_finite()).then_some(s)
    };
    let sym = (cov + cov.transpose()) * 0.5;
    if !sym.iter().all(|v| v.is_finite()) {
        return None;
    }
    attempt(sym).or_else(|| attempt(sym + StateCovariance::identity() * SQRT_JITTER))
}

pub fn merwe_sigma_points(
    mean: &StateVector,
    cov: &StateCovariance,
    params: &SigmaParams,
) -> Result<SigmaPoints> {
    let n = STATE_DIM as f64;
    let lambda = params.lambda(STATE_DIM);
    let spread = n + lambda;
    if !(spread > 0.0) {
        return Err(Error::FilterDivergence(format!(
            "sigma spread n + lambda = {spread} is not positive"
        )));
    }
    let root = symmetric_sqrt(&(cov * spread)).ok_or_else(|| {
        Error::FilterDivergence("covariance square root failed".into())
    })?;

    let mut points = [*mean; SIGMA_COUNT];
    for i in 0..STATE_DIM {
        let col = root.column(i);
        points[1 + i] = mean + col;
        points[1 + STATE_DIM + i] = mean - col;
    }

    let (w0, w) = exact_weights(spread);
    let mut mean_weights = [w; SIGMA_COUNT];
    let mut cov_weights = [w; SIGMA_COUNT];
    mean_weights[0] = w0;
    cov_weights[0] = w0 + (1.0 - params.alpha * params.alpha + params.beta);
    Ok(SigmaPoints {
        points,
        mean_weights,
        cov_weights,
    })
}

/// Central and outer mean weights `(λ/(n+λ), 1/(2(n+λ)))`.
///
/// For small alpha these are of order ±1/α², so a naive sum carries an
/// absolute rounding error far above 1e-12. The outer weight is rounded to
/// a multiple of the unit in the last place of the largest partial sum,
/// which makes every partial sum representable and `Σ W = 1` exact in f64.
/// The relative change to the outer weight is below 2⁻⁵².
fn exact_weights(spread: f64) -> (f64, f64) {
    let outer = 2.0 * STATE_DIM as f64;
    let w = 1.0 / (2.0 * spread);
    let big = (outer * w).abs().max((1.0 - outer * w).abs()).max(1.0);
    let quantum = 2f64.powi(big.log2().floor() as i32 + 1 - 53);
    let w = (w / quantum).round() * quantum;
    (1.0 - outer * w, w)
}

/// Weighted mean and covariance of transformed sigma points. The mean is
/// accumulated relative to the central point, which keeps the large
/// opposite-signed weights of small-alpha sets from cancelling catastrophically.
pub fn unscented_transform<const M: usize>(
    transformed: &[SVector<f64, M>; SIGMA_COUNT],
    sigma: &SigmaPoints,
    noise: &SMatrix<f64, M, M>,
) -> (SVector<f64, M>, SMatrix<f64, M, M>) {
    let center = transformed[0];
    let mut offset = SVector::<f64, M>::zeros();
    for (y, w) in transformed.iter().zip(&sigma.mean_weights).skip(1) {
        offset += (y - center) * *w;
    }
    let mean = center + offset;
    let mut cov = *noise;
    for (y, w) in transformed.iter().zip(&sigma.cov_weights) {
        let d = y - mean;
        cov += d * d.transpose() * *w;
    }
    (mean, cov)
}
