use nalgebra::SMatrix;

use super::sigma::{merwe_sigma_points, unscented_transform, SIGMA_COUNT};
use super::{
    measurement_model, process_model, symmetrize, KeypointFilter, MeasurementVector, NoiseConfig,
    SigmaParams, StateVector, TrackerState, MEAS_DIM, STATE_DIM,
};
use crate::error::{Error, Result};

const INNOVATION_JITTER: f64 = 1e-9;

/// Unscented filter over the constant-acceleration keypoint model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Ukf {
    pub params: SigmaParams,
}

impl KeypointFilter for Ukf {
    fn predict(&self, state: &TrackerState, noise: &NoiseConfig) -> Result<TrackerState> {
        ukf_predict(state, noise, &self.params)
    }

    fn update(
        &self,
        state: &TrackerState,
        z: &MeasurementVector,
        noise: &NoiseConfig,
    ) -> Result<TrackerState> {
        ukf_update(state, z, noise, &self.params)
    }
}

pub fn ukf_predict(
    tracker: &TrackerState,
    noise: &NoiseConfig,
    params: &SigmaParams,
) -> Result<TrackerState> {
    let sigma = merwe_sigma_points(&tracker.mean, &tracker.covariance, params)?;
    let propagated: [StateVector; SIGMA_COUNT] =
        std::array::from_fn(|i| process_model(&sigma.points[i], noise.dt));
    let (mean, cov) = unscented_transform(&propagated, &sigma, &noise.process_covariance());
    let out = TrackerState {
        mean,
        covariance: symmetrize(&cov),
    };
    out.ensure_finite("ukf predict")?;
    Ok(out)
}

pub fn ukf_update(
    tracker: &TrackerState,
    z: &MeasurementVector,
    noise: &NoiseConfig,
    params: &SigmaParams,
) -> Result<TrackerState> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::FilterDivergence("non-finite measurement".into()));
    }
    let sigma = merwe_sigma_points(&tracker.mean, &tracker.covariance, params)?;
    let predicted: [MeasurementVector; SIGMA_COUNT] =
        std::array::from_fn(|i| measurement_model(&sigma.points[i]));
    let (z_hat, s) = unscented_transform(&predicted, &sigma, &noise.measurement_covariance());

    let mut cross = SMatrix::<f64, STATE_DIM, MEAS_DIM>::zeros();
    for ((x, z), w) in sigma.points.iter().zip(&predicted).zip(&sigma.cov_weights) {
        cross += (x - tracker.mean) * (z - z_hat).transpose() * *w;
    }

    let s_inv = invert_innovation(&s)?;
    let gain = cross * s_inv;
    let mean = tracker.mean + gain * (z - z_hat);
    let cov = tracker.covariance - gain * s * gain.transpose();
    let out = TrackerState {
        mean,
        covariance: symmetrize(&cov),
    };
    out.ensure_finite("ukf update")?;
    Ok(out)
}

pub(crate) fn invert_innovation(
    s: &SMatrix<f64, MEAS_DIM, MEAS_DIM>,
) -> Result<SMatrix<f64, MEAS_DIM, MEAS_DIM>> {
    let sym = (s + s.transpose()) * 0.5;
    sym.cholesky()
        .or_else(|| (sym + SMatrix::identity() * INNOVATION_JITTER).cholesky())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::FilterDivergence("innovation covariance is not invertible".into()))
}
