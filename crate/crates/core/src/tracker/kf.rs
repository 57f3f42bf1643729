//! Closed-form linear Kalman filter with the same transition, observation
//! and noise matrices as the unscented filter.

use nalgebra::SMatrix;

use super::ukf::invert_innovation;
use super::{
    symmetrize, KeypointFilter, MeasurementVector, NoiseConfig, StateCovariance, TrackerState,
    MEAS_DIM, STATE_DIM,
};
use crate::error::{Error, Result};

pub fn transition_matrix(dt: f64) -> StateCovariance {
    let h = 0.5 * dt * dt;
    #[rustfmt::skip]
    let f = StateCovariance::from_row_slice(&[
        1.0, 0.0, dt,  0.0, h,   0.0,
        0.0, 1.0, 0.0, dt,  0.0, h,
        0.0, 0.0, 1.0, 0.0, dt,  0.0,
        0.0, 0.0, 0.0, 1.0, 0.0, dt,
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
    ]);
    f
}

pub fn measurement_matrix() -> SMatrix<f64, MEAS_DIM, STATE_DIM> {
    SMatrix::<f64, MEAS_DIM, STATE_DIM>::identity()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinearKf;

impl KeypointFilter for LinearKf {
    fn predict(&self, state: &TrackerState, noise: &NoiseConfig) -> Result<TrackerState> {
        let out = kf_predict(state, noise);
        out.ensure_finite("kf predict")?;
        Ok(out)
    }

    fn update(
        &self,
        state: &TrackerState,
        z: &MeasurementVector,
        noise: &NoiseConfig,
    ) -> Result<TrackerState> {
        kf_update(state, z, noise)
    }
}

pub fn kf_predict(tracker: &TrackerState, noise: &NoiseConfig) -> TrackerState {
    let f = transition_matrix(noise.dt);
    TrackerState {
        mean: f * tracker.mean,
        covariance: symmetrize(&(f * tracker.covariance * f.transpose() + noise.process_covariance())),
    }
}

pub fn kf_update(
    tracker: &TrackerState,
    z: &MeasurementVector,
    noise: &NoiseConfig,
) -> Result<TrackerState> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::FilterDivergence("non-finite measurement".into()));
    }
    let h = measurement_matrix();
    let s = h * tracker.covariance * h.transpose() + noise.measurement_covariance();
    let gain = tracker.covariance * h.transpose() * invert_innovation(&s)?;
    let mean = tracker.mean + gain * (z - h * tracker.mean);
    let cov = tracker.covariance - gain * s * gain.transpose();
    let out = TrackerState {
        mean,
        covariance: symmetrize(&cov),
    };
    out.ensure_finite("kf update")?;
    Ok(out)
}
