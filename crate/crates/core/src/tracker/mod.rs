//! Per-keypoint filtering under a constant-acceleration image-space model.
//!
//! Each keypoint carries a state `[x, y, vx, vy, ax, ay]` in pixels, px/s and
//! px/s². The measurement is `[x, y, vx, vy]`, with the velocity part formed
//! by differencing consecutive corrected positions.

mod correction;
mod kf;
mod sigma;
mod ukf;

pub use correction::{
    correct_observations, CorrectedFrame, KeypointStatus, KeypointTracker, TrackedKeypoint,
};
pub use kf::{kf_predict, kf_update, measurement_matrix, transition_matrix, LinearKf};
pub use sigma::{merwe_sigma_points, symmetric_sqrt, unscented_transform, SigmaPoints};
pub use ukf::{ukf_predict, ukf_update, Ukf};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::camera::Pixel;
use crate::error::{domain, Error, Result};

pub const STATE_DIM: usize = 6;
pub const MEAS_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasurementVector = SVector<f64, MEAS_DIM>;
pub type MeasurementCovariance = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl TrackerState {
    /// State at a first sighting: the position, zero velocity and acceleration.
    pub fn at_rest(position: Pixel, noise: &NoiseConfig) -> Self {
        Self {
            mean: StateVector::from([position.x, position.y, 0.0, 0.0, 0.0, 0.0]),
            covariance: noise.initial_covariance(),
        }
    }

    pub fn position(&self) -> Pixel {
        Pixel::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[2], self.mean[3])
    }

    /// `(max |C - Cᵀ|, min eigenvalue)` of the covariance.
    pub fn covariance_health(&self) -> (f64, f64) {
        let asym = (self.covariance - self.covariance.transpose()).amax();
        let sym = (self.covariance + self.covariance.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        (asym, min_eig)
    }

    pub(crate) fn ensure_finite(&self, stage: &str) -> Result<()> {
        if self.mean.iter().chain(self.covariance.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::FilterDivergence(format!("non-finite state after {stage}")))
        }
    }
}

/// Diagonal noise model and filter period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub p0_diag: [f64; STATE_DIM],
    pub q_diag: [f64; STATE_DIM],
    pub r_diag: [f64; MEAS_DIM],
    pub dt: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            p0_diag: [50.0, 50.0, 30.0, 30.0, 10.0, 10.0],
            q_diag: [0.2, 0.2, 1.0, 1.0, 0.2, 0.2],
            r_diag: [0.1, 0.1, 30.0, 30.0],
            dt: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let all = self.p0_diag.iter().chain(&self.q_diag).chain(&self.r_diag);
        if all.clone().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(domain("noise diagonals must be finite and >= 0"));
        }
        if !(self.dt > 0.0) {
            return Err(domain("tracker dt must be > 0"));
        }
        Ok(())
    }

    pub fn initial_covariance(&self) -> StateCovariance {
        StateCovariance::from_diagonal(&StateVector::from(self.p0_diag))
    }

    pub fn process_covariance(&self) -> StateCovariance {
        StateCovariance::from_diagonal(&StateVector::from(self.q_diag))
    }

    pub fn measurement_covariance(&self) -> MeasurementCovariance {
        MeasurementCovariance::from_diagonal(&MeasurementVector::from(self.r_diag))
    }
}

/// Scaled sigma-point parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SigmaParams {
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.beta.is_finite() || !self.kappa.is_finite() {
            return Err(domain("sigma alpha must be > 0 and beta, kappa finite"));
        }
        if !(STATE_DIM as f64 + self.lambda(STATE_DIM) > 0.0) {
            return Err(domain("sigma parameters give a non-positive spread n + lambda"));
        }
        Ok(())
    }
}

/// Distance gate applied to visible detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatePolicy {
    /// Pixels between prediction and detection above which a detection is an outlier.
    pub distance_threshold: f64,
    /// After this many consecutive frames without an accepted detection, the
    /// next detection is accepted regardless of distance. `None` never
    /// reacquires, which leaves a track that drifted during an occlusion
    /// gating every later detection.
    pub reacquire_after: Option<u32>,
}

impl Default for GatePolicy {
    fn default() -> Self {
        Self {
            distance_threshold: 30.0,
            reacquire_after: Some(2),
        }
    }
}

impl GatePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0) {
            return Err(domain("gate distance_threshold must be > 0"));
        }
        Ok(())
    }
}

/// Constant-acceleration transition.
pub fn process_model(state: &StateVector, dt: f64) -> StateVector {
    let half_dt2 = 0.5 * dt * dt;
    StateVector::from([
        state[0] + state[2] * dt + state[4] * half_dt2,
        state[1] + state[3] * dt + state[5] * half_dt2,
        state[2] + state[4] * dt,
        state[3] + state[5] * dt,
        state[4],
        state[5],
    ])
}

/// Position and velocity are observed.
pub fn measurement_model(state: &StateVector) -> MeasurementVector {
    state.fixed_rows::<MEAS_DIM>(0).into_owned()
}

/// Finite-difference pixel velocity between two frames.
pub fn estimate_velocity(prev: Pixel, cur: Pixel, dt: f64) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(domain(format!("dt must be > 0, got {dt}")));
    }
    Ok(((cur.x - prev.x) / dt, (cur.y - prev.y) / dt))
}

/// A predict/update pair over [`TrackerState`].
pub trait KeypointFilter {
    fn predict(&self, state: &TrackerState, noise: &NoiseConfig) -> Result<TrackerState>;
    fn update(
        &self,
        state: &TrackerState,
        z: &MeasurementVector,
        noise: &NoiseConfig,
    ) -> Result<TrackerState>;
}

pub(crate) fn symmetrize(c: &StateCovariance) -> StateCovariance {
    (c + c.transpose()) * 0.5
}
