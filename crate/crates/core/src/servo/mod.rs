//! Uncalibrated image-based servoing: a sliding visuo-motor window, an online
//! least-squares estimate of the combined hand-eye Jacobian, and a
//! proportional pseudo-inverse control law.

mod control;
mod jacobian;
mod run;
mod window;

pub use control::{
    control_law, excitation_trajectory, pseudo_inverse, ControlCommand, ControlGains,
};
pub use jacobian::{jacobian_update, window_residual, AdaptationGain, JacobianEstimate};
pub use run::{run_servo_loop, InitialJacobian, ServoConfig, ServoScenario};
pub use window::VisuoMotorWindow;

use nalgebra::DVector;

use crate::camera::Pixel;
use crate::error::{domain, Result};

/// Stacked pixel coordinates `(u₁, v₁, …, u_K, v_K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub DVector<f64>);

impl FeatureVector {
    pub fn from_pixels(pixels: &[Pixel]) -> Self {
        Self(DVector::from_iterator(
            2 * pixels.len(),
            pixels.iter().flat_map(|p| [p.x, p.y]),
        ))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn feature_error(p: &FeatureVector, p_star: &FeatureVector) -> Result<DVector<f64>> {
    if p.len() != p_star.len() {
        return Err(domain(format!(
            "feature dimension {} does not match goal dimension {}",
            p.len(),
            p_star.len()
        )));
    }
    Ok(&p.0 - &p_star.0)
}
