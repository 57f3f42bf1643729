use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::jacobian::JacobianEstimate;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlGains {
    /// Proportional gain in 1/s.
    pub lambda: f64,
    /// Singular values below `pinv_tolerance·σ_max` are treated as zero.
    pub pinv_tolerance: f64,
    /// Largest allowed per-joint speed in rad/s. Faster commands are scaled
    /// down as a whole, keeping their direction.
    pub max_joint_speed: Option<f64>,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            pinv_tolerance: 1e-6,
            max_joint_speed: Some(0.5),
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(domain("lambda must be finite and >= 0"));
        }
        if !(self.pinv_tolerance > 0.0 && self.pinv_tolerance < 1.0) {
            return Err(domain("pinv_tolerance must be in (0, 1)"));
        }
        if let Some(v) = self.max_joint_speed {
            if !(v > 0.0) {
                return Err(domain("max_joint_speed must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    pub q_dot: DVector<f64>,
    /// True when the speed clamp scaled the command down.
    pub clamped: bool,
}

/// SVD-based Moore-Penrose pseudo-inverse with a relative cutoff.
pub fn pseudo_inverse(j: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = j.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = j.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    if !(s_max > 0.0) {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = tol * s_max;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// `q̇ = −λ·Ĵ⁺·e`, then the optional speed clamp.
pub fn control_law(
    est: &JacobianEstimate,
    e: &DVector<f64>,
    gains: &ControlGains,
) -> Result<ControlCommand> {
    if !est.initialized {
        return Err(Error::NotReady);
    }
    if e.len() != est.j_hat.nrows() {
        return Err(domain(format!(
            "error has {} entries but the jacobian has {} rows",
            e.len(),
            est.j_hat.nrows()
        )));
    }
    let mut q_dot = pseudo_inverse(&est.j_hat, gains.pinv_tolerance) * e * -gains.lambda;
    let mut clamped = false;
    if let Some(limit) = gains.max_joint_speed {
        let peak = q_dot.amax();
        if peak > limit {
            q_dot *= limit / peak;
            clamped = true;
        }
    }
    Ok(ControlCommand { q_dot, clamped })
}

/// Square pulses exciting one joint at a time: `+amplitude` for
/// `steps_per_joint` ticks, then `−amplitude` for as many, so each joint
/// returns to where it started and the stacked commands have full column rank.
pub fn excitation_trajectory(
    joints: usize,
    amplitude: f64,
    steps_per_joint: usize,
) -> Result<Vec<DVector<f64>>> {
    if !(amplitude > 0.0) {
        return Err(domain("excitation amplitude must be > 0"));
    }
    let mut out = Vec::with_capacity(2 * joints * steps_per_joint);
    for j in 0..joints {
        for sign in [1.0, -1.0] {
            for _ in 0..steps_per_joint {
                let mut v = DVector::zeros(joints);
                v[j] = sign * amplitude;
                out.push(v);
            }
        }
    }
    Ok(out)
}
