use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::window::VisuoMotorWindow;
use crate::error::{domain, Error, Result};

/// Step size of the least-squares adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdaptationGain {
    /// `γ = scale / max(σ_max(Q̇ᵀQ̇), floor)`, recomputed per update. The
    /// floor (rad²/s²) keeps γ bounded when the arm barely moves and the
    /// window carries mostly detector noise, which would otherwise be
    /// integrated into the weakly excited columns of Ĵ near the goal.
    Normalized { scale: f64, floor: f64 },
    Fixed { gamma: f64 },
}

impl Default for AdaptationGain {
    fn default() -> Self {
        AdaptationGain::Normalized {
            scale: 0.5,
            floor: 1.0,
        }
    }
}

impl AdaptationGain {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AdaptationGain::Normalized { scale, floor } => {
                if !(0.0..2.0).contains(&scale) || !(floor >= 0.0) || !floor.is_finite() {
                    return Err(domain("normalized gain needs scale in [0, 2) and floor >= 0"));
                }
            }
            AdaptationGain::Fixed { gamma } => {
                if !(gamma >= 0.0) || !gamma.is_finite() {
                    return Err(domain("fixed gamma must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// The gain for a window whose joint-velocity stack is `q`.
    pub fn gamma(&self, q: &DMatrix<f64>) -> f64 {
        match *self {
            AdaptationGain::Fixed { gamma } => gamma,
            AdaptationGain::Normalized { scale, floor } => {
                let sigma = (q.transpose() * q).symmetric_eigenvalues().max();
                let denom = sigma.max(floor);
                if denom > 0.0 {
                    scale / denom
                } else {
                    0.0
                }
            }
        }
    }
}

/// Estimate of the combined Jacobian, `2K×J` in px/rad.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    pub j_hat: DMatrix<f64>,
    pub gain: AdaptationGain,
    pub initialized: bool,
}

impl JacobianEstimate {
    pub fn zeros(features: usize, joints: usize, gain: AdaptationGain) -> Self {
        Self {
            j_hat: DMatrix::zeros(features, joints),
            gain,
            initialized: false,
        }
    }

    pub fn warm(j_hat: DMatrix<f64>, gain: AdaptationGain) -> Self {
        Self {
            j_hat,
            gain,
            initialized: true,
        }
    }
}

/// `‖Q̇·Ĵᵀ − Ṗ‖_F` over the window, or 0 for an empty window.
pub fn window_residual(j_hat: &DMatrix<f64>, window: &VisuoMotorWindow) -> f64 {
    window
        .stacks()
        .map(|(q, p)| (q * j_hat.transpose() - p).norm())
        .unwrap_or(0.0)
}

/// One single-shot least-squares step. Every feature row moves against the
/// gradient of `½‖Q̇·J_ciᵀ − Ṗ_i‖²`, i.e. `Ĵ ← Ĵ − γ·(Q̇Ĵᵀ − Ṗ)ᵀ·Q̇`.
/// Returns the window residual after the step.
pub fn jacobian_update(est: &mut JacobianEstimate, window: &VisuoMotorWindow) -> Result<f64> {
    let (q, p) = window
        .stacks()
        .ok_or_else(|| domain("jacobian update needs at least one window sample"))?;
    if q.ncols() != est.j_hat.ncols() || p.ncols() != est.j_hat.nrows() {
        return Err(domain(format!(
            "window is {}x{} but the estimate is {}x{}",
            p.ncols(),
            q.ncols(),
            est.j_hat.nrows(),
            est.j_hat.ncols()
        )));
    }
    let gamma = est.gain.gamma(&q);
    let residual = &q * est.j_hat.transpose() - &p;
    let next = &est.j_hat - residual.transpose() * &q * gamma;
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::AdaptationDivergence(
            "non-finite jacobian estimate".into(),
        ));
    }
    est.j_hat = next;
    est.initialized = true;
    Ok((q * est.j_hat.transpose() - p).norm())
}
