use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::control::{control_law, excitation_trajectory, ControlGains};
use super::jacobian::{jacobian_update, AdaptationGain, JacobianEstimate};
use super::window::VisuoMotorWindow;
use super::{feature_error, FeatureVector};
use crate::camera::{PinholeCamera, Pixel};
use crate::error::{domain, Error, Result};
use crate::metrics::{RunOutcome, TrajectoryRecord, TrajectoryRow};
use crate::perception::{observe_projections, OcclusionScenario};
use crate::rng::{self, Stream};
use crate::robot::{forward_keypoints, oracle_image_jacobian, step, JointConfiguration, ManipulatorModel};
use crate::tracker::{GatePolicy, KeypointTracker, NoiseConfig, SigmaParams, Ukf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialJacobian {
    /// Start from zero and learn everything from the excitation phase.
    Zero,
    /// Start from the finite-difference oracle at the start configuration.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoConfig {
    pub window: usize,
    pub gain: AdaptationGain,
    pub control: ControlGains,
    pub excitation_amplitude: f64,
    pub excitation_steps_per_joint: usize,
    /// Ground-truth `‖e‖` in pixels below which a tick counts toward success.
    pub success_threshold_px: f64,
    pub success_dwell_ticks: usize,
    /// No motion is commanded while the tracked `‖e‖` is below this.
    pub deadband_px: f64,
    pub initial_jacobian: InitialJacobian,
    /// Total ticks including excitation.
    pub step_budget: usize,
    pub dt: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            window: 20,
            gain: AdaptationGain::default(),
            control: ControlGains::default(),
            excitation_amplitude: 0.1,
            excitation_steps_per_joint: 5,
            success_threshold_px: 2.0,
            success_dwell_ticks: 10,
            deadband_px: 1.0,
            initial_jacobian: InitialJacobian::Zero,
            step_budget: 1000,
            dt: 0.1,
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(domain("servo window must be > 0"));
        }
        self.gain.validate()?;
        self.control.validate()?;
        if !(self.excitation_amplitude > 0.0) {
            return Err(domain("excitation_amplitude must be > 0"));
        }
        if !(self.success_threshold_px > 0.0) || self.success_dwell_ticks == 0 {
            return Err(domain("success threshold must be > 0 and dwell >= 1"));
        }
        if !(self.deadband_px >= 0.0) {
            return Err(domain("deadband_px must be >= 0"));
        }
        if !(self.dt > 0.0) {
            return Err(domain("servo dt must be > 0"));
        }
        Ok(())
    }
}

/// Everything one servo run needs.
#[derive(Debug, Clone)]
pub struct ServoScenario {
    pub id: String,
    pub seed: u64,
    pub model: ManipulatorModel,
    pub camera: PinholeCamera,
    pub perception: OcclusionScenario,
    pub noise: NoiseConfig,
    pub sigma: SigmaParams,
    pub gate: GatePolicy,
    pub servo: ServoConfig,
    pub start: JointConfiguration,
    pub goal: JointConfiguration,
}

fn true_pixels(model: &ManipulatorModel, camera: &PinholeCamera, q: &JointConfiguration) -> Result<Vec<Pixel>> {
    forward_keypoints(model, q)?
        .iter()
        .map(|p| camera.project(p))
        .collect()
}

/// Excitation then closed-loop control. Divergence and loss of view end the
/// run with a failure outcome rather than an error; an `Err` means the
/// scenario itself was invalid.
pub fn run_servo_loop(sc: &ServoScenario) -> Result<TrajectoryRecord> {
    sc.servo.validate()?;
    sc.noise.validate()?;
    if (sc.noise.dt - sc.servo.dt).abs() > 1e-12 {
        return Err(domain("tracker dt and servo dt differ"));
    }
    let cfg = &sc.servo;
    let model = &sc.model;
    let dt = cfg.dt;
    let joints = model.joint_count();
    let goal_px = true_pixels(model, &sc.camera, &sc.goal)?;
    if !goal_px.iter().all(|p| sc.camera.in_bounds(p)) {
        return Err(domain("goal keypoints are not all inside the image"));
    }
    let p_star = FeatureVector::from_pixels(&goal_px);
    let features = p_star.len();

    let excitation = excitation_trajectory(joints, cfg.excitation_amplitude, cfg.excitation_steps_per_joint)?;
    let mut est = match cfg.initial_jacobian {
        InitialJacobian::Zero => JacobianEstimate::zeros(features, joints, cfg.gain),
        InitialJacobian::Oracle => {
            JacobianEstimate::warm(oracle_image_jacobian(model, &sc.camera, &sc.start, 1e-6)?, cfg.gain)
        }
    };
    let mut window = VisuoMotorWindow::new(cfg.window)?;
    let mut tracker = KeypointTracker::new(Ukf { params: sc.sigma }, sc.noise.clone(), sc.gate);
    let mut rng = rng::stream(sc.seed, Stream::Perception);
    let center = Pixel::new(sc.camera.cx, sc.camera.cy);

    let mut q = sc.start.clone();
    let mut prev: Option<(FeatureVector, DVector<f64>)> = None;
    let mut rows = Vec::new();
    let mut streak = 0;
    let mut clamped_ticks = 0;
    let mut outcome = RunOutcome::BudgetExhausted;

    for tick in 0..cfg.step_budget {
        let truth = match true_pixels(model, &sc.camera, &q) {
            Ok(t) => t,
            Err(e) => {
                outcome = RunOutcome::FilterDivergence(format!("lost view of the arm: {e}"));
                break;
            }
        };
        let projections = sc.camera.project_keypoints(&forward_keypoints(model, &q)?);
        let obs = observe_projections(&projections, &sc.perception, tick as u64, &mut rng);
        let frame = match tracker.process(&obs, center) {
            Ok(f) => f,
            Err(e) => {
                outcome = RunOutcome::FilterDivergence(e.to_string());
                break;
            }
        };
        let p = FeatureVector::from_pixels(&frame.positions);

        if let Some((prev_p, applied)) = prev.take() {
            let p_dot = (&p.0 - &prev_p.0) / dt;
            window.push_sample(applied, p_dot)?;
        }
        let mut jac_residual = 0.0;
        if !window.is_empty() {
            match jacobian_update(&mut est, &window) {
                Ok(r) => jac_residual = r,
                Err(Error::AdaptationDivergence(m)) => {
                    outcome = RunOutcome::AdaptationDivergence(m);
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        let e_tracked = feature_error(&p, &p_star)?;
        let e_true = feature_error(&FeatureVector::from_pixels(&truth), &p_star)?;
        let in_control = tick >= excitation.len();
        let command = if !in_control {
            excitation[tick].clone()
        } else if e_tracked.norm() < cfg.deadband_px {
            DVector::zeros(joints)
        } else {
            match control_law(&est, &e_tracked, &cfg.control) {
                Ok(c) => {
                    clamped_ticks += usize::from(c.clamped);
                    c.q_dot
                }
                Err(Error::NotReady) => DVector::zeros(joints),
                Err(e) => return Err(e),
            }
        };
        rows.push(TrajectoryRow {
            t: tick as f64 * dt,
            err_norm: e_true.norm(),
            errors: e_true.iter().copied().collect(),
            q: q.q.iter().copied().collect(),
            q_dot: command.iter().copied().collect(),
            status: frame.status.clone(),
            jac_residual,
        });

        if in_control {
            streak = if e_true.norm() < cfg.success_threshold_px { streak + 1 } else { 0 };
            if streak >= cfg.success_dwell_ticks {
                outcome = RunOutcome::Converged;
                break;
            }
        }

        let next = step(model, &q, &command, dt)?.q;
        // the realized joint rate, which differs from the command at a limit
        let applied = (&next.q - &q.q) / dt;
        q = next;
        prev = Some((p, applied));
    }

    Ok(TrajectoryRecord {
        scenario_id: sc.id.clone(),
        seed: sc.seed,
        dt,
        control_start: excitation.len().min(rows.len()),
        rows,
        outcome,
        clamped_ticks,
    })
}
