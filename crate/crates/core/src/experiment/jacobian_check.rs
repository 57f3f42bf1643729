//! Online Jacobian estimation against the finite-difference oracle.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::output::{write_all, Manifest};
use super::{ExperimentConfig, Preset};
use crate::camera::PinholeCamera;
use crate::error::{Error, Result};
use crate::metrics::sig9;
use crate::rng::{self, repeat_seed, Stream};
use crate::robot::{forward_keypoints, oracle_image_jacobian, step, JointConfiguration, ManipulatorModel};
use crate::servo::{jacobian_update, AdaptationGain, JacobianEstimate, VisuoMotorWindow};

const ORACLE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianCheckConfig {
    pub presets: Vec<Preset>,
    pub samples: usize,
    /// Peak joint speed of the sinusoidal excitation, rad/s. Zero is allowed
    /// and is reported as rank deficient.
    pub excitation_amplitude: f64,
    pub window: usize,
    pub gain: AdaptationGain,
    /// Start from the oracle instead of zero.
    pub warm_start: bool,
    /// Detector noise on the projected keypoints, px.
    pub noise_sigma: f64,
    /// Relative Frobenius error counted as converged.
    pub tolerance: f64,
    pub dt: f64,
}

impl Default for JacobianCheckConfig {
    fn default() -> Self {
        Self {
            presets: vec![Preset::PlanarTwoJoint, Preset::PlanarThreeJoint, Preset::SpatialFourJoint],
            samples: 200,
            excitation_amplitude: 0.05,
            window: 20,
            gain: AdaptationGain::Normalized { scale: 0.5, floor: 0.0 },
            warm_start: false,
            noise_sigma: 0.0,
            tolerance: 0.05,
            dt: 0.1,
        }
    }
}

impl JacobianCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.window == 0 {
            return Err(Error::Config("jacobian_check samples and window must be >= 1".into()));
        }
        if !(self.excitation_amplitude >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("jacobian_check amplitude and noise must be >= 0".into()));
        }
        if !(self.tolerance > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Config("jacobian_check tolerance and dt must be > 0".into()));
        }
        self.gain.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianTrace {
    pub preset: Preset,
    /// Relative Frobenius error after each sample.
    pub errors: Vec<f64>,
    /// First sample count at which the error fell below the tolerance.
    pub first_converged: Option<usize>,
    /// Rank of the final joint-velocity window.
    pub window_rank: usize,
    pub rank_deficient: bool,
}

fn features(model: &ManipulatorModel, camera: &PinholeCamera, q: &JointConfiguration) -> Result<DVector<f64>> {
    let pts = forward_keypoints(model, q)?;
    let mut out = DVector::zeros(2 * pts.len());
    for (i, p) in pts.iter().enumerate() {
        let px = camera.project(p)?;
        out[2 * i] = px.x;
        out[2 * i + 1] = px.y;
    }
    Ok(out)
}

/// Persistent excitation about the preset's home configuration: joint `j`
/// follows `A·sin(2π·0.5(j+1)·t + φ_j)` with random phases, so every window
/// of 2 s spans whole periods of all joints.
pub fn run_jacobian_check(
    cfg: &JacobianCheckConfig,
    preset: Preset,
    camera: &PinholeCamera,
    seed: u64,
) -> Result<JacobianTrace> {
    let model = preset.model();
    let joints = model.joint_count();
    let mut rng = rng::stream(seed, Stream::Scenario);
    let phases: Vec<f64> = (0..joints).map(|_| rng.random_range(0.0..TAU)).collect();
    let mut noise_rng = rng::stream(seed, Stream::Perception);
    let mut noisy = |v: DVector<f64>| -> DVector<f64> {
        if cfg.noise_sigma > 0.0 {
            v.map(|x| x + cfg.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal))
        } else {
            v
        }
    };

    let mut q = model.home_configuration();
    let oracle0 = oracle_image_jacobian(&model, camera, &q, ORACLE_EPS)?;
    let mut est = if cfg.warm_start {
        JacobianEstimate::warm(oracle0.clone(), cfg.gain)
    } else {
        JacobianEstimate::zeros(oracle0.nrows(), joints, cfg.gain)
    };
    let mut window = VisuoMotorWindow::new(cfg.window)?;
    let mut errors = Vec::with_capacity(cfg.samples);
    let mut p = noisy(features(&model, camera, &q)?);
    for k in 0..cfg.samples {
        let t = k as f64 * cfg.dt;
        let q_dot = DVector::from_fn(joints, |j, _| {
            cfg.excitation_amplitude * (TAU * 0.5 * (j + 1) as f64 * t + phases[j]).sin()
        });
        let next = step(&model, &q, &q_dot, cfg.dt)?.q;
        let applied = (&next.q - &q.q) / cfg.dt;
        let p_next = noisy(features(&model, camera, &next)?);
        window.push_sample(applied, (&p_next - &p) / cfg.dt)?;
        jacobian_update(&mut est, &window)?;
        q = next;
        p = p_next;
        let oracle = oracle_image_jacobian(&model, camera, &q, ORACLE_EPS)?;
        errors.push((&est.j_hat - &oracle).norm() / oracle.norm());
    }
    let stack = window
        .stacks()
        .map(|(qs, _)| qs)
        .unwrap_or_else(|| DMatrix::zeros(0, joints));
    let scale = stack.amax().max(1.0);
    let window_rank = if stack.nrows() == 0 { 0 } else { stack.rank(1e-9 * scale) };
    Ok(JacobianTrace {
        preset,
        first_converged: errors.iter().position(|e| *e < cfg.tolerance).map(|i| i + 1),
        errors,
        window_rank,
        rank_deficient: window_rank < joints,
    })
}

pub fn cmd_jacobian_check(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<JacobianTrace>> {
    let jc = &cfg.jacobian_check;
    let mut traces = Vec::new();
    for (i, &preset) in jc.presets.iter().enumerate() {
        let model = preset.model();
        let camera = cfg.camera_for(&model)?;
        traces.push(run_jacobian_check(jc, preset, &camera, repeat_seed(cfg.seed, i as u64))?);
    }

    let mut csv = String::from("preset,sample,relative_error\n");
    let mut text = String::from("Jacobian estimate vs finite-difference oracle\n");
    text.push_str(&format!(
        "{:<20} {:>8} {:>12} {:>12} {:>16} {:>6}\n",
        "Preset", "Samples", "Initial err", "Final err", "Below tolerance", "Rank"
    ));
    for tr in &traces {
        for (k, e) in tr.errors.iter().enumerate() {
            csv.push_str(&format!("{},{},{}\n", tr.preset.name(), k + 1, sig9(*e)));
        }
        text.push_str(&format!(
            "{:<20} {:>8} {:>12.4} {:>12.4} {:>16} {:>6}{}\n",
            tr.preset.name(),
            tr.errors.len(),
            tr.errors.first().copied().unwrap_or(f64::NAN),
            tr.errors.last().copied().unwrap_or(f64::NAN),
            tr.first_converged.map_or("never".to_string(), |s| format!("sample {s}")),
            tr.window_rank,
            if tr.rank_deficient { "  RANK DEFICIENT: excitation does not span all joints" } else { "" }
        ));
    }
    let mut manifest = Manifest::new("jacobian-check", cfg.sha256(), cfg.seed, traces.len());
    manifest.notes.extend(
        traces
            .iter()
            .filter(|t| t.rank_deficient)
            .map(|t| format!("{}: rank deficient window", t.preset.name())),
    );
    write_all(
        out,
        &[("jacobian_check.csv".into(), csv), ("jacobian_check.txt".into(), text)],
        manifest,
    )?;
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_joint_converges_and_zero_excitation_is_flagged() {
        let cfg = JacobianCheckConfig::default();
        let model = Preset::PlanarTwoJoint.model();
        let cam = PinholeCamera::default_for(&model);
        let tr = run_jacobian_check(&cfg, Preset::PlanarTwoJoint, &cam, 3).unwrap();
        assert!(*tr.errors.last().unwrap() < 0.05);
        assert!(!tr.rank_deficient);

        let still = JacobianCheckConfig { excitation_amplitude: 0.0, ..cfg.clone() };
        let tr = run_jacobian_check(&still, Preset::PlanarTwoJoint, &cam, 3).unwrap();
        assert!(tr.rank_deficient && tr.window_rank == 0);

        let warm = JacobianCheckConfig { warm_start: true, ..cfg };
        let tr = run_jacobian_check(&warm, Preset::PlanarTwoJoint, &cam, 3).unwrap();
        assert!(tr.errors.iter().all(|e| *e < 0.05));
    }
}
