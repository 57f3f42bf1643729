use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::{trajectory_csv, write_all, Manifest};
use super::ExperimentConfig;
use crate::camera::{PinholeCamera, Pixel};
use crate::error::{Error, Result};
use crate::metrics::{sig9, summary_table, TrajectoryRecord, TransientMetrics, TransientReport};
use crate::perception::Occluder;
use crate::rng::{self, repeat_seed, Stream};
use crate::robot::{forward_keypoints, JointConfiguration, ManipulatorModel};
use crate::servo::{feature_error, run_servo_loop, FeatureVector, ServoScenario};

/// How start and goal configurations are chosen for each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Fixed start configuration (active joints); sampled when absent.
    pub start: Option<Vec<f64>>,
    /// Fixed goal configuration (active joints); sampled when absent.
    pub goal: Option<Vec<f64>>,
    pub min_error_px: f64,
    pub max_error_px: f64,
    /// Keypoints must stay this far inside the image along the joint-space
    /// segment from start to goal.
    pub image_margin_px: f64,
    /// Sampled angles keep this distance from the joint limits.
    pub joint_margin_rad: f64,
    /// Largest per-joint offset of a sampled start from the goal.
    pub max_offset_rad: f64,
    pub max_attempts: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            start: None,
            goal: None,
            min_error_px: 50.0,
            max_error_px: 150.0,
            image_margin_px: 20.0,
            joint_margin_rad: 0.15,
            max_offset_rad: 0.6,
            max_attempts: 100_000,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self, model: &ManipulatorModel) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.min_error_px >= 0.0 && self.min_error_px <= self.max_error_px) {
            return bad("sampling needs 0 <= min_error_px <= max_error_px");
        }
        if !(self.image_margin_px >= 0.0 && self.joint_margin_rad >= 0.0 && self.max_offset_rad > 0.0) {
            return bad("sampling margins must be >= 0 and max_offset_rad > 0");
        }
        if self.max_attempts == 0 {
            return bad("sampling max_attempts must be >= 1");
        }
        for (name, q) in [("start", &self.start), ("goal", &self.goal)] {
            if let Some(q) = q {
                if q.len() != model.joint_count() {
                    return Err(Error::Config(format!(
                        "sampling.{name} has {} angles for {} joints",
                        q.len(),
                        model.joint_count()
                    )));
                }
                model
                    .check_limits(&JointConfiguration::from_slice(q))
                    .map_err(|e| Error::Config(format!("sampling.{name}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Occluder centered on the midpoint of one keypoint's start and goal pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathOccluder {
    /// Keypoint index; the last keypoint (usually the tip) when absent.
    #[serde(default)]
    pub keypoint: Option<usize>,
    pub half_size: [f64; 2],
}

impl PathOccluder {
    pub fn validate(&self, model: &ManipulatorModel) -> Result<()> {
        if self.keypoint.is_some_and(|k| k >= model.keypoint_count()) {
            return Err(Error::Config("path_occluder.keypoint out of range".into()));
        }
        if !(self.half_size[0] >= 0.0 && self.half_size[1] >= 0.0) {
            return Err(Error::Config("path_occluder.half_size must be >= 0".into()));
        }
        Ok(())
    }
}

fn pixels(model: &ManipulatorModel, camera: &PinholeCamera, q: &JointConfiguration) -> Option<Vec<Pixel>> {
    forward_keypoints(model, q)
        .ok()?
        .iter()
        .map(|p| camera.project(p).ok())
        .collect()
}

fn inside(camera: &PinholeCamera, px: &[Pixel], margin: f64) -> bool {
    let (w, h) = (f64::from(camera.image_size.0), f64::from(camera.image_size.1));
    px.iter()
        .all(|p| p.x >= margin && p.y >= margin && p.x <= w - margin && p.y <= h - margin)
}

fn sample_pair<R: Rng>(
    model: &ManipulatorModel,
    camera: &PinholeCamera,
    s: &SamplingConfig,
    rng: &mut R,
) -> Result<(JointConfiguration, JointConfiguration)> {
    let limits = model.active_limits();
    let m = s.joint_margin_rad;
    let within = |q: &[f64]| q.iter().zip(&limits).all(|(v, (lo, hi))| *v >= lo + m && *v <= hi - m);
    for _ in 0..s.max_attempts {
        let goal: Vec<f64> = match &s.goal {
            Some(g) => g.clone(),
            None => limits.iter().map(|(lo, hi)| rng.random_range(lo + m..=hi - m)).collect(),
        };
        let start: Vec<f64> = match &s.start {
            Some(q) => q.clone(),
            None => goal
                .iter()
                .map(|g| g + rng.random_range(-s.max_offset_rad..=s.max_offset_rad))
                .collect(),
        };
        if (s.goal.is_none() && !within(&goal)) || (s.start.is_none() && !within(&start)) {
            continue;
        }
        let path_ok = [0.0, 0.25, 0.5, 0.75, 1.0].iter().all(|&f| {
            let q: Vec<f64> = start.iter().zip(&goal).map(|(a, b)| a + (b - a) * f).collect();
            pixels(model, camera, &JointConfiguration::from_slice(&q))
                .is_some_and(|px| inside(camera, &px, s.image_margin_px))
        });
        if !path_ok {
            continue;
        }
        let (q0, qg) = (JointConfiguration::from_slice(&start), JointConfiguration::from_slice(&goal));
        if s.start.is_none() || s.goal.is_none() {
            let e0 = feature_error(
                &FeatureVector::from_pixels(&pixels(model, camera, &q0).unwrap_or_default()),
                &FeatureVector::from_pixels(&pixels(model, camera, &qg).unwrap_or_default()),
            )?
            .norm();
            if e0 < s.min_error_px || e0 > s.max_error_px {
                continue;
            }
        }
        return Ok((q0, qg));
    }
    Err(Error::Domain(format!(
        "no start/goal pair satisfied the sampling constraints in {} attempts",
        s.max_attempts
    )))
}

/// The scenario of the `index`-th repeat.
pub fn build_servo_scenario(cfg: &ExperimentConfig, index: usize) -> Result<ServoScenario> {
    let model = cfg.model()?;
    let camera = cfg.camera_for(&model)?;
    let seed = repeat_seed(cfg.seed, index as u64);
    let mut rng = rng::stream(seed, Stream::Scenario);
    let (start, goal) = sample_pair(&model, &camera, &cfg.sampling, &mut rng)?;
    let mut perception = cfg.scenario.clone();
    if let Some(po) = &cfg.path_occluder {
        let k = po.keypoint.unwrap_or(model.keypoint_count() - 1);
        let a = pixels(&model, &camera, &start).ok_or_else(|| Error::Domain("start not visible".into()))?[k];
        let b = pixels(&model, &camera, &goal).ok_or_else(|| Error::Domain("goal not visible".into()))?[k];
        let mid = Pixel::from((a.coords + b.coords) / 2.0);
        perception.occluders.push(Occluder::centered(mid, po.half_size[0], po.half_size[1]));
    }
    Ok(ServoScenario {
        id: format!("run_{index:03}"),
        seed,
        model,
        camera,
        perception,
        noise: cfg.tracker.noise.clone(),
        sigma: cfg.tracker.sigma,
        gate: cfg.tracker.gate,
        servo: cfg.servo.clone(),
        start,
        goal,
    })
}

#[derive(Debug, Clone)]
pub struct ServoBatch {
    pub records: Vec<TrajectoryRecord>,
    pub report: TransientReport,
}

/// Runs every repeat, in parallel, and returns them in index order.
pub fn run_servo_batch(cfg: &ExperimentConfig) -> Result<ServoBatch> {
    let records = (0..cfg.repeats)
        .into_par_iter()
        .map(|i| run_servo_loop(&build_servo_scenario(cfg, i)?))
        .collect::<Result<Vec<_>>>()?;
    let report = TransientReport::from_records(&records, &cfg.metrics);
    Ok(ServoBatch { records, report })
}

fn opt(v: Option<f64>) -> String {
    v.map(sig9).unwrap_or_default()
}

pub fn cmd_servo(cfg: &ExperimentConfig, out: &Path) -> Result<ServoBatch> {
    let batch = run_servo_batch(cfg)?;
    let mut files = Vec::new();
    let mut runs = String::from("run,seed,outcome,ticks,rise_time_s,settling_time_s,overshoot_pct,clamped_ticks\n");
    for (rec, m) in batch.records.iter().zip(&batch.report.runs) {
        files.push((format!("runs/{}.csv", rec.scenario_id), trajectory_csv(rec)));
        let TransientMetrics { rise_time, settling_time, overshoot } = *m;
        runs.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rec.scenario_id,
            rec.seed,
            rec.outcome.label(),
            rec.rows.len(),
            opt(rise_time),
            opt(settling_time),
            sig9(overshoot),
            rec.clamped_ticks
        ));
    }
    let (text, csv) = summary_table(&[("servo".to_string(), batch.report.clone())]);
    files.push(("runs.csv".into(), runs));
    files.push(("summary.txt".into(), text));
    files.push(("summary.csv".into(), csv));
    let mut manifest = Manifest::new("servo", cfg.sha256(), cfg.seed, cfg.repeats);
    for rec in &batch.records {
        if let crate::metrics::RunOutcome::AdaptationDivergence(m) | crate::metrics::RunOutcome::FilterDivergence(m) =
            &rec.outcome
        {
            manifest.notes.push(format!("{}: {}", rec.scenario_id, m));
        }
    }
    write_all(out, &files, manifest)?;
    Ok(batch)
}
