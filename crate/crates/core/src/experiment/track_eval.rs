//! Filter comparison on scripted, occlusion-rich trajectories.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{write_all, Manifest};
use super::ExperimentConfig;
use crate::camera::{PinholeCamera, Pixel, Projection};
use crate::error::{Error, Result};
use crate::metrics::{detection_accuracy, filter_eval, sig9, FilterEval};
use crate::perception::{observe_projections, KeypointObservation, Occluder, OcclusionScenario};
use crate::rng::{self, repeat_seed, Stream};
use crate::robot::{forward_keypoints, JointConfiguration, ManipulatorModel};
use crate::tracker::{GatePolicy, KeypointFilter, KeypointTracker, LinearKf, NoiseConfig, Ukf};

pub const SCRIPTED_SCENARIOS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackEvalConfig {
    pub frames: usize,
    pub noise_sigma: f64,
    pub outlier_prob: f64,
    pub dropout_prob_occluded: f64,
    /// With `false` the scripted occluders are left out.
    pub occluders: bool,
    pub thresholds: Vec<f64>,
}

impl Default for TrackEvalConfig {
    fn default() -> Self {
        Self {
            frames: 200,
            noise_sigma: 1.0,
            outlier_prob: 0.05,
            dropout_prob_occluded: 0.9,
            occluders: true,
            thresholds: vec![5.0, 10.0],
        }
    }
}

impl TrackEvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("track_eval.frames must be >= 2".into()));
        }
        let probs = [self.outlier_prob, self.dropout_prob_occluded];
        if !(self.noise_sigma >= 0.0) || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("track_eval noise must be >= 0 and probabilities in [0, 1]".into()));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("track_eval.thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Detections as they come, missing keypoints held at their last sighting.
    Raw,
    Kf,
    Ukf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Raw, Variant::Kf, Variant::Ukf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Kf => "kf",
            Variant::Ukf => "ukf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub scenario: usize,
    pub variant: Variant,
    pub inpainting: bool,
    pub eval: FilterEval,
    /// `(threshold, percent within)` in the configured threshold order.
    pub accuracy: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEvalReport {
    pub results: Vec<VariantResult>,
}

impl TrackEvalReport {
    pub fn get(&self, scenario: usize, variant: Variant, inpainting: bool) -> &VariantResult {
        self.results
            .iter()
            .find(|r| r.scenario == scenario && r.variant == variant && r.inpainting == inpainting)
            .expect("every combination is evaluated")
    }

    /// Mean of each filter metric over the scripted scenarios.
    pub fn averaged(&self, variant: Variant, inpainting: bool) -> FilterEval {
        let rs: Vec<&VariantResult> = self
            .results
            .iter()
            .filter(|r| r.variant == variant && r.inpainting == inpainting)
            .collect();
        let n = rs.len() as f64;
        FilterEval {
            mean_error: rs.iter().map(|r| r.eval.mean_error).sum::<f64>() / n,
            rmse: rs.iter().map(|r| r.eval.rmse).sum::<f64>() / n,
            failure_rate: rs.iter().map(|r| r.eval.failure_rate).sum::<f64>() / n,
        }
    }

    pub fn accuracy_at(&self, scenario: usize, variant: Variant, inpainting: bool, threshold: f64) -> Option<f64> {
        self.get(scenario, variant, inpainting)
            .accuracy
            .iter()
            .find(|(t, _)| *t == threshold)
            .map(|(_, a)| *a)
    }
}

/// Joint trajectory of scripted scenario `k`: sinusoids about the home
/// configuration with per-scenario amplitudes, rates and phases.
fn scripted_configuration(model: &ManipulatorModel, k: usize, t: f64) -> JointConfiguration {
    let home = model.home_configuration();
    let limits = model.active_limits();
    let q = home.q.iter().enumerate().map(|(j, &h)| {
        let amp = 0.22 + 0.06 * ((k + j) % 3) as f64;
        let freq = 0.06 + 0.025 * k as f64 + 0.02 * j as f64;
        let phase = 0.9 * k as f64 + 1.7 * j as f64;
        let (lo, hi) = limits[j];
        (h + amp * (TAU * freq * t + phase).sin()).clamp(lo, hi)
    });
    JointConfiguration::from_slice(&q.collect::<Vec<f64>>())
}

fn centroid(points: impl Iterator<Item = Pixel>) -> Pixel {
    let (sum, n) = points.fold((nalgebra::Vector2::zeros(), 0usize), |(s, n), p| (s + p.coords, n + 1));
    Pixel::from(sum / n.max(1) as f64)
}

/// Occluders of scripted scenario `k`, placed from the keypoint paths.
fn scripted_occluders(k: usize, paths: &[Vec<Pixel>], camera: &PinholeCamera, frames: usize) -> Vec<Occluder> {
    let kp = paths.len();
    let tip = centroid(paths[kp - 1].iter().copied());
    let first = centroid(paths[0].iter().copied());
    let all = centroid(paths.iter().flatten().copied());
    let (xs, _): (Vec<f64>, Vec<f64>) = paths[kp - 1].iter().map(|p| (p.x, p.y)).unzip();
    let (x_min, x_max) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let f = frames as f64;
    match k {
        0 => vec![Occluder::centered(tip, 40.0, 40.0)],
        1 => {
            let mut o = Occluder::centered(Pixel::new(x_min - 30.0, tip.y), 30.0, 60.0);
            o.velocity = [(x_max - x_min + 60.0) / f, 0.0];
            vec![o]
        }
        2 => vec![Occluder::centered(first, 30.0, 30.0), Occluder::centered(tip, 30.0, 30.0)],
        3 => vec![Occluder::centered(all, 70.0, 70.0)],
        _ => {
            let w = f64::from(camera.image_size.0);
            let h = f64::from(camera.image_size.1);
            let mut o = Occluder::new([w - 40.0, 0.0], [w, h]);
            o.velocity = [-(w - 40.0) / f, 0.0];
            vec![o]
        }
    }
}

fn run_filter<F: KeypointFilter>(
    filter: F,
    noise: &NoiseConfig,
    gate: GatePolicy,
    stream: &[KeypointObservation],
    fallback: Pixel,
) -> Result<Vec<Vec<Pixel>>> {
    let mut tracker = KeypointTracker::new(filter, noise.clone(), gate);
    stream
        .iter()
        .map(|obs| tracker.process(obs, fallback).map(|f| f.positions))
        .collect()
}

fn hold_last(stream: &[KeypointObservation], fallback: Pixel) -> Vec<Vec<Pixel>> {
    let mut last: Vec<Option<Pixel>> = vec![None; stream.first().map_or(0, |o| o.len())];
    stream
        .iter()
        .map(|obs| {
            for (l, k) in last.iter_mut().zip(&obs.keypoints) {
                if k.is_some() {
                    *l = *k;
                }
            }
            last.iter().map(|l| l.unwrap_or(fallback)).collect()
        })
        .collect()
}

/// Correction results for every scripted scenario, variant and inpainting
/// setting. Both inpainting settings of a scenario see the same seed.
pub fn run_track_eval(cfg: &ExperimentConfig) -> Result<TrackEvalReport> {
    let te = &cfg.track_eval;
    let model = cfg.model()?;
    let camera = cfg.camera_for(&model)?;
    let dt = cfg.tracker.noise.dt;
    let fallback = Pixel::new(camera.cx, camera.cy);
    let mut results = Vec::new();

    for k in 0..SCRIPTED_SCENARIOS {
        let projections: Vec<Vec<Projection>> = (0..te.frames)
            .map(|i| {
                let q = scripted_configuration(&model, k, i as f64 * dt);
                Ok(camera.project_keypoints(&forward_keypoints(&model, &q)?))
            })
            .collect::<Result<_>>()?;
        let paths: Vec<Vec<Pixel>> = (0..model.keypoint_count())
            .map(|kp| projections.iter().filter_map(|f| f[kp].pixel).collect())
            .collect();

        let seed = repeat_seed(cfg.seed, k as u64);
        let reference_channel = OcclusionScenario {
            noise_sigma: te.noise_sigma,
            ..OcclusionScenario::clean()
        };
        let mut ref_rng = rng::stream(seed, Stream::Reference);
        let reference: Vec<KeypointObservation> = projections
            .iter()
            .enumerate()
            .map(|(i, p)| observe_projections(p, &reference_channel, i as u64, &mut ref_rng))
            .collect();

        for inpainting in [false, true] {
            let channel = OcclusionScenario {
                occluders: if te.occluders { scripted_occluders(k, &paths, &camera, te.frames) } else { Vec::new() },
                noise_sigma: te.noise_sigma,
                dropout_prob_occluded: te.dropout_prob_occluded,
                outlier_prob: te.outlier_prob,
                inpainting_on: inpainting,
                ..OcclusionScenario::default()
            };
            let mut rng = rng::stream(seed, Stream::Perception);
            let stream: Vec<KeypointObservation> = projections
                .iter()
                .enumerate()
                .map(|(i, p)| observe_projections(p, &channel, i as u64, &mut rng))
                .collect();

            for variant in Variant::ALL {
                let noise = &cfg.tracker.noise;
                let gate = cfg.tracker.gate;
                let estimates = match variant {
                    Variant::Raw => hold_last(&stream, fallback),
                    Variant::Kf => run_filter(LinearKf, noise, gate, &stream, fallback)?,
                    Variant::Ukf => run_filter(Ukf { params: cfg.tracker.sigma }, noise, gate, &stream, fallback)?,
                };
                let (mut pred, mut gt) = (Vec::new(), Vec::new());
                for (est, reference) in estimates.iter().zip(&reference) {
                    for (p, r) in est.iter().zip(&reference.keypoints) {
                        if let Some(r) = r {
                            pred.push(*p);
                            gt.push(*r);
                        }
                    }
                }
                results.push(VariantResult {
                    scenario: k,
                    variant,
                    inpainting,
                    eval: filter_eval(&pred, &gt)?,
                    accuracy: detection_accuracy(&pred, &gt, &te.thresholds)?.within,
                });
            }
        }
    }
    Ok(TrackEvalReport { results })
}

fn render(report: &TrackEvalReport, thresholds: &[f64]) -> (String, String) {
    let mut text = String::from("Filter evaluation averaged over the scripted scenarios\n");
    text.push_str(&format!(
        "{:<8} {:<10} {:>15} {:>10} {:>17}\n",
        "Filter", "Inpainting", "Mean Error (px)", "RMSE (px)", "Failure Rate (%)"
    ));
    for inpainting in [false, true] {
        for v in Variant::ALL {
            let a = report.averaged(v, inpainting);
            text.push_str(&format!(
                "{:<8} {:<10} {:>15.3} {:>10.3} {:>17.2}\n",
                v.name(),
                if inpainting { "on" } else { "off" },
                a.mean_error,
                a.rmse,
                a.failure_rate
            ));
        }
    }
    text.push_str("\nKeypoint accuracy per scenario (inpainting off)\n");
    text.push_str(&format!("{:<9}", "Scenario"));
    for v in Variant::ALL {
        for t in thresholds {
            text.push_str(&format!(" {:>12}", format!("{}@{}px", v.name(), t)));
        }
    }
    text.push('\n');
    for k in 0..SCRIPTED_SCENARIOS {
        text.push_str(&format!("{k:<9}"));
        for v in Variant::ALL {
            for &t in thresholds {
                let a = report.accuracy_at(k, v, false, t).unwrap_or(f64::NAN);
                text.push_str(&format!(" {a:>12.2}"));
            }
        }
        text.push('\n');
    }

    let mut csv = String::from("scenario,variant,inpainting,mean_error_px,rmse_px,failure_rate_pct");
    for t in thresholds {
        csv.push_str(&format!(",accuracy_{}px_pct", sig9(*t)));
    }
    csv.push('\n');
    for r in &report.results {
        csv.push_str(&format!(
            "{},{},{},{},{},{}",
            r.scenario,
            r.variant.name(),
            r.inpainting,
            sig9(r.eval.mean_error),
            sig9(r.eval.rmse),
            sig9(r.eval.failure_rate)
        ));
        for (_, a) in &r.accuracy {
            csv.push_str(&format!(",{}", sig9(*a)));
        }
        csv.push('\n');
    }
    (text, csv)
}

pub fn cmd_track_eval(cfg: &ExperimentConfig, out: &Path) -> Result<TrackEvalReport> {
    let report = run_track_eval(cfg)?;
    let (text, csv) = render(&report, &cfg.track_eval.thresholds);
    let manifest = Manifest::new("track-eval", cfg.sha256(), cfg.seed, SCRIPTED_SCENARIOS);
    write_all(
        out,
        &[("track_eval.txt".into(), text), ("track_eval.csv".into(), csv)],
        manifest,
    )?;
    Ok(report)
}
