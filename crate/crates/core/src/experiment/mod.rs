//! Experiment harness behind the `kpservo` binary: configuration, seeded
//! batch execution and file output for each evaluation family.

mod dataset;
mod jacobian_check;
mod output;
mod servo;
mod track_eval;

pub use dataset::{cmd_dataset_export, DatasetConfig, DatasetMode, DatasetSummary};
pub use jacobian_check::{cmd_jacobian_check, run_jacobian_check, JacobianCheckConfig, JacobianTrace};
pub use output::{trajectory_csv, Manifest};
pub use servo::{build_servo_scenario, cmd_servo, run_servo_batch, PathOccluder, SamplingConfig, ServoBatch};
pub use track_eval::{cmd_track_eval, run_track_eval, TrackEvalConfig, TrackEvalReport, Variant, SCRIPTED_SCENARIOS};

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{CameraConfig, PinholeCamera};
use crate::error::{Error, Result};
use crate::metrics::TransientConfig;
use crate::perception::OcclusionScenario;
use crate::robot::ManipulatorModel;
use crate::servo::ServoConfig;
use crate::tracker::{GatePolicy, NoiseConfig, SigmaParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    PlanarTwoJoint,
    PlanarThreeJoint,
    SpatialFourJoint,
}

impl Preset {
    pub fn model(self) -> ManipulatorModel {
        match self {
            Preset::PlanarTwoJoint => ManipulatorModel::planar_two_joint(),
            Preset::PlanarThreeJoint => ManipulatorModel::planar_three_joint(),
            Preset::SpatialFourJoint => ManipulatorModel::spatial_four_joint(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::PlanarTwoJoint => "planar_two_joint",
            Preset::PlanarThreeJoint => "planar_three_joint",
            Preset::SpatialFourJoint => "spatial_four_joint",
        }
    }
}

/// Arm geometry: a preset, optionally replaced by an explicit model, with
/// an optional subset of its keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManipulatorSpec {
    pub preset: Preset,
    pub model: Option<ManipulatorModel>,
    /// Indices into the model's keypoint anchors to keep, in order.
    pub keypoint_subset: Option<Vec<usize>>,
}

impl Default for ManipulatorSpec {
    fn default() -> Self {
        Self {
            preset: Preset::PlanarTwoJoint,
            model: None,
            keypoint_subset: None,
        }
    }
}

impl ManipulatorSpec {
    pub fn build(&self) -> Result<ManipulatorModel> {
        let mut model = self.model.clone().unwrap_or_else(|| self.preset.model());
        if let Some(subset) = &self.keypoint_subset {
            let mut anchors = Vec::with_capacity(subset.len());
            for &i in subset {
                let a = model.keypoint_anchors.get(i).ok_or_else(|| {
                    Error::Config(format!("keypoint_subset index {i} out of range"))
                })?;
                anchors.push(*a);
            }
            model.keypoint_anchors = anchors;
        }
        model.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub noise: NoiseConfig,
    pub sigma: SigmaParams,
    pub gate: GatePolicy,
}

/// Full experiment description. Every field has a default, and unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub manipulator: ManipulatorSpec,
    pub camera: CameraConfig,
    /// Detector corruption for servo runs.
    pub scenario: OcclusionScenario,
    /// Occluder placed on the straight pixel path of one keypoint.
    pub path_occluder: Option<PathOccluder>,
    pub tracker: TrackerConfig,
    pub servo: ServoConfig,
    pub metrics: TransientConfig,
    pub sampling: SamplingConfig,
    pub seed: u64,
    pub repeats: usize,
    pub track_eval: TrackEvalConfig,
    pub jacobian_check: JacobianCheckConfig,
    pub dataset: DatasetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manipulator: ManipulatorSpec::default(),
            camera: CameraConfig::default(),
            scenario: OcclusionScenario::default(),
            path_occluder: None,
            tracker: TrackerConfig::default(),
            servo: ServoConfig::default(),
            metrics: TransientConfig::default(),
            sampling: SamplingConfig::default(),
            seed: 42,
            repeats: 1,
            track_eval: TrackEvalConfig::default(),
            jacobian_check: JacobianCheckConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every invariant; all failures are [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let model = self.manipulator.build()?;
        self.camera.build(&model).map_err(config_err)?;
        self.scenario.validate().map_err(config_err)?;
        self.tracker.noise.validate().map_err(config_err)?;
        self.tracker.sigma.validate().map_err(config_err)?;
        self.tracker.gate.validate().map_err(config_err)?;
        self.servo.validate().map_err(config_err)?;
        if (self.servo.dt - self.tracker.noise.dt).abs() > 1e-12 {
            return Err(Error::Config("servo.dt and tracker.noise.dt must match".into()));
        }
        self.metrics.validate().map_err(config_err)?;
        if let Some(ks) = &self.metrics.keypoints {
            if ks.iter().any(|&k| k >= model.keypoint_count()) {
                return Err(Error::Config("metrics.keypoints index out of range".into()));
            }
        }
        self.sampling.validate(&model)?;
        if let Some(p) = &self.path_occluder {
            p.validate(&model)?;
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        self.track_eval.validate()?;
        self.jacobian_check.validate()?;
        self.dataset.validate()?;
        Ok(())
    }

    pub fn model(&self) -> Result<ManipulatorModel> {
        self.manipulator.build()
    }

    pub fn camera_for(&self, model: &ManipulatorModel) -> Result<PinholeCamera> {
        self.camera.build(model)
    }

    /// SHA-256 of the canonical JSON form, defaults included.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.sha256(), cfg.sha256());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"sede": 1}"#), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"servo": {"lambda": 1}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"servo": {"window": 0}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"manipulator": {"keypoint_subset": [0]}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(ExperimentConfig::from_json(r#"{"repeats": 0}"#), Err(Error::Config(_))));
    }

    #[test]
    fn keypoint_subset_selects_anchors() {
        let spec = ManipulatorSpec {
            preset: Preset::SpatialFourJoint,
            model: None,
            keypoint_subset: Some(vec![1, 3, 4, 5, 6, 7]),
        };
        let m = spec.build().unwrap();
        assert_eq!(m.keypoint_count(), 6);
        assert_eq!(m.keypoint_anchors[0], Preset::SpatialFourJoint.model().keypoint_anchors[1]);
    }
}
