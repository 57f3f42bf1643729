//! Workspace sweep producing keypoint annotation documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{write_all, Manifest};
use super::ExperimentConfig;
use crate::camera::{Pixel, Projection};
use crate::error::{Error, Result};
use crate::perception::{export_annotations, observe_projections, BoxSpec, OcclusionScenario};
use crate::rng::{self, Stream};
use crate::robot::{keypoint_frames, traversal_velocity, JointConfiguration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// Fixed square boxes around each keypoint.
    Planar,
    /// Boxes around the projected corners of a square marker on the link.
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Captured configurations per joint pass.
    pub res: u32,
    pub v_max: f64,
    pub mode: DatasetMode,
    pub bb_size: f64,
    /// Marker side length in meters for spatial boxes.
    pub marker_size: f64,
    /// Detector noise added to the saved centers, px.
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            res: 100,
            v_max: 2.0,
            mode: DatasetMode::Planar,
            bb_size: 24.0,
            marker_size: 0.04,
            noise_sigma: 0.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.res == 0 || !(self.v_max > 0.0) {
            return Err(Error::Config("dataset res must be >= 1 and v_max > 0".into()));
        }
        if !(self.bb_size > 0.0) || !(self.marker_size > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("dataset bb_size and marker_size must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    /// `(joint, documents, traversal speed in rad/s)` per pass.
    pub passes: Vec<(usize, usize, f64)>,
    pub files: Vec<String>,
}

/// Sweeps one active joint at a time from its lower limit at the traversal
/// speed, the others held at home, writing one document per captured frame.
pub fn cmd_dataset_export(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetSummary> {
    let ds = &cfg.dataset;
    let model = cfg.model()?;
    let camera = cfg.camera_for(&model)?;
    let dt = cfg.servo.dt;
    let channel = OcclusionScenario {
        noise_sigma: ds.noise_sigma,
        ..OcclusionScenario::clean()
    };
    let mut rng = rng::stream(cfg.seed, Stream::Perception);
    let home = model.home_configuration();
    let limits = model.active_limits();
    let mut files = Vec::new();
    let mut passes = Vec::new();
    let mut frame = 0u64;

    for (j, &(lo, hi)) in limits.iter().enumerate() {
        let speed = traversal_velocity(hi - lo, ds.res, dt, ds.v_max)?;
        let mut last_known: Vec<Option<Pixel>> = vec![None; model.keypoint_count()];
        for i in 0..ds.res {
            let mut q = home.q.clone();
            q[j] = (lo + speed * dt * f64::from(i)).min(hi);
            let q = JointConfiguration::new(q);
            let kf = keypoint_frames(&model, &q)?;
            let points: Vec<_> = kf.iter().map(|f| f.position).collect();
            let projections: Vec<Projection> = camera.project_keypoints(&points);
            let obs = observe_projections(&projections, &channel, frame, &mut rng);
            frame += 1;
            let spec = match ds.mode {
                DatasetMode::Planar => BoxSpec::Planar { bb_size: ds.bb_size },
                DatasetMode::Spatial => {
                    let h = ds.marker_size / 2.0;
                    let corners = kf
                        .iter()
                        .map(|f| {
                            let c = |a: f64, b: f64| {
                                camera
                                    .project(&(f.position + f.along * a + f.across * b))
                                    .unwrap_or_else(|_| Pixel::new(camera.cx, camera.cy))
                            };
                            [c(-h, -h), c(h, -h), c(h, h), c(-h, h)]
                        })
                        .collect();
                    BoxSpec::Spatial { corners }
                }
            };
            let doc = export_annotations(&obs, &spec, &last_known)?;
            for (l, k) in last_known.iter_mut().zip(&obs.keypoints) {
                if k.is_some() {
                    *l = *k;
                }
            }
            files.push((
                format!("dataset/joint_{j}/{i:04}.json"),
                serde_json::to_string(&doc)? + "\n",
            ));
        }
        passes.push((model.active_joints[j], ds.res as usize, speed));
    }

    let mut manifest = Manifest::new("dataset-export", cfg.sha256(), cfg.seed, 1);
    manifest.notes.extend(
        passes
            .iter()
            .map(|(j, n, v)| format!("joint {j}: {n} documents at {v:.6} rad/s")),
    );
    let names = files.iter().map(|(n, _)| n.clone()).collect();
    write_all(out, &files, manifest)?;
    Ok(DatasetSummary { passes, files: names })
}
