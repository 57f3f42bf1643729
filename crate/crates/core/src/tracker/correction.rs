//! Per-frame correction of missing and outlying detections.

use super::{
    estimate_velocity, measurement_model, GatePolicy, KeypointFilter, MeasurementVector,
    NoiseConfig, TrackerState,
};
use crate::camera::Pixel;
use crate::error::{domain, Result};
use crate::perception::KeypointObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointStatus {
    Measured,
    /// Missing detection replaced by the prediction.
    Substituted,
    /// Detection rejected by the distance gate and replaced by the prediction.
    Gated,
}

impl KeypointStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            KeypointStatus::Measured => "measured",
            KeypointStatus::Substituted => "substituted",
            KeypointStatus::Gated => "gated",
        }
    }
}

/// Filter state of one keypoint plus what the correction step needs to
/// remember between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedKeypoint {
    pub state: TrackerState,
    /// Corrected position reported on the previous frame.
    pub last: Pixel,
    /// Consecutive frames without an accepted detection.
    pub unmeasured_frames: u32,
    /// Initialized without ever being seen.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedFrame {
    /// The position fed to each filter update: the detection when measured,
    /// the predicted position otherwise.
    pub positions: Vec<Pixel>,
    pub status: Vec<KeypointStatus>,
    /// `‖z − H·x̂‖` of each update, zero on the initialization frame.
    pub innovation_norms: Vec<f64>,
    pub fully_occluded: bool,
}

impl CorrectedFrame {
    pub fn count(&self, status: KeypointStatus) -> usize {
        self.status.iter().filter(|s| **s == status).count()
    }
}

/// Chooses one measurement per keypoint and applies exactly one update to
/// each filter. `tracks` must already be predicted to this frame.
pub fn correct_observations<F: KeypointFilter>(
    filter: &F,
    tracks: &mut [TrackedKeypoint],
    obs: &KeypointObservation,
    noise: &NoiseConfig,
    gate: &GatePolicy,
) -> Result<CorrectedFrame> {
    if obs.len() != tracks.len() {
        return Err(domain(format!(
            "observation has {} keypoints, tracker has {}",
            obs.len(),
            tracks.len()
        )));
    }
    let predicted: Vec<Pixel> = tracks.iter().map(|t| t.state.position()).collect();
    let status: Vec<KeypointStatus> = tracks
        .iter()
        .zip(&obs.keypoints)
        .zip(&predicted)
        .map(|((track, det), pred)| match det {
            None => KeypointStatus::Substituted,
            Some(p) => {
                let reacquire = gate
                    .reacquire_after
                    .is_some_and(|n| track.unmeasured_frames >= n);
                if (p - pred).norm() > gate.distance_threshold && !reacquire {
                    KeypointStatus::Gated
                } else {
                    KeypointStatus::Measured
                }
            }
        })
        .collect();

    let measured: Vec<usize> = (0..tracks.len())
        .filter(|&i| status[i] == KeypointStatus::Measured)
        .collect();
    let borrowed_velocity = |i: usize| -> (f64, f64) {
        measured
            .iter()
            .min_by(|&&a, &&b| {
                let da = (predicted[a] - predicted[i]).norm_squared();
                let db = (predicted[b] - predicted[i]).norm_squared();
                da.total_cmp(&db)
            })
            .map(|&j| tracks[j].state.velocity())
            .unwrap_or((0.0, 0.0))
    };

    let measurements: Vec<MeasurementVector> = (0..tracks.len())
        .map(|i| -> Result<MeasurementVector> {
            Ok(match (status[i], obs.keypoints[i]) {
                (KeypointStatus::Measured, Some(p)) => {
                    let (vx, vy) = estimate_velocity(tracks[i].last, p, noise.dt)?;
                    MeasurementVector::from([p.x, p.y, vx, vy])
                }
                _ => {
                    let (vx, vy) = borrowed_velocity(i);
                    MeasurementVector::from([predicted[i].x, predicted[i].y, vx, vy])
                }
            })
        })
        .collect::<Result<_>>()?;

    let mut positions = Vec::with_capacity(tracks.len());
    let mut innovation_norms = Vec::with_capacity(tracks.len());
    for ((track, z), st) in tracks.iter_mut().zip(&measurements).zip(&status) {
        innovation_norms.push((z - measurement_model(&track.state.mean)).norm());
        track.state = filter.update(&track.state, z, noise)?;
        track.last = Pixel::new(z[0], z[1]);
        if *st == KeypointStatus::Measured {
            track.unmeasured_frames = 0;
            track.low_confidence = false;
        } else {
            track.unmeasured_frames = track.unmeasured_frames.saturating_add(1);
        }
        positions.push(track.last);
    }

    Ok(CorrectedFrame {
        positions,
        status,
        innovation_norms,
        fully_occluded: obs.visible_count() == 0,
    })
}

/// A bank of per-keypoint filters run frame by frame.
#[derive(Debug, Clone)]
pub struct KeypointTracker<F> {
    pub filter: F,
    pub noise: NoiseConfig,
    pub gate: GatePolicy,
    tracks: Option<Vec<TrackedKeypoint>>,
}

impl<F: KeypointFilter> KeypointTracker<F> {
    pub fn new(filter: F, noise: NoiseConfig, gate: GatePolicy) -> Self {
        Self {
            filter,
            noise,
            gate,
            tracks: None,
        }
    }

    pub fn tracks(&self) -> Option<&[TrackedKeypoint]> {
        self.tracks.as_deref()
    }

    /// First frame: visible keypoints start at their detection; missing ones
    /// start at the mean of the visible detections, or at `fallback` when
    /// nothing is visible, and are flagged low-confidence.
    fn initialize(&mut self, obs: &KeypointObservation, fallback: Pixel) -> CorrectedFrame {
        let visible: Vec<Pixel> = obs.keypoints.iter().flatten().copied().collect();
        let seed = if visible.is_empty() {
            fallback
        } else {
            let sum = visible.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords);
            Pixel::from(sum / visible.len() as f64)
        };
        let tracks: Vec<TrackedKeypoint> = obs
            .keypoints
            .iter()
            .map(|k| {
                let p = k.unwrap_or(seed);
                TrackedKeypoint {
                    state: TrackerState::at_rest(p, &self.noise),
                    last: p,
                    unmeasured_frames: u32::from(k.is_none()),
                    low_confidence: k.is_none(),
                }
            })
            .collect();
        let frame = CorrectedFrame {
            positions: tracks.iter().map(|t| t.last).collect(),
            status: obs
                .keypoints
                .iter()
                .map(|k| {
                    if k.is_some() {
                        KeypointStatus::Measured
                    } else {
                        KeypointStatus::Substituted
                    }
                })
                .collect(),
            innovation_norms: vec![0.0; tracks.len()],
            fully_occluded: visible.is_empty(),
        };
        self.tracks = Some(tracks);
        frame
    }

    /// Predicts every filter one period ahead and corrects with `obs`.
    pub fn process(&mut self, obs: &KeypointObservation, fallback: Pixel) -> Result<CorrectedFrame> {
        let Some(tracks) = self.tracks.as_mut() else {
            return Ok(self.initialize(obs, fallback));
        };
        for t in tracks.iter_mut() {
            t.state = self.filter.predict(&t.state, &self.noise)?;
        }
        correct_observations(&self.filter, tracks, obs, &self.noise, &self.gate)
    }
}
