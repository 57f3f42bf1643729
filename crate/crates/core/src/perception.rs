//! Simulated keypoint detector and annotation export.
//!
//! The detector corrupts ground-truth projections with occlusion dropouts,
//! isotropic pixel noise and gross outliers. Every keypoint consumes the same
//! six random draws per frame whatever happens to it, so two scenarios run
//! on one seed see identical noise and differ only where their settings do.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{Pixel, Projection};
use crate::error::{domain, Result};

/// Factor applied to dropout and outlier probabilities when inpainting is on.
pub const INPAINTING_FACTOR: f64 = 0.2;

/// Axis-aligned occluding rectangle in pixels, optionally moving at a
/// constant velocity (pixels per frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occluder {
    pub min: [f64; 2],
    pub max: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl Occluder {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self {
            min,
            max,
            velocity: [0.0, 0.0],
        }
    }

    pub fn centered(center: Pixel, half_width: f64, half_height: f64) -> Self {
        Self::new(
            [center.x - half_width, center.y - half_height],
            [center.x + half_width, center.y + half_height],
        )
    }

    pub fn contains(&self, p: &Pixel, frame: u64) -> bool {
        let dx = self.velocity[0] * frame as f64;
        let dy = self.velocity[1] * frame as f64;
        p.x >= self.min[0] + dx
            && p.x <= self.max[0] + dx
            && p.y >= self.min[1] + dy
            && p.y <= self.max[1] + dy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionScenario {
    pub occluders: Vec<Occluder>,
    pub noise_sigma: f64,
    pub dropout_prob_occluded: f64,
    pub outlier_prob: f64,
    /// Outlier displacement magnitude range `[min, max]` in pixels.
    pub outlier_offset: [f64; 2],
    pub inpainting_on: bool,
}

impl Default for OcclusionScenario {
    fn default() -> Self {
        Self {
            occluders: Vec::new(),
            noise_sigma: 1.0,
            dropout_prob_occluded: 0.9,
            outlier_prob: 0.0,
            outlier_offset: [50.0, 60.0],
            inpainting_on: false,
        }
    }
}

impl OcclusionScenario {
    /// Noise-free, occlusion-free channel.
    pub fn clean() -> Self {
        Self {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("dropout_prob_occluded", self.dropout_prob_occluded),
            ("outlier_prob", self.outlier_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(domain(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(domain("noise_sigma must be >= 0"));
        }
        let [lo, hi] = self.outlier_offset;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(domain("outlier_offset must satisfy 0 <= min <= max"));
        }
        for o in &self.occluders {
            if !(o.min[0] <= o.max[0] && o.min[1] <= o.max[1]) {
                return Err(domain("occluder min corner must not exceed max corner"));
            }
        }
        Ok(())
    }

    pub fn effective_dropout(&self) -> f64 {
        if self.inpainting_on {
            self.dropout_prob_occluded * INPAINTING_FACTOR
        } else {
            self.dropout_prob_occluded
        }
    }

    pub fn effective_outlier(&self) -> f64 {
        if self.inpainting_on {
            self.outlier_prob * INPAINTING_FACTOR
        } else {
            self.outlier_prob
        }
    }

    pub fn occluded(&self, p: &Pixel, frame: u64) -> bool {
        self.occluders.iter().any(|o| o.contains(p, frame))
    }
}

/// One detector frame: `None` marks a keypoint reported missing.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointObservation {
    pub frame_index: u64,
    pub keypoints: Vec<Option<Pixel>>,
}

impl KeypointObservation {
    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_some()).count()
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// Corrupts ground-truth pixels for one frame.
pub fn observe<R: Rng + ?Sized>(
    true_pixels: &[Pixel],
    scenario: &OcclusionScenario,
    frame: u64,
    rng: &mut R,
) -> KeypointObservation {
    let projections: Vec<Projection> = true_pixels
        .iter()
        .map(|&p| Projection {
            pixel: Some(p),
            in_frustum: true,
        })
        .collect();
    observe_projections(&projections, scenario, frame, rng)
}

/// Like [`observe`], but keypoints outside the camera frustum are always
/// reported missing.
pub fn observe_projections<R: Rng + ?Sized>(
    projections: &[Projection],
    scenario: &OcclusionScenario,
    frame: u64,
    rng: &mut R,
) -> KeypointObservation {
    let p_drop = scenario.effective_dropout();
    let p_out = scenario.effective_outlier();
    let [mag_lo, mag_hi] = scenario.outlier_offset;
    let keypoints = projections
        .iter()
        .map(|proj| {
            let drop_draw: f64 = rng.random();
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            let outlier_draw: f64 = rng.random();
            let mag_draw: f64 = rng.random();
            let angle_draw: f64 = rng.random();

            let truth = proj.pixel.filter(|_| proj.in_frustum)?;
            if scenario.occluded(&truth, frame) && drop_draw < p_drop {
                return None;
            }
            let mut px = truth + Vector2::new(nx, ny) * scenario.noise_sigma;
            if outlier_draw < p_out {
                let magnitude = mag_lo + (mag_hi - mag_lo) * mag_draw;
                let angle = std::f64::consts::TAU * angle_draw;
                px += Vector2::new(angle.cos(), angle.sin()) * magnitude;
            }
            Some(px)
        })
        .collect();
    KeypointObservation {
        frame_index: frame,
        keypoints,
    }
}

/// Annotation document with the `keypoints` / `bboxes` fields of a
/// keypoint-detector training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDocument {
    /// `[x, y, v]` per keypoint, `v` is 1 when visible and 0 otherwise.
    pub keypoints: Vec<[f64; 3]>,
    /// `[x_min, y_min, x_max, y_max]` per keypoint.
    pub bboxes: Vec<[f64; 4]>,
}

/// How bounding boxes are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum BoxSpec {
    /// Fixed square of side `bb_size` centered on each keypoint.
    Planar { bb_size: f64 },
    /// Tight axis-aligned box around each keypoint's four marker corners.
    Spatial { corners: Vec<[Pixel; 4]> },
}

/// Builds an annotation document. Missing keypoints are written with `v = 0`
/// at their last known position (`last_known`, or the origin if never seen).
pub fn export_annotations(
    observation: &KeypointObservation,
    spec: &BoxSpec,
    last_known: &[Option<Pixel>],
) -> Result<AnnotationDocument> {
    match spec {
        BoxSpec::Planar { bb_size } if !(*bb_size > 0.0 && bb_size.is_finite()) => {
            return Err(domain(format!("bb_size must be > 0, got {bb_size}")));
        }
        BoxSpec::Spatial { corners } if corners.len() != observation.len() => {
            return Err(domain(format!(
                "{} corner sets for {} keypoints",
                corners.len(),
                observation.len()
            )));
        }
        _ => {}
    }
    let mut keypoints = Vec::with_capacity(observation.len());
    let mut bboxes = Vec::with_capacity(observation.len());
    for (i, kp) in observation.keypoints.iter().enumerate() {
        let (p, v) = match kp {
            Some(p) => (*p, 1.0),
            None => (
                last_known.get(i).copied().flatten().unwrap_or(Pixel::origin()),
                0.0,
            ),
        };
        keypoints.push([p.x, p.y, v]);
        bboxes.push(match spec {
            BoxSpec::Planar { bb_size } => {
                let h = bb_size / 2.0;
                [p.x - h, p.y - h, p.x + h, p.y + h]
            }
            BoxSpec::Spatial { corners } => corner_box(&corners[i]),
        });
    }
    Ok(AnnotationDocument { keypoints, bboxes })
}

fn corner_box(corners: &[Pixel; 4]) -> [f64; 4] {
    corners.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |[x0, y0, x1, y1], c| [x0.min(c.x), y0.min(c.y), x1.max(c.x), y1.max(c.y)],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn truth() -> Vec<Pixel> {
        vec![Pixel::new(100.0, 120.0), Pixel::new(200.0, 220.0), Pixel::new(300.0, 320.0)]
    }

    #[test]
    fn identity_channel() {
        let obs = observe(&truth(), &OcclusionScenario::clean(), 0, &mut stream(1, Stream::Perception));
        assert_eq!(obs.keypoints, truth().into_iter().map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn forced_dropout_inside_occluder() {
        let sc = OcclusionScenario {
            occluders: vec![Occluder::new([190.0, 210.0], [210.0, 230.0])],
            dropout_prob_occluded: 1.0,
            ..OcclusionScenario::clean()
        };
        let obs = observe(&truth(), &sc, 0, &mut stream(1, Stream::Perception));
        assert!(obs.keypoints[0].is_some());
        assert!(obs.keypoints[1].is_none());
        assert!(obs.keypoints[2].is_some());
    }

    #[test]
    fn moving_occluder() {
        let o = Occluder {
            velocity: [10.0, 0.0],
            ..Occluder::new([0.0, 0.0], [10.0, 10.0])
        };
        assert!(o.contains(&Pixel::new(5.0, 5.0), 0));
        assert!(!o.contains(&Pixel::new(5.0, 5.0), 2));
        assert!(o.contains(&Pixel::new(25.0, 5.0), 2));
    }

    #[test]
    fn forced_outliers() {
        let sc = OcclusionScenario {
            outlier_prob: 1.0,
            outlier_offset: [50.0, 60.0],
            ..OcclusionScenario::clean()
        };
        let mut rng = stream(3, Stream::Perception);
        for f in 0..50 {
            let obs = observe(&truth(), &sc, f, &mut rng);
            for (o, t) in obs.keypoints.iter().zip(truth()) {
                let d = (o.unwrap() - t).norm();
                assert!((50.0 - 1e-9..=60.0 + 1e-9).contains(&d), "displacement {d}");
            }
        }
    }

    #[test]
    fn inpainting_scales_rates() {
        let sc = OcclusionScenario {
            dropout_prob_occluded: 0.5,
            outlier_prob: 0.25,
            inpainting_on: true,
            ..OcclusionScenario::default()
        };
        assert!((sc.effective_dropout() - 0.1).abs() < 1e-15);
        assert!((sc.effective_outlier() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn out_of_frustum_is_missing() {
        let projs = [
            Projection { pixel: Some(Pixel::new(-5.0, 10.0)), in_frustum: false },
            Projection { pixel: None, in_frustum: false },
        ];
        let obs = observe_projections(&projs, &OcclusionScenario::clean(), 0, &mut stream(1, Stream::Perception));
        assert_eq!(obs.visible_count(), 0);
    }

    #[test]
    fn seeded_observe_is_bit_reproducible() {
        let sc = OcclusionScenario {
            occluders: vec![Occluder::new([0.0, 0.0], [250.0, 250.0])],
            outlier_prob: 0.3,
            ..OcclusionScenario::default()
        };
        let run = || {
            let mut rng = stream(99, Stream::Perception);
            (0..20).map(|f| observe(&truth(), &sc, f, &mut rng)).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.keypoints.iter().zip(&y.keypoints) {
                assert_eq!(p.map(|p| (p.x.to_bits(), p.y.to_bits())), q.map(|q| (q.x.to_bits(), q.y.to_bits())));
            }
        }
    }

    #[test]
    fn dropout_frequency_matches_probability() {
        let p = 0.35;
        let sc = OcclusionScenario {
            occluders: vec![Occluder::new([0.0, 0.0], [480.0, 480.0])],
            dropout_prob_occluded: p,
            ..OcclusionScenario::clean()
        };
        let pts = [Pixel::new(10.0, 10.0)];
        let mut rng = stream(5, Stream::Perception);
        let n = 20_000;
        let dropped = (0..n).filter(|&f| observe(&pts, &sc, f, &mut rng).keypoints[0].is_none()).count();
        let freq = dropped as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "freq {freq}");
    }

    #[test]
    fn noise_is_unbiased() {
        let sc = OcclusionScenario {
            noise_sigma: 2.0,
            ..OcclusionScenario::clean()
        };
        let pts = [Pixel::new(50.0, 60.0)];
        let mut rng = stream(11, Stream::Perception);
        let n = 20_000;
        let mut sum = Vector2::zeros();
        for f in 0..n {
            sum += observe(&pts, &sc, f, &mut rng).keypoints[0].unwrap() - pts[0];
        }
        let mean = sum / n as f64;
        assert!(mean.x.abs() < 0.1 && mean.y.abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn planar_bbox_is_centered_square() {
        let obs = KeypointObservation { frame_index: 0, keypoints: vec![Some(Pixel::new(100.0, 200.0))] };
        let doc = export_annotations(&obs, &BoxSpec::Planar { bb_size: 40.0 }, &[]).unwrap();
        assert_eq!(doc.keypoints[0], [100.0, 200.0, 1.0]);
        assert_eq!(doc.bboxes[0], [80.0, 180.0, 120.0, 220.0]);
    }

    #[test]
    fn invisible_keypoint_uses_last_known() {
        let obs = KeypointObservation { frame_index: 3, keypoints: vec![None] };
        let doc = export_annotations(&obs, &BoxSpec::Planar { bb_size: 10.0 }, &[Some(Pixel::new(50.0, 60.0))]).unwrap();
        assert_eq!(doc.keypoints[0], [50.0, 60.0, 0.0]);
        assert_eq!(doc.bboxes[0], [45.0, 55.0, 55.0, 65.0]);
    }

    #[test]
    fn spatial_bbox_is_tight_hull() {
        let corners = [Pixel::new(10.0, 10.0), Pixel::new(30.0, 12.0), Pixel::new(28.0, 32.0), Pixel::new(9.0, 30.0)];
        let obs = KeypointObservation { frame_index: 0, keypoints: vec![Some(Pixel::new(20.0, 20.0))] };
        let doc = export_annotations(&obs, &BoxSpec::Spatial { corners: vec![corners] }, &[]).unwrap();
        assert_eq!(doc.bboxes[0], [9.0, 10.0, 30.0, 32.0]);
    }

    #[test]
    fn field_names_and_bad_size() {
        let obs = KeypointObservation { frame_index: 0, keypoints: vec![Some(Pixel::new(1.5, 2.0))] };
        let doc = export_annotations(&obs, &BoxSpec::Planar { bb_size: 2.0 }, &[]).unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(text, r#"{"keypoints":[[1.5,2.0,1.0]],"bboxes":[[0.5,1.0,2.5,3.0]]}"#);
        assert!(export_annotations(&obs, &BoxSpec::Planar { bb_size: 0.0 }, &[]).is_err());
    }

    proptest! {
        #[test]
        fn annotations_round_trip(pts in proptest::collection::vec((0.0f64..480.0, 0.0f64..480.0, any::<bool>()), 1..9)) {
            let obs = KeypointObservation {
                frame_index: 0,
                keypoints: pts.iter().map(|&(x, y, v)| v.then(|| Pixel::new(x, y))).collect(),
            };
            let doc = export_annotations(&obs, &BoxSpec::Planar { bb_size: 24.0 }, &[]).unwrap();
            let back: AnnotationDocument = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
            prop_assert_eq!(&back, &doc);
            for (kp, o) in back.keypoints.iter().zip(&obs.keypoints) {
                if let Some(p) = o {
                    prop_assert_eq!(kp[0], p.x);
                    prop_assert_eq!(kp[1], p.y);
                    prop_assert_eq!(kp[2], 1.0);
                }
            }
        }
    }
}
