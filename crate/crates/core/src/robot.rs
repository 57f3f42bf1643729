//! Simulated serial manipulator used as the ground-truth oracle.
//!
//! The chain is planar: every planar joint rotates about the normal of the
//! arm's motion plane (the world z axis), so with no spatial base all
//! keypoints lie in the plane `z = base_height`. When `has_spatial_base` is
//! set, joint 0 is an extra revolute joint about the world y axis (the
//! plane's vertical axis) through the base, which swings the whole motion
//! plane toward or away from a camera looking along z.
//!
//! Joint indices refer to the full chain: `0..dof()`. The controlled joints
//! are the subset listed in `active_joints`; the rest stay at `home`.

use nalgebra::{DMatrix, DVector, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::PinholeCamera;
use crate::error::{domain, Error, Result};

/// A keypoint attached to a link at a fractional position along its length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointAnchor {
    pub link: usize,
    pub fraction: f64,
}

impl KeypointAnchor {
    pub fn new(link: usize, fraction: f64) -> Self {
        Self { link, fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorModel {
    /// Link lengths in meters, proximal first.
    pub link_lengths: Vec<f64>,
    pub keypoint_anchors: Vec<KeypointAnchor>,
    /// Ordered chain joint indices under control.
    pub active_joints: Vec<usize>,
    #[serde(default)]
    pub has_spatial_base: bool,
    #[serde(default)]
    pub base_height: f64,
    /// Per chain joint `(min, max)` in radians.
    pub joint_limits: Vec<(f64, f64)>,
    /// Angles of every chain joint; inactive joints are held here.
    #[serde(default)]
    pub home: Vec<f64>,
}

/// Angles of the active joints, in `active_joints` order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfiguration {
    pub q: DVector<f64>,
}

impl JointConfiguration {
    pub fn new(q: DVector<f64>) -> Self {
        Self { q }
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self {
            q: DVector::from_column_slice(q),
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Result of one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub q: JointConfiguration,
    /// Per active joint: true when the commanded motion was clipped by a limit.
    pub saturated: Vec<bool>,
}

pub const DEFAULT_LINK_LENGTHS: [f64; 3] = [0.32, 0.38, 0.20];

/// Spread `count` anchors evenly along the whole chain, the first one
/// `1/count` of the way out and the last one at the tip.
pub fn evenly_spread_anchors(link_lengths: &[f64], count: usize) -> Vec<KeypointAnchor> {
    let total: f64 = link_lengths.iter().sum();
    (1..=count)
        .map(|i| {
            let mut s = total * i as f64 / count as f64;
            let mut link = 0;
            while link + 1 < link_lengths.len() && s > link_lengths[link] + 1e-12 {
                s -= link_lengths[link];
                link += 1;
            }
            KeypointAnchor::new(link, (s / link_lengths[link]).clamp(0.0, 1.0))
        })
        .collect()
}

impl ManipulatorModel {
    /// Two controlled joints (shoulder, elbow) and three keypoints: one at
    /// the elbow, one at the wrist and one at the tip.
    pub fn planar_two_joint() -> Self {
        Self {
            link_lengths: DEFAULT_LINK_LENGTHS.to_vec(),
            keypoint_anchors: vec![
                KeypointAnchor::new(0, 1.0),
                KeypointAnchor::new(1, 1.0),
                KeypointAnchor::new(2, 1.0),
            ],
            active_joints: vec![0, 1],
            has_spatial_base: false,
            base_height: 0.0,
            joint_limits: vec![(-0.6, 1.8), (0.0, 2.4), (-1.5, 1.5)],
            home: vec![0.6, 1.0, 0.0],
        }
    }

    /// Three controlled planar joints and five evenly spread keypoints.
    pub fn planar_three_joint() -> Self {
        Self {
            link_lengths: DEFAULT_LINK_LENGTHS.to_vec(),
            keypoint_anchors: evenly_spread_anchors(&DEFAULT_LINK_LENGTHS, 5),
            active_joints: vec![0, 1, 2],
            has_spatial_base: false,
            base_height: 0.0,
            joint_limits: vec![(-0.6, 1.8), (0.0, 2.4), (-1.5, 1.5)],
            home: vec![0.6, 1.0, 0.0],
        }
    }

    /// Spatial base plus three planar joints, eight keypoints along the arm.
    pub fn spatial_four_joint() -> Self {
        Self {
            link_lengths: DEFAULT_LINK_LENGTHS.to_vec(),
            keypoint_anchors: evenly_spread_anchors(&DEFAULT_LINK_LENGTHS, 8),
            active_joints: vec![0, 1, 2, 3],
            has_spatial_base: true,
            base_height: 0.0,
            joint_limits: vec![(-0.8, 0.8), (-0.6, 1.8), (0.0, 2.4), (-1.5, 1.5)],
            home: vec![0.0, 0.6, 1.0, 0.0],
        }
    }

    /// Number of joints in the chain, controlled or not.
    pub fn dof(&self) -> usize {
        self.link_lengths.len() + usize::from(self.has_spatial_base)
    }

    pub fn joint_count(&self) -> usize {
        self.active_joints.len()
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoint_anchors.len()
    }

    pub fn active_limits(&self) -> Vec<(f64, f64)> {
        self.active_joints
            .iter()
            .map(|&j| self.joint_limits[j])
            .collect()
    }

    fn home_angles(&self) -> Vec<f64> {
        if self.home.is_empty() {
            self.joint_limits
                .iter()
                .map(|&(lo, hi)| (0.0f64).clamp(lo, hi))
                .collect()
        } else {
            self.home.clone()
        }
    }

    /// Active-joint configuration taken from `home`.
    pub fn home_configuration(&self) -> JointConfiguration {
        let home = self.home_angles();
        JointConfiguration::new(DVector::from_iterator(
            self.active_joints.len(),
            self.active_joints.iter().map(|&j| home[j]),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.is_empty() {
            return Err(domain("manipulator needs at least one link"));
        }
        if let Some(l) = self.link_lengths.iter().find(|&&l| !(l > 0.0)) {
            return Err(domain(format!("link length {l} must be > 0")));
        }
        let dof = self.dof();
        if self.joint_limits.len() != dof {
            return Err(domain(format!(
                "expected {dof} joint limits, got {}",
                self.joint_limits.len()
            )));
        }
        if let Some(&(lo, hi)) = self.joint_limits.iter().find(|(lo, hi)| !(lo < hi)) {
            return Err(domain(format!("joint limit min {lo} must be < max {hi}")));
        }
        if !self.home.is_empty() && self.home.len() != dof {
            return Err(domain(format!(
                "expected {dof} home angles, got {}",
                self.home.len()
            )));
        }
        for a in &self.keypoint_anchors {
            if a.link >= self.link_lengths.len() {
                return Err(domain(format!("anchor references missing link {}", a.link)));
            }
            if !(0.0..=1.0).contains(&a.fraction) {
                return Err(domain(format!("anchor fraction {} not in [0,1]", a.fraction)));
            }
        }
        if self.active_joints.is_empty() {
            return Err(domain("at least one joint must be active"));
        }
        for (i, &j) in self.active_joints.iter().enumerate() {
            if j >= dof {
                return Err(domain(format!("active joint {j} out of range (dof {dof})")));
            }
            if self.active_joints[..i].contains(&j) {
                return Err(domain(format!("active joint {j} listed twice")));
            }
        }
        let k = self.keypoint_count();
        let needed = self.joint_count().div_ceil(2) + 1;
        if k < needed {
            return Err(domain(format!(
                "{k} keypoints cannot drive {} joints (need at least {needed})",
                self.joint_count()
            )));
        }
        Ok(())
    }

    /// Full chain angles with the active ones replaced by `q`.
    fn full_angles(&self, q: &JointConfiguration) -> Result<Vec<f64>> {
        if q.len() != self.active_joints.len() {
            return Err(domain(format!(
                "configuration has {} angles, model controls {} joints",
                q.len(),
                self.active_joints.len()
            )));
        }
        let mut angles = self.home_angles();
        for (&j, &v) in self.active_joints.iter().zip(q.q.iter()) {
            angles[j] = v;
        }
        Ok(angles)
    }

    pub fn check_limits(&self, q: &JointConfiguration) -> Result<()> {
        for (&j, &v) in self.active_joints.iter().zip(q.q.iter()) {
            let (min, max) = self.joint_limits[j];
            if !(v >= min && v <= max) {
                return Err(Error::LimitViolation {
                    joint: j,
                    value: v,
                    min,
                    max,
                });
            }
        }
        Ok(())
    }

    /// Keypoint positions without the joint-limit check. Used by the
    /// finite-difference oracle, whose perturbations may leave the limits.
    pub(crate) fn keypoints_unchecked(&self, q: &JointConfiguration) -> Result<Vec<Point3<f64>>> {
        Ok(self.anchor_frames(q)?.into_iter().map(|f| f.position).collect())
    }

    fn anchor_frames(&self, q: &JointConfiguration) -> Result<Vec<KeypointFrame>> {
        let angles = self.full_angles(q)?;
        let (yaw, planar) = if self.has_spatial_base {
            (angles[0], &angles[1..])
        } else {
            (0.0, &angles[..])
        };

        // Link start points and headings in the local motion plane.
        let mut starts = Vec::with_capacity(self.link_lengths.len());
        let mut heading = 0.0;
        let mut pos = Vector3::zeros();
        for (len, theta) in self.link_lengths.iter().zip(planar) {
            heading += theta;
            starts.push((pos, heading));
            pos += Vector3::new(heading.cos(), heading.sin(), 0.0) * *len;
        }

        let swing = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
        let base = Vector3::new(0.0, 0.0, self.base_height);
        Ok(self
            .keypoint_anchors
            .iter()
            .map(|a| {
                let (start, h) = starts[a.link];
                let along = Vector3::new(h.cos(), h.sin(), 0.0);
                let local = start + along * (a.fraction * self.link_lengths[a.link]);
                KeypointFrame {
                    position: Point3::from(base + swing * local),
                    along: swing * along,
                    across: swing * Vector3::new(-h.sin(), h.cos(), 0.0),
                }
            })
            .collect())
    }
}

/// A keypoint with the unit direction of its link and the in-plane
/// perpendicular to it, both in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointFrame {
    pub position: Point3<f64>,
    pub along: Vector3<f64>,
    pub across: Vector3<f64>,
}

pub fn keypoint_frames(model: &ManipulatorModel, q: &JointConfiguration) -> Result<Vec<KeypointFrame>> {
    model.check_limits(q)?;
    model.anchor_frames(q)
}

/// Ground-truth keypoint positions in meters, one per anchor.
pub fn forward_keypoints(model: &ManipulatorModel, q: &JointConfiguration) -> Result<Vec<Point3<f64>>> {
    model.full_angles(q)?;
    model.check_limits(q)?;
    model.keypoints_unchecked(q)
}

/// Per-joint speed that traverses a motion range of `range` radians in `res`
/// steps of `dt` seconds, capped at `v_max`.
pub fn traversal_velocity(range: f64, res: u32, dt: f64, v_max: f64) -> Result<f64> {
    if res == 0 {
        return Err(domain("res must be > 0"));
    }
    if !(dt > 0.0) {
        return Err(domain(format!("dt must be > 0, got {dt}")));
    }
    if !(v_max >= 0.0) || !(range >= 0.0) {
        return Err(domain("range and v_max must be >= 0"));
    }
    Ok((range / (f64::from(res) * dt)).min(v_max))
}

/// Explicit Euler step of the active joints, clamped to their limits.
pub fn step(
    model: &ManipulatorModel,
    q: &JointConfiguration,
    q_dot: &DVector<f64>,
    dt: f64,
) -> Result<StepOutcome> {
    if !(dt > 0.0) {
        return Err(domain(format!("dt must be > 0, got {dt}")));
    }
    if q_dot.len() != q.len() || q.len() != model.joint_count() {
        return Err(domain("joint velocity dimension does not match configuration"));
    }
    let limits = model.active_limits();
    let mut saturated = vec![false; q.len()];
    let next = DVector::from_iterator(
        q.len(),
        (0..q.len()).map(|i| {
            let (lo, hi) = limits[i];
            let raw = q.q[i] + q_dot[i] * dt;
            let clamped = raw.clamp(lo, hi);
            saturated[i] = clamped != raw;
            clamped
        }),
    );
    Ok(StepOutcome {
        q: JointConfiguration::new(next),
        saturated,
    })
}

/// Central finite-difference image Jacobian of the selected keypoints
/// (rows `2i`, `2i+1` are `u`, `v` of `features[i]`) w.r.t. each active joint.
pub fn oracle_feature_jacobian(
    model: &ManipulatorModel,
    camera: &PinholeCamera,
    q: &JointConfiguration,
    eps: f64,
    features: &[usize],
) -> Result<DMatrix<f64>> {
    if !(eps > 0.0) {
        return Err(domain(format!("eps must be > 0, got {eps}")));
    }
    let project = |q: &JointConfiguration| -> Result<Vec<f64>> {
        let pts = model
            .keypoints_unchecked(q)
            .map_err(|e| Error::OracleUnavailable(e.to_string()))?;
        let mut out = Vec::with_capacity(2 * features.len());
        for &f in features {
            let p = pts
                .get(f)
                .ok_or_else(|| Error::OracleUnavailable(format!("no keypoint {f}")))?;
            let px = camera
                .project(p)
                .map_err(|e| Error::OracleUnavailable(e.to_string()))?;
            out.push(px.x);
            out.push(px.y);
        }
        Ok(out)
    };
    let j = q.len();
    let mut jac = DMatrix::zeros(2 * features.len(), j);
    for col in 0..j {
        let mut plus = q.clone();
        let mut minus = q.clone();
        plus.q[col] += eps;
        minus.q[col] -= eps;
        let (fp, fm) = (project(&plus)?, project(&minus)?);
        for row in 0..fp.len() {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

/// Oracle image Jacobian over all keypoints, shape `(2K, J)`.
pub fn oracle_image_jacobian(
    model: &ManipulatorModel,
    camera: &PinholeCamera,
    q: &JointConfiguration,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..model.keypoint_count()).collect();
    oracle_feature_jacobian(model, camera, q, eps, &all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_link() -> ManipulatorModel {
        ManipulatorModel {
            link_lengths: vec![1.0, 1.0],
            keypoint_anchors: vec![KeypointAnchor::new(1, 1.0), KeypointAnchor::new(0, 0.5)],
            active_joints: vec![0, 1],
            has_spatial_base: false,
            base_height: 0.25,
            joint_limits: vec![(-3.0, 3.0), (-3.0, 3.0)],
            home: vec![],
        }
    }

    fn close(a: Point3<f64>, b: [f64; 3]) -> bool {
        (a - Point3::from(b)).norm() < 1e-12
    }

    #[test]
    fn straight_chain_tip() {
        let m = two_link();
        let p = forward_keypoints(&m, &JointConfiguration::from_slice(&[0.0, 0.0])).unwrap();
        assert!(close(p[0], [2.0, 0.0, 0.25]));
        assert!(close(p[1], [0.5, 0.0, 0.25]));
    }

    #[test]
    fn rotated_chain_tip() {
        let m = two_link();
        let p = forward_keypoints(&m, &JointConfiguration::from_slice(&[FRAC_PI_2, 0.0])).unwrap();
        assert!(close(p[0], [0.0, 2.0, 0.25]));
    }

    #[test]
    fn out_of_limits_rejected() {
        let m = two_link();
        let err = forward_keypoints(&m, &JointConfiguration::from_slice(&[3.5, 0.0])).unwrap_err();
        assert!(matches!(err, Error::LimitViolation { joint: 0, .. }));
    }

    #[test]
    fn planar_points_stay_in_plane() {
        let m = ManipulatorModel::planar_three_joint();
        let p = forward_keypoints(&m, &JointConfiguration::from_slice(&[0.3, 1.1, -0.4])).unwrap();
        assert!(p.iter().all(|p| (p.z - m.base_height).abs() < 1e-15));
    }

    #[test]
    fn spatial_base_leaves_plane() {
        let m = ManipulatorModel::spatial_four_joint();
        let p = forward_keypoints(&m, &JointConfiguration::from_slice(&[0.4, 0.3, 1.1, -0.4])).unwrap();
        assert!(p.iter().any(|p| p.z.abs() > 0.05));
    }

    #[test]
    fn even_anchor_spread() {
        let a = evenly_spread_anchors(&[1.0, 1.0], 4);
        assert_eq!(a[0], KeypointAnchor::new(0, 0.5));
        assert_eq!(a[1], KeypointAnchor::new(0, 1.0));
        assert_eq!(a[2], KeypointAnchor::new(1, 0.5));
        assert_eq!(a[3], KeypointAnchor::new(1, 1.0));
    }

    #[test]
    fn default_models_validate() {
        for m in [
            ManipulatorModel::planar_two_joint(),
            ManipulatorModel::planar_three_joint(),
            ManipulatorModel::spatial_four_joint(),
        ] {
            m.validate().unwrap();
        }
    }

    #[test]
    fn too_few_keypoints_rejected() {
        let mut m = ManipulatorModel::planar_three_joint();
        m.keypoint_anchors.truncate(2);
        assert!(m.validate().is_err());
    }

    #[test]
    fn traversal_velocity_examples() {
        assert!((traversal_velocity(2.0, 100, 0.1, 0.5).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(traversal_velocity(2.0, 100, 0.1, 0.1).unwrap(), 0.1);
        assert_eq!(traversal_velocity(0.0, 100, 0.1, 0.5).unwrap(), 0.0);
        assert!(traversal_velocity(2.0, 0, 0.1, 0.5).is_err());
        assert!(traversal_velocity(2.0, 10, 0.0, 0.5).is_err());
    }

    #[test]
    fn euler_step_and_clamp() {
        let m = ManipulatorModel {
            link_lengths: vec![1.0, 1.0],
            keypoint_anchors: vec![KeypointAnchor::new(0, 1.0), KeypointAnchor::new(1, 1.0)],
            active_joints: vec![0],
            has_spatial_base: false,
            base_height: 0.0,
            joint_limits: vec![(-1.0, 1.0), (-1.0, 1.0)],
            home: vec![],
        };
        let out = step(&m, &JointConfiguration::from_slice(&[0.0]), &DVector::from_element(1, 0.2), 0.1).unwrap();
        assert!((out.q.q[0] - 0.02).abs() < 1e-15);
        assert_eq!(out.saturated, vec![false]);

        let top = JointConfiguration::from_slice(&[1.0]);
        let out = step(&m, &top, &DVector::from_element(1, 0.5), 0.1).unwrap();
        assert_eq!(out.q, top);
        assert_eq!(out.saturated, vec![true]);

        let out = step(&m, &JointConfiguration::from_slice(&[0.3]), &DVector::zeros(1), 0.1).unwrap();
        assert_eq!(out.q.q[0], 0.3);
    }

    #[test]
    fn oracle_column_zero_for_unaffected_keypoint() {
        let m = two_link();
        let cam = PinholeCamera::facing_plane([1.0, 0.5], 0.25, 3.0);
        let q = JointConfiguration::from_slice(&[0.3, 0.4]);
        let jac = oracle_image_jacobian(&m, &cam, &q, 1e-4).unwrap();
        assert_eq!(jac.shape(), (4, 2));
        // keypoint 1 sits on link 0, joint 1 is distal to it
        assert!(jac[(2, 1)].abs() < 1e-9 && jac[(3, 1)].abs() < 1e-9);
        assert!(jac[(2, 0)].abs() > 1.0);
    }

    #[test]
    fn oracle_richardson_second_order() {
        let m = ManipulatorModel::spatial_four_joint();
        let cam = PinholeCamera::default_for(&m);
        let q = JointConfiguration::from_slice(&[0.2, 0.5, 1.2, 0.3]);
        let coarse = oracle_image_jacobian(&m, &cam, &q, 2e-2).unwrap();
        let fine = oracle_image_jacobian(&m, &cam, &q, 1e-2).unwrap();
        let finer = oracle_image_jacobian(&m, &cam, &q, 5e-3).unwrap();
        // central differences: error ~ c·eps², so successive gaps shrink 4x
        let r = (&coarse - &fine).norm() / (&fine - &finer).norm();
        assert!((r - 4.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn oracle_converges_under_refinement() {
        let m = ManipulatorModel::planar_two_joint();
        let cam = PinholeCamera::default_for(&m);
        let q = JointConfiguration::from_slice(&[0.5, 1.2]);
        let a = oracle_image_jacobian(&m, &cam, &q, 1e-3).unwrap();
        let b = oracle_image_jacobian(&m, &cam, &q, 1e-4).unwrap();
        assert!((&a - &b).norm() / b.norm() < 1e-3);
    }

    proptest! {
        #[test]
        fn rigid_links_keep_distances(q0 in -0.6f64..1.8, q1 in 0.0f64..2.4, q2 in -1.5f64..1.5, yaw in -0.8f64..0.8) {
            let m = ManipulatorModel {
                keypoint_anchors: vec![
                    KeypointAnchor::new(1, 0.1), KeypointAnchor::new(1, 0.7),
                    KeypointAnchor::new(2, 0.0), KeypointAnchor::new(2, 1.0),
                ],
                ..ManipulatorModel::spatial_four_joint()
            };
            let p = forward_keypoints(&m, &JointConfiguration::from_slice(&[yaw, q0, q1, q2])).unwrap();
            prop_assert!(((p[0] - p[1]).norm() - 0.6 * 0.38).abs() < 1e-9);
            prop_assert!(((p[2] - p[3]).norm() - 0.20).abs() < 1e-9);
        }

        #[test]
        fn traversal_velocity_bounded_and_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0, res in 1u32..500, vmax in 0.0f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let vlo = traversal_velocity(lo, res, 0.1, vmax).unwrap();
            let vhi = traversal_velocity(hi, res, 0.1, vmax).unwrap();
            prop_assert!(vhi <= vmax && vlo <= vhi && vlo >= 0.0);
        }

        #[test]
        fn unclamped_steps_add(q0 in -0.3f64..0.3, q1 in 0.5f64..1.5, v0 in -0.5f64..0.5, v1 in -0.5f64..0.5) {
            let m = ManipulatorModel::planar_two_joint();
            let q = JointConfiguration::from_slice(&[q0, q1]);
            let v = DVector::from_column_slice(&[v0, v1]);
            let twice = step(&m, &step(&m, &q, &v, 0.1).unwrap().q, &v, 0.1).unwrap().q;
            let once = step(&m, &q, &v, 0.2).unwrap().q;
            prop_assert!((twice.q - once.q).amax() < 1e-12);
        }
    }
}
