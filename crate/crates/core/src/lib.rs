//! Model-free keypoint-based visual servoing on a simulated arm.
//!
//! A simulated manipulator and pinhole camera provide ground truth; a
//! simulated detector corrupts it; per-keypoint unscented Kalman filters
//! repair missing and outlying detections; and an adaptive controller
//! estimates the image Jacobian online from a sliding window of joint and
//! feature velocities.

// `!(x > 0.0)` is used on purpose throughout validation: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod camera;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod perception;
pub mod rng;
pub mod robot;
pub mod servo;
pub mod tracker;

pub use error::{Error, Result};
