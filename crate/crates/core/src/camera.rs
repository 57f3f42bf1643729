//! Fixed eye-to-hand pinhole camera.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::robot::ManipulatorModel;

pub type Pixel = Point2<f64>;

pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (480, 480);
pub const DEFAULT_FOCAL: f64 = 600.0;
pub const DEFAULT_DISTANCE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World to camera rotation.
    pub rotation: Matrix3<f64>,
    /// World to camera translation (meters): `p_cam = R p_world + t`.
    pub translation: Vector3<f64>,
    pub image_size: (u32, u32),
}

/// A projected keypoint and whether it is in front of the camera and
/// inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Option<Pixel>,
    pub in_frustum: bool,
}

impl PinholeCamera {
    /// Camera `distance` meters in front of the plane `z = plane_z`, optical
    /// axis along world -z through `(center[0], center[1], plane_z)`. Image
    /// `v` grows opposite to world y.
    pub fn facing_plane(center: [f64; 2], plane_z: f64, distance: f64) -> Self {
        let rotation = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        let eye = Vector3::new(center[0], center[1], plane_z + distance);
        Self {
            fx: DEFAULT_FOCAL,
            fy: DEFAULT_FOCAL,
            cx: f64::from(DEFAULT_IMAGE_SIZE.0) / 2.0,
            cy: f64::from(DEFAULT_IMAGE_SIZE.1) / 2.0,
            rotation,
            translation: -(rotation * eye),
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }

    /// Default camera for a model: 1.5 m from the motion plane, aimed at the
    /// middle of the first quadrant of the arm's reach.
    pub fn default_for(model: &ManipulatorModel) -> Self {
        let reach: f64 = model.link_lengths.iter().sum();
        Self::facing_plane([0.35 * reach, 0.35 * reach], model.base_height, DEFAULT_DISTANCE)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(domain("focal lengths must be > 0"));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(domain("image size must be > 0"));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(domain("camera rotation must be orthonormal with det +1"));
        }
        Ok(())
    }

    pub fn to_camera_frame(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Pinhole projection of a point already in the camera frame.
    pub fn project_camera_frame(&self, p: &Point3<f64>) -> Result<Pixel> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(Pixel::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Projection of a world point. The pixel may lie outside the image.
    pub fn project(&self, p: &Point3<f64>) -> Result<Pixel> {
        self.project_camera_frame(&self.to_camera_frame(p))
    }

    pub fn in_bounds(&self, px: &Pixel) -> bool {
        px.x >= 0.0
            && px.y >= 0.0
            && px.x <= f64::from(self.image_size.0)
            && px.y <= f64::from(self.image_size.1)
    }

    pub fn project_keypoints(&self, points: &[Point3<f64>]) -> Vec<Projection> {
        points
            .iter()
            .map(|p| match self.project(p) {
                Ok(px) => Projection {
                    pixel: Some(px),
                    in_frustum: self.in_bounds(&px),
                },
                Err(_) => Projection {
                    pixel: None,
                    in_frustum: false,
                },
            })
            .collect()
    }
}

/// Serializable camera description used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_size: (u32, u32),
    /// Camera center in world coordinates; `None` derives it from the arm.
    pub position: Option<[f64; 3]>,
    /// World to camera rotation rows; `None` looks along world -z.
    pub rotation: Option<[[f64; 3]; 3]>,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: DEFAULT_FOCAL,
            fy: DEFAULT_FOCAL,
            cx: f64::from(DEFAULT_IMAGE_SIZE.0) / 2.0,
            cy: f64::from(DEFAULT_IMAGE_SIZE.1) / 2.0,
            image_size: DEFAULT_IMAGE_SIZE,
            position: None,
            rotation: None,
        }
    }
}

impl CameraConfig {
    pub fn build(&self, model: &ManipulatorModel) -> Result<PinholeCamera> {
        let base = PinholeCamera::default_for(model);
        let rotation = match self.rotation {
            Some(rows) => Matrix3::from_fn(|r, c| rows[r][c]),
            None => base.rotation,
        };
        let eye = match self.position {
            Some(p) => Vector3::from(p),
            None => -(base.rotation.transpose() * base.translation),
        };
        let cam = PinholeCamera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation,
            translation: -(rotation * eye),
            image_size: self.image_size,
        };
        cam.validate()?;
        Ok(cam)
    }
}
