//! Pinhole geometry of the camera and the HD headlight, the angular beam
//! tables used for the classic low/high beam patterns, and the
//! camera-to-headlight warp used at runtime.
//!
//! Conventions: camera and projector frames are right-handed with `x` right,
//! `y` down and `z` forward. Integer pixel coordinates are pixel centers.
//! Depth values are distances along the optical axis (`z`).

mod beam;
mod calib;
mod table;
mod warp;

pub use beam::project_beam;
pub use calib::CalibrationFile;
pub use table::AngularIntensityTable;
pub use warp::{build_warp, camera_to_headlight, field_to_headlight, ReferenceGeometry, WarpMap};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Intrinsics with the principal point at the image center and the given
    /// horizontal and vertical fields of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64, vfov_deg: f64) -> Result<Self> {
        let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        let fy = (height as f64 / 2.0) / (vfov_deg.to_radians() / 2.0).tan();
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Model(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Model("camera resolution must be positive".into()));
        }
        if !self.contains(self.cx, self.cy) {
            return Err(Error::Model(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Whether a continuous pixel coordinate falls on the sensor footprint.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && u < self.width as f64 - 0.5 && v >= -0.5 && v < self.height as f64 - 0.5
    }

    /// Lifts a pixel with axial depth `z` to a 3D point.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Projects a point; `None` behind the image plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Ray direction (unnormalized, `z = 1`) through a pixel.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Rigid transform from the camera frame into the headlight frame:
/// `p_headlight = rotation * p_camera + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    /// Row-major 3x3 rotation.
    pub rotation: [f64; 9],
    /// Translation in meters.
    pub translation: [f64; 3],
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        }
    }

    /// Headlight placed at `center` (camera frame) with the camera's orientation.
    pub fn from_offset(center: [f64; 3]) -> Self {
        Self {
            translation: [-center[0], -center[1], -center[2]],
            ..Self::identity()
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.translation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation.iter().chain(&self.translation).any(|v| !v.is_finite()) {
            return Err(Error::Model("extrinsics contain non-finite values".into()));
        }
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::Model(format!(
                "rotation is not orthonormal (max deviation {err:.3e})"
            )));
        }
        if r.determinant() < 0.0 {
            return Err(Error::Model("rotation has negative determinant".into()));
        }
        Ok(())
    }

    pub fn to_headlight(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p_cam + self.translation_vector()
    }

    /// Headlight optical center expressed in the camera frame.
    pub fn headlight_center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }
}

/// HD headlight treated as a pinhole projector with an angular intensity table.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadlightModel {
    pub intrinsics: CameraModel,
    pub extrinsics: Extrinsics,
    pub phi: AngularIntensityTable,
}

impl HeadlightModel {
    pub fn new(
        intrinsics: CameraModel,
        extrinsics: Extrinsics,
        phi: AngularIntensityTable,
    ) -> Result<Self> {
        let hl = Self {
            intrinsics,
            extrinsics,
            phi,
        };
        hl.validate()?;
        Ok(hl)
    }

    /// 320x80 projector spanning +-40 by +-10 degrees.
    pub fn default_intrinsics() -> CameraModel {
        CameraModel::from_fov(320, 80, 80.0, 20.0).expect("valid default projector")
    }

    /// Headlight 0.6 m below and 1.5 m ahead of the camera, axes aligned.
    pub fn default_extrinsics() -> Extrinsics {
        Extrinsics::from_offset([0.0, 0.6, 1.5])
    }

    pub fn low_beam() -> Self {
        Self::new(
            Self::default_intrinsics(),
            Self::default_extrinsics(),
            AngularIntensityTable::synthetic_low_beam(),
        )
        .expect("valid default headlight")
    }

    pub fn high_beam() -> Self {
        Self::new(
            Self::default_intrinsics(),
            Self::default_extrinsics(),
            AngularIntensityTable::synthetic_high_beam(),
        )
        .expect("valid default headlight")
    }

    pub fn with_phi(&self, phi: AngularIntensityTable) -> Result<Self> {
        Self::new(self.intrinsics, self.extrinsics, phi)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.extrinsics.validate()?;
        let k = &self.intrinsics;
        let h_lo = ((-0.5 - k.cx) / k.fx).atan().to_degrees();
        let h_hi = ((k.width as f64 - 0.5 - k.cx) / k.fx).atan().to_degrees();
        let v_lo = ((-0.5 - k.cy) / k.fy).atan().to_degrees();
        let v_hi = ((k.height as f64 - 0.5 - k.cy) / k.fy).atan().to_degrees();
        let (ht, vt) = (self.phi.h_range(), self.phi.v_range());
        let tol = 1e-9;
        if ht.0 > h_lo + tol || ht.1 < h_hi - tol || vt.0 > v_lo + tol || vt.1 < v_hi - tol {
            return Err(Error::Model(format!(
                "intensity table [{:.2}, {:.2}]x[{:.2}, {:.2}] deg does not cover projector \
                 field of view [{h_lo:.2}, {h_hi:.2}]x[{v_lo:.2}, {v_hi:.2}] deg",
                ht.0, ht.1, vt.0, vt.1
            )));
        }
        Ok(())
    }

    /// Projector pixel hit by a camera-frame point, if it is inside the
    /// projector frame.
    pub fn project_camera_point(&self, p_cam: &Vector3<f64>) -> Option<(f64, f64)> {
        let p = self.extrinsics.to_headlight(p_cam);
        self.intrinsics
            .project(&p)
            .filter(|&(u, v)| self.intrinsics.contains(u, v))
    }
}

/// Angles `(horizontal, vertical)` in degrees of a headlight-frame point.
pub fn beam_angles(p: &Vector3<f64>) -> (f64, f64) {
    (p.x.atan2(p.z).to_degrees(), p.y.atan2(p.z).to_degrees())
}
