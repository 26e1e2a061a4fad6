use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AngularIntensityTable, CameraModel, Extrinsics, HeadlightModel};
use crate::error::{Error, Result};

/// One-time camera/headlight calibration as stored on disk (JSON).
///
/// ```json
/// {
///   "camera":    {"fx": 200, "fy": 200, "cx": 95.5, "cy": 40, "width": 192, "height": 96},
///   "headlight": {"fx": 190.7, "fy": 226.8, "cx": 159.5, "cy": 39.5, "width": 320, "height": 80},
///   "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
///   "translation": [0, -0.6, -1.5],
///   "plane_distance": 20.0
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub camera: CameraModel,
    pub headlight: CameraModel,
    /// Row-major camera-to-headlight rotation.
    pub rotation: [f64; 9],
    /// Camera-to-headlight translation, meters.
    pub translation: [f64; 3],
    pub plane_distance: f64,
}

impl CalibrationFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let calib: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        calib.camera.validate()?;
        calib.headlight.validate()?;
        calib.extrinsics().validate()?;
        if !(calib.plane_distance.is_finite() && calib.plane_distance > 0.0) {
            return Err(Error::Calibration(format!(
                "plane_distance must be positive, got {}",
                calib.plane_distance
            )));
        }
        Ok(calib)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn extrinsics(&self) -> Extrinsics {
        Extrinsics {
            rotation: self.rotation,
            translation: self.translation,
        }
    }

    pub fn headlight_model(&self, phi: AngularIntensityTable) -> Result<HeadlightModel> {
        HeadlightModel::new(self.headlight, self.extrinsics(), phi)
    }

    /// Calibration of the default headlight mounted under the given camera.
    pub fn default_for(camera: CameraModel) -> Self {
        let e = HeadlightModel::default_extrinsics();
        Self {
            camera,
            headlight: HeadlightModel::default_intrinsics(),
            rotation: e.rotation,
            translation: e.translation,
            plane_distance: 20.0,
        }
    }
}
