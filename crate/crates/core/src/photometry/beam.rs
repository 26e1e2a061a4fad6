use super::{beam_angles, CameraModel, HeadlightModel};
use crate::error::{shape_err, Result};
use crate::lightfield::{DepthMap, LightField};

/// Renders the headlight's beam pattern into the camera image.
///
/// Each camera pixel with valid depth is lifted to 3D, moved into the
/// headlight frame and projected through the projector intrinsics. Pixels
/// landing inside the projector frame receive the table intensity at their
/// beam angles; everything else is dark.
pub fn project_beam(cam: &CameraModel, hl: &HeadlightModel, depth: &DepthMap) -> Result<LightField> {
    cam.validate()?;
    hl.validate()?;
    if depth.dims() != (cam.height, cam.width) {
        return Err(shape_err("project_beam depth", depth.dims(), (cam.height, cam.width)));
    }
    Ok(LightField::from_fn(cam.height, cam.width, |y, x| {
        let Some(z) = depth.at(y, x) else {
            return 0.0;
        };
        let p_cam = cam.unproject(x as f64, y as f64, z as f64);
        let p = hl.extrinsics.to_headlight(&p_cam);
        match hl.intrinsics.project(&p) {
            Some((u, v)) if hl.intrinsics.contains(u, v) => {
                let (ha, va) = beam_angles(&p);
                hl.phi.sample(ha, va) as f32
            }
            _ => 0.0,
        }
    }))
}
