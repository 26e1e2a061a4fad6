use std::path::Path;

use nalgebra::Vector3;

use super::{CameraModel, HeadlightModel};
use crate::error::{shape_err, Error, Result};
use crate::lightfield::{read_raw, write_raw, DepthMap, LightField, RawTensor};

/// Geometry the camera and headlight rays are intersected on.
#[derive(Debug, Clone, Copy)]
pub enum ReferenceGeometry<'a> {
    /// Fronto-parallel plane at this axial distance from the camera, meters.
    Plane(f64),
    Depth(&'a DepthMap),
}

/// For each headlight pixel, the camera-image coordinate that lights it.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMap {
    pub width: usize,
    pub height: usize,
    pub camera_width: usize,
    pub camera_height: usize,
    /// Row-major over headlight pixels; `None` where no camera pixel maps.
    pub coords: Vec<Option<(f32, f32)>>,
}

impl WarpMap {
    pub const INVALID: f32 = -1.0;

    pub fn valid_count(&self) -> usize {
        self.coords.iter().filter(|c| c.is_some()).count()
    }

    pub fn get(&self, y: usize, x: usize) -> Option<(f32, f32)> {
        self.coords[y * self.width + x]
    }

    /// Two-channel raw container over the headlight grid holding camera
    /// `(x, y)`; invalid entries hold `-1`.
    fn to_raw(&self) -> RawTensor {
        let data = self
            .coords
            .iter()
            .flat_map(|c| match c {
                Some((x, y)) => [*x, *y],
                None => [Self::INVALID, Self::INVALID],
            })
            .collect();
        RawTensor {
            height: self.height,
            width: self.width,
            channels: 2,
            data,
        }
    }

    /// Writes `<path>` (raw container, two channels) and a JSON sidecar
    /// `<path>.json` with the camera resolution.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        write_raw(&mut buf, &self.to_raw())?;
        std::fs::write(path, buf)?;
        let meta = serde_json::json!({
            "camera_width": self.camera_width,
            "camera_height": self.camera_height,
            "valid": self.valid_count(),
        });
        std::fs::write(sidecar(path), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = read_raw(std::fs::File::open(path)?)?;
        if raw.channels != 2 {
            return Err(Error::Format("warp container must have two channels".into()));
        }
        let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(sidecar(path))?)?;
        let dim = |k: &str| {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("warp sidecar lacks `{k}`")))
        };
        let (cw, ch) = (dim("camera_width")?, dim("camera_height")?);
        let coords = raw
            .data
            .chunks_exact(2)
            .map(|c| (c[0] >= 0.0 && c[1] >= 0.0).then_some((c[0], c[1])))
            .collect();
        Ok(Self {
            width: raw.width,
            height: raw.height,
            camera_width: cw,
            camera_height: ch,
            coords,
        })
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

const EDGE_TOL: f64 = 1e-6;

/// Camera coordinate snapped into `[0, w-1] x [0, h-1]` if it lies inside
/// up to rounding.
fn inside_camera(cam: &CameraModel, u: f64, v: f64) -> Option<(f32, f32)> {
    let (wmax, hmax) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    let ok = u >= -EDGE_TOL && v >= -EDGE_TOL && u <= wmax + EDGE_TOL && v <= hmax + EDGE_TOL;
    ok.then(|| (u.clamp(0.0, wmax) as f32, v.clamp(0.0, hmax) as f32))
}

/// Builds the headlight-to-camera lookup by intersecting headlight pixel
/// rays with the reference geometry.
pub fn build_warp(
    cam: &CameraModel,
    hl: &HeadlightModel,
    reference: ReferenceGeometry<'_>,
) -> Result<WarpMap> {
    cam.validate()
        .and_then(|_| hl.intrinsics.validate())
        .and_then(|_| hl.extrinsics.validate())
        .map_err(|e| Error::Calibration(e.to_string()))?;
    let k = &hl.intrinsics;
    let coords = match reference {
        ReferenceGeometry::Plane(z0) => {
            if !(z0.is_finite() && z0 > 0.0) {
                return Err(Error::Calibration(format!(
                    "reference plane distance must be positive, got {z0}"
                )));
            }
            plane_warp(cam, hl, z0)
        }
        ReferenceGeometry::Depth(depth) => {
            if depth.dims() != (cam.height, cam.width) {
                return Err(shape_err("build_warp depth", depth.dims(), (cam.height, cam.width)));
            }
            depth_warp(cam, hl, depth)
        }
    };
    let warp = WarpMap {
        width: k.width,
        height: k.height,
        camera_width: cam.width,
        camera_height: cam.height,
        coords,
    };
    if warp.valid_count() == 0 {
        return Err(Error::Calibration(
            "degenerate geometry: no headlight ray meets the reference in front of both devices"
                .into(),
        ));
    }
    Ok(warp)
}

fn plane_warp(cam: &CameraModel, hl: &HeadlightModel, z0: f64) -> Vec<Option<(f32, f32)>> {
    let k = &hl.intrinsics;
    let rt = hl.extrinsics.rotation_matrix().transpose();
    let origin = hl.extrinsics.headlight_center();
    let mut out = Vec::with_capacity(k.width * k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let dir = rt * k.ray(u as f64, v as f64);
            out.push(if dir.z.abs() < 1e-12 {
                None
            } else {
                let s = (z0 - origin.z) / dir.z;
                let p = origin + dir * s;
                if s <= 0.0 {
                    None
                } else {
                    cam.project(&p).and_then(|(x, y)| inside_camera(cam, x, y))
                }
            });
        }
    }
    out
}

/// Splats the camera pixel grid, triangulated per 2x2 cell, into the
/// headlight image with a z-buffer. Cells spanning a depth jump of more than
/// 10% are treated as occlusion boundaries and skipped.
fn depth_warp(cam: &CameraModel, hl: &HeadlightModel, depth: &DepthMap) -> Vec<Option<(f32, f32)>> {
    let k = &hl.intrinsics;
    let (w, h) = (cam.width, cam.height);
    // Projector coordinates and headlight depth of each camera pixel.
    let proj: Vec<Option<(f64, f64, f64)>> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let z = depth.at(y, x)? as f64;
            let p = hl.extrinsics.to_headlight(&cam.unproject(x as f64, y as f64, z));
            let (u, v) = k.project(&p)?;
            Some((u, v, p.z))
        })
        .collect();
    let mut zbuf = vec![f64::INFINITY; k.width * k.height];
    let mut out = vec![None; k.width * k.height];
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let idx = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
            let pts: Option<Vec<_>> = idx.iter().map(|&(cx, cy)| proj[cy * w + cx]).collect();
            let Some(pts) = pts else { continue };
            let (zmin, zmax) = pts
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.2), b.max(p.2)));
            if zmax > 1.1 * zmin {
                continue;
            }
            for tri in [[0usize, 1, 2], [1, 3, 2]] {
                let verts = tri.map(|i| (pts[i], idx[i]));
                raster_triangle(&verts, k.width, k.height, &mut zbuf, &mut out);
            }
        }
    }
    out
}

type Vertex = ((f64, f64, f64), (usize, usize));

fn raster_triangle(
    verts: &[Vertex; 3],
    width: usize,
    height: usize,
    zbuf: &mut [f64],
    out: &mut [Option<(f32, f32)>],
) {
    let [(a, ca), (b, cb), (c, cc)] = *verts;
    let area = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
    if area.abs() < 1e-12 {
        return;
    }
    let lo_x = a.0.min(b.0).min(c.0).ceil().max(0.0);
    let hi_x = a.0.max(b.0).max(c.0).floor().min((width - 1) as f64);
    let lo_y = a.1.min(b.1).min(c.1).ceil().max(0.0);
    let hi_y = a.1.max(b.1).max(c.1).floor().min((height - 1) as f64);
    if lo_x > hi_x || lo_y > hi_y {
        return;
    }
    let eps = -1e-9;
    for py in lo_y as usize..=hi_y as usize {
        for px in lo_x as usize..=hi_x as usize {
            let (fx, fy) = (px as f64, py as f64);
            let w0 = ((b.0 - fx) * (c.1 - fy) - (c.0 - fx) * (b.1 - fy)) / area;
            let w1 = ((c.0 - fx) * (a.1 - fy) - (a.0 - fx) * (c.1 - fy)) / area;
            let w2 = 1.0 - w0 - w1;
            if w0 < eps || w1 < eps || w2 < eps {
                continue;
            }
            let z = w0 * a.2 + w1 * b.2 + w2 * c.2;
            let i = py * width + px;
            if z < zbuf[i] {
                zbuf[i] = z;
                let cx = w0 * ca.0 as f64 + w1 * cb.0 as f64 + w2 * cc.0 as f64;
                let cy = w0 * ca.1 as f64 + w1 * cb.1 as f64 + w2 * cc.1 as f64;
                out[i] = Some((cx as f32, cy as f32));
            }
        }
    }
}

/// Resamples an image-frame light field onto the headlight pixel grid.
pub fn field_to_headlight(m: &LightField, warp: &WarpMap) -> Result<LightField> {
    if m.dims() != (warp.camera_height, warp.camera_width) {
        return Err(shape_err(
            "field_to_headlight",
            m.dims(),
            (warp.camera_height, warp.camera_width),
        ));
    }
    let data = warp
        .coords
        .iter()
        .map(|c| match c {
            Some((x, y)) => m.sample_bilinear(*x as f64, *y as f64),
            None => 0.0,
        })
        .collect();
    LightField::from_clamped(warp.height, warp.width, data)
}

/// Maps a camera coordinate back to the headlight frame at the given axial
/// depth; used to check warps.
pub fn camera_to_headlight(
    cam: &CameraModel,
    hl: &HeadlightModel,
    u: f64,
    v: f64,
    z: f64,
) -> Option<(f64, f64)> {
    let p: Vector3<f64> = cam.unproject(u, v, z);
    hl.intrinsics.project(&hl.extrinsics.to_headlight(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometry::{AngularIntensityTable, Extrinsics};

    fn flat_table() -> AngularIntensityTable {
        AngularIntensityTable::from_fn((-80.0, 80.0, 5.0), (-80.0, 80.0, 5.0), |_, _| 1.0).unwrap()
    }

    fn rig(baseline: [f64; 3]) -> (CameraModel, HeadlightModel) {
        let cam = CameraModel::new(100.0, 100.0, 31.5, 23.5, 64, 48).unwrap();
        let hl = HeadlightModel::new(cam, Extrinsics::from_offset(baseline), flat_table()).unwrap();
        (cam, hl)
    }

    #[test]
    fn coincident_devices_give_identity() {
        let (cam, hl) = rig([0.0; 3]);
        let warp = build_warp(&cam, &hl, ReferenceGeometry::Plane(7.0)).unwrap();
        for y in 0..48 {
            for x in 0..64 {
                let (u, v) = warp.get(y, x).unwrap();
                assert!((u - x as f32).abs() < 1e-4 && (v - y as f32).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn horizontal_baseline_shifts_by_disparity() {
        // Disparity fx * b / Z = 100 * 0.5 / 10 = 5 px.
        let (cam, hl) = rig([0.5, 0.0, 0.0]);
        let warp = build_warp(&cam, &hl, ReferenceGeometry::Plane(10.0)).unwrap();
        for y in 0..48 {
            for x in 0..64 {
                match warp.get(y, x) {
                    Some((u, v)) => {
                        assert!((u - (x as f32 + 5.0)).abs() < 1e-4);
                        assert!((v - y as f32).abs() < 1e-4);
                    }
                    None => assert!(x + 5 > 63),
                }
            }
        }
    }

    #[test]
    fn shifted_checkerboard_matches_direct_resampling() {
        let (cam, hl) = rig([0.5, 0.0, 0.0]);
        let warp = build_warp(&cam, &hl, ReferenceGeometry::Plane(10.0)).unwrap();
        let board = LightField::from_fn(48, 64, |y, x| ((x / 4 + y / 4) % 2) as f32);
        let out = field_to_headlight(&board, &warp).unwrap();
        for y in 0..48 {
            for x in 0..64 {
                let expected = if x + 5 <= 63 { board.get(y, x + 5) } else { 0.0 };
                assert!((out.get(y, x) - expected).abs() < 1e-3, "({y},{x})");
            }
        }
    }

    #[test]
    fn constant_and_zero_fields() {
        let (cam, hl) = rig([0.3, -0.2, 0.1]);
        let warp = build_warp(&cam, &hl, ReferenceGeometry::Plane(6.0)).unwrap();
        let c = field_to_headlight(&LightField::constant(48, 64, 0.35).unwrap(), &warp).unwrap();
        for (o, coord) in c.data().iter().zip(&warp.coords) {
            assert_eq!(*o, if coord.is_some() { 0.35 } else { 0.0 });
        }
        let z = field_to_headlight(&LightField::zeros(48, 64), &warp).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(field_to_headlight(&LightField::zeros(4, 4), &warp).is_err());
    }

    #[test]
    fn plane_round_trip_error() {
        let (cam, _) = rig([0.0; 3]);
        let hl = HeadlightModel::low_beam();
        let warp = build_warp(&cam, &hl, ReferenceGeometry::Plane(12.0)).unwrap();
        assert!(warp.valid_count() > 0);
        for y in 0..warp.height {
            for x in 0..warp.width {
                if let Some((u, v)) = warp.get(y, x) {
                    let (hu, hv) = camera_to_headlight(&cam, &hl, u as f64, v as f64, 12.0).unwrap();
                    assert!((hu - x as f64).abs() <= 0.5 && (hv - y as f64).abs() <= 0.5);
                }
            }
        }
    }

    #[test]
    fn depth_round_trip_error() {
        // Ground plane below a 1.3 m camera plus a wall at 15 m.
        let cam = CameraModel::new(120.0, 120.0, 47.5, 23.5, 96, 48).unwrap();
        let depth = DepthMap::new(
            48,
            96,
            (0..48 * 96)
                .map(|i| {
                    let y = (i / 96) as f64;
                    if y > 23.5 {
                        (120.0 * 1.3 / (y - 23.5)).min(15.0) as f32
                    } else {
                        15.0
                    }
                })
                .collect(),
        )
        .unwrap();
        let hl = HeadlightModel::low_beam();
        let warp = build_warp(&cam, &hl, ReferenceGeometry::Depth(&depth)).unwrap();
        assert!(warp.valid_count() > 100);
        let mut worst = 0.0f64;
        for y in 0..warp.height {
            for x in 0..warp.width {
                if let Some((u, v)) = warp.get(y, x) {
                    let z = {
                        // Interpolate depth at the camera coordinate.
                        let yy = v as f64;
                        if yy > 23.5 {
                            (120.0 * 1.3 / (yy - 23.5)).min(15.0)
                        } else {
                            15.0
                        }
                    };
                    let (hu, hv) = camera_to_headlight(&cam, &hl, u as f64, v as f64, z).unwrap();
                    worst = worst.max((hu - x as f64).abs()).max((hv - y as f64).abs());
                }
            }
        }
        assert!(worst <= 0.5, "worst {worst}");
    }

    #[test]
    fn degenerate_geometry() {
        let (cam, hl) = rig([0.0; 3]);
        assert!(matches!(
            build_warp(&cam, &hl, ReferenceGeometry::Plane(-1.0)),
            Err(Error::Calibration(_))
        ));
        // Headlight looking backwards never meets a plane in front of the camera.
        let mut back = hl.clone();
        back.extrinsics.rotation = [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0];
        assert!(matches!(
            build_warp(&cam, &back, ReferenceGeometry::Plane(5.0)),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn save_load() {
        let (cam, hl) = rig([0.5, 0.0, 0.0]);
        let warp = build_warp(&cam, &hl, ReferenceGeometry::Plane(10.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("warp.lidf");
        warp.save(&p).unwrap();
        assert_eq!(WarpMap::load(&p).unwrap(), warp);
    }
}
