use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Clutter, Dataset, LabelMap, Scene, Split, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::lightfield::{Annotation, BBox, DepthMap, Image, ScenePair};
use crate::photometry::CameraModel;

/// Object footprints in meters, `(width, height)` per class.
const CLASS_SIZES: [(f64, f64); 3] = [(1.8, 1.5), (0.6, 1.75), (0.7, 1.8)];

/// Generator settings for the toy night-time corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Image row of the horizon, which is also the principal point row.
    pub horizon_row: f64,
    pub camera_height: f64,
    pub ambient: (f64, f64),
    /// Headlight gain at zero distance.
    pub beam_gain: f64,
    /// Distance at which the gain halves.
    pub gain_distance: f64,
    pub distance: (f64, f64),
    /// Largest lateral offset of an object in meters.
    pub lateral: f64,
    pub objects: (usize, usize),
    pub clutter: (usize, usize),
    pub road_albedo: (f64, f64),
    pub object_albedo: (f64, f64),
    pub emissive: (f64, f64),
    /// Objects with a smaller visible fraction are dropped.
    pub min_visible: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 192,
            height: 96,
            focal: 200.0,
            horizon_row: 40.0,
            camera_height: 1.3,
            ambient: (0.0, 0.05),
            beam_gain: 2.0,
            gain_distance: 12.0,
            distance: (5.0, 80.0),
            lateral: 8.0,
            objects: (1, 5),
            clutter: (0, 2),
            road_albedo: (0.08, 0.3),
            object_albedo: (0.05, 0.9),
            emissive: (0.2, 0.6),
            min_visible: 0.3,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64, max: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
        return Err(Error::Config(format!("{name} range [{lo}, {hi}] must lie in [{min}, {max}]")));
    }
    Ok(())
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config("images must be at least 8x8".into()));
        }
        if !(self.focal > 0.0 && self.camera_height > 0.0 && self.gain_distance > 0.0 && self.beam_gain >= 0.0) {
            return Err(Error::Config("focal, camera height and gain distance must be positive".into()));
        }
        if !(self.horizon_row >= 0.0 && self.horizon_row < self.height as f64 - 1.0) {
            return Err(Error::Config(format!("horizon row {} outside the image", self.horizon_row)));
        }
        check_range("ambient", self.ambient, 0.0, 1.0)?;
        check_range("distance", self.distance, 0.5, 1e4)?;
        check_range("road albedo", self.road_albedo, 0.0, 1.0)?;
        check_range("object albedo", self.object_albedo, 0.0, 1.0)?;
        check_range("emissive", self.emissive, 0.0, 1.0)?;
        check_range("min visible", (self.min_visible, self.min_visible), 0.0, 1.0)?;
        if self.objects.0 > self.objects.1 || self.clutter.0 > self.clutter.1 {
            return Err(Error::Config("object and clutter counts must be ordered".into()));
        }
        if self.lateral.is_nan() || self.lateral < 0.0 {
            return Err(Error::Config("lateral extent must be non-negative".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            self.horizon_row,
            self.width,
            self.height,
        )
    }

    /// Fraction of full-beam light reaching a surface at `distance`.
    pub fn gain(&self, distance: f64) -> f64 {
        self.beam_gain / (1.0 + (distance / self.gain_distance).powi(2))
    }
}

/// An opaque or emissive rectangle in painter's order.
struct Layer {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    depth: f64,
    albedo: [f64; 3],
    emission: [f64; 3],
    label: u8,
    object: Option<ObjectInfo>,
}

struct ObjectInfo {
    class_id: u32,
    bbox: BBox,
    full_area: usize,
}

/// Box of a `w x h` meter upright rectangle standing on the ground at
/// distance `d`, lateral offset `x`, clipped to the image. `None` when
/// less than half of it is in view.
fn project_object(p: &SynthParams, d: f64, x: f64, w: f64, h: f64) -> Option<[usize; 4]> {
    let cx = (p.width as f64 - 1.0) / 2.0;
    let f = p.focal;
    let ex0 = (cx + f * (x - w / 2.0) / d + 0.5).round();
    let ex1 = (cx + f * (x + w / 2.0) / d + 0.5).round();
    let ey0 = (p.horizon_row + f * (p.camera_height - h) / d + 0.5).round();
    let ey1 = (p.horizon_row + f * p.camera_height / d + 0.5).round();
    let (ex1, ey1) = (ex1.max(ex0 + 1.0), ey1.max(ey0 + 1.0));
    let cx0 = ex0.max(0.0);
    let cx1 = ex1.min(p.width as f64);
    let cy0 = ey0.max(0.0);
    let cy1 = ey1.min(p.height as f64);
    if cx1 <= cx0 || cy1 <= cy0 {
        return None;
    }
    let full = (ex1 - ex0) * (ey1 - ey0);
    if (cx1 - cx0) * (cy1 - cy0) < 0.5 * full {
        return None;
    }
    Some([cx0 as usize, cx1 as usize, cy0 as usize, cy1 as usize])
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn generate_scene(p: &SynthParams, index: usize, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let (w, h) = (p.width, p.height);
    let ambient = uniform(rng, p.ambient);
    let road = uniform(rng, p.road_albedo);
    let texture: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.9..1.1)).collect();

    let mut layers = Vec::new();
    for _ in 0..count(rng, p.objects) {
        let class_id = rng.random_range(0..CLASS_NAMES.len()) as u32;
        let (bw, bh) = CLASS_SIZES[class_id as usize];
        let scale = rng.random_range(0.9..1.1);
        let d = uniform(rng, p.distance);
        let x = rng.random_range(-p.lateral..=p.lateral);
        let base = uniform(rng, p.object_albedo);
        let albedo = [
            base * rng.random_range(0.7..=1.0),
            base * rng.random_range(0.7..=1.0),
            base * rng.random_range(0.7..=1.0),
        ];
        if let Some([x0, x1, y0, y1]) = project_object(p, d, x, bw * scale, bh * scale) {
            layers.push(Layer {
                x0,
                x1,
                y0,
                y1,
                depth: d,
                albedo,
                emission: [0.0; 3],
                label: class_id as u8 + 1,
                object: Some(ObjectInfo {
                    class_id,
                    bbox: BBox::new(x0 as f32, y0 as f32, x1 as f32, y1 as f32),
                    full_area: (x1 - x0) * (y1 - y0),
                }),
            });
        }
    }
    let mut clutter = Vec::new();
    for _ in 0..count(rng, p.clutter) {
        let cw = rng.random_range(2..=5usize).min(w);
        let ch = rng.random_range(2..=6usize).min(h);
        let x0 = rng.random_range(0..=w - cw);
        let top = (p.horizon_row - 25.0).max(0.0) as usize;
        let bottom = ((p.horizon_row + 10.0) as usize).min(h - ch);
        let y0 = rng.random_range(top.min(bottom)..=bottom);
        let e = uniform(rng, p.emissive);
        let class_id = rng.random_range(0..CLASS_NAMES.len()) as u32;
        layers.push(Layer {
            x0,
            x1: x0 + cw,
            y0,
            y1: y0 + ch,
            depth: rng.random_range(20.0..100.0),
            albedo: [0.0; 3],
            emission: [e, 0.8 * e, 0.5 * e],
            label: 0,
            object: None,
        });
        clutter.push(Clutter {
            class_id,
            bbox: BBox::new(x0 as f32, y0 as f32, (x0 + cw) as f32, (y0 + ch) as f32),
        });
    }
    // Far to near, ties in placement order.
    layers.sort_by(|a, b| b.depth.total_cmp(&a.depth));

    let owner = |layers: &[Layer], keep: &[bool]| {
        let mut top = vec![usize::MAX; w * h];
        for (li, l) in layers.iter().enumerate().filter(|(i, _)| keep[*i]) {
            for y in l.y0..l.y1 {
                for x in l.x0..l.x1 {
                    top[y * w + x] = li;
                }
            }
        }
        top
    };
    let mut keep = vec![true; layers.len()];
    let top = owner(&layers, &keep);
    for (li, l) in layers.iter().enumerate() {
        if let Some(o) = &l.object {
            let visible = top.iter().filter(|&&t| t == li).count();
            if (visible as f64) < p.min_visible * o.full_area as f64 {
                keep[li] = false;
            }
        }
    }
    let top = owner(&layers, &keep);

    let mut full = Vec::with_capacity(w * h * 3);
    let mut off = Vec::with_capacity(w * h * 3);
    let mut depth = vec![DepthMap::INVALID; w * h];
    let mut labels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (albedo, emission, z) = match top[i] {
                usize::MAX if y as f64 > p.horizon_row => {
                    let rho = road * texture[i];
                    let z = p.focal * p.camera_height / (y as f64 - p.horizon_row);
                    ([rho; 3], [0.0; 3], Some(z))
                }
                usize::MAX => ([0.0; 3], [0.0; 3], None),
                li => {
                    let l = &layers[li];
                    labels[i] = l.label;
                    (l.albedo, l.emission, Some(l.depth))
                }
            };
            let g = z.map_or(0.0, |z| p.gain(z));
            if let Some(z) = z {
                depth[i] = z as f32;
            }
            for c in 0..3 {
                off.push((ambient * albedo[c] + emission[c]).clamp(0.0, 1.0) as f32);
                full.push(((ambient + g) * albedo[c] + emission[c]).clamp(0.0, 1.0) as f32);
            }
        }
    }

    let annotations = layers
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .filter_map(|(l, _)| l.object.as_ref().map(|o| Annotation::new(o.class_id, o.bbox).with_distance(l.depth as f32)))
        .collect();
    let pair = ScenePair::new(Image::new(h, w, 3, full)?, Image::new(h, w, 3, off)?)?
        .with_depth(DepthMap::new(h, w, depth)?)?
        .with_annotations(annotations)?;
    Ok(Scene {
        id: format!("scene_{index:04}"),
        pair,
        labels: Some(LabelMap::new(h, w, labels)?),
        clutter,
    })
}

/// Renders `count` seeded toy night scenes.
///
/// Every scene has a ground plane below the horizon, an unlit sky above it,
/// upright rectangular objects at random distances and a few emissive
/// clutter patches. The unlit render is `a * albedo + emission`; the lit one
/// adds the distance-dependent beam gain to the ambient level.
pub fn generate_toy_corpus(count: usize, seed: u64, params: &SynthParams) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    params.validate()?;
    let cam = params.camera()?;
    let scenes = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate_scene(params, i, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        split: Split::Test,
        camera: Some(cam),
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_corpus() {
        let p = SynthParams::default();
        let a = generate_toy_corpus(5, 42, &p).unwrap();
        let b = generate_toy_corpus(5, 42, &p).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_corpus(5, 43, &p).unwrap();
        assert_ne!(a, c);
        assert!(a.scenes.iter().map(|s| s.pair.annotations().len()).sum::<usize>() > 0);
    }

    #[test]
    fn black_objects_emit_nothing() {
        let p = SynthParams {
            object_albedo: (0.0, 0.0),
            clutter: (0, 0),
            ..Default::default()
        };
        let ds = generate_toy_corpus(10, 1, &p).unwrap();
        for s in &ds.scenes {
            let labels = s.labels.as_ref().unwrap();
            for (i, &l) in labels.data.iter().enumerate() {
                if l > 0 {
                    for c in 0..3 {
                        assert_eq!(s.pair.i_full().data()[i * 3 + c], 0.0);
                        assert_eq!(s.pair.i_off().data()[i * 3 + c], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn no_ambient_leaves_only_emitters() {
        let p = SynthParams {
            ambient: (0.0, 0.0),
            clutter: (2, 2),
            ..Default::default()
        };
        let ds = generate_toy_corpus(5, 2, &p).unwrap();
        for s in &ds.scenes {
            let w = s.pair.dims().1;
            for (i, px) in s.pair.i_off().data().chunks(3).enumerate() {
                let (y, x) = (i / w, i % w);
                let emitter = s.clutter.iter().any(|c| c.bbox.contains_pixel(x, y));
                if !emitter {
                    assert!(px.iter().all(|&v| v == 0.0), "pixel ({x}, {y}) = {px:?}");
                }
            }
        }
    }

    #[test]
    fn annotations_are_consistent() {
        let p = SynthParams::default();
        let cam = p.camera().unwrap();
        let ds = generate_toy_corpus(20, 3, &p).unwrap();
        for s in &ds.scenes {
            let depth = s.pair.depth().unwrap();
            for a in s.pair.annotations() {
                let d = a.distance.unwrap() as f64;
                assert!((5.0..80.0).contains(&d));
                // The box bottom sits on the ground at the object's distance.
                let bottom = p.horizon_row + p.focal * p.camera_height / d + 0.5;
                if a.bbox.y2 < p.height as f32 {
                    assert!((a.bbox.y2 as f64 - bottom).abs() <= 0.5 + 1e-9);
                }
                assert!(a.bbox.is_inside(cam.width, cam.height));
            }
            assert!(depth.at(0, 0).is_none());
            let bottom = depth.at(95, 0).unwrap();
            assert!(bottom > 0.0);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(generate_toy_corpus(0, 0, &SynthParams::default()).is_err());
        let p = SynthParams {
            distance: (50.0, 10.0),
            ..Default::default()
        };
        assert!(matches!(generate_toy_corpus(1, 0, &p), Err(Error::Config(_))));
    }
}
