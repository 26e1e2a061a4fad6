use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{Annotation, BBox, DepthMap, Image, ScenePair};
use crate::photometry::CameraModel;

/// Object class names, indexed by `class_id`. Label maps store `class_id + 1`
/// and reserve 0 for background.
pub const CLASS_NAMES: [&str; 3] = ["car", "pedestrian", "cyclist"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub class_id: u32,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f32>,
}

/// A region that may trigger a detection but is not an object, such as a
/// lamp or a reflective sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clutter {
    pub class_id: u32,
    pub bbox: BBox,
}

/// One scene as listed in the manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub i_full: PathBuf,
    pub i_off: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    /// 8-bit PNG label map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clutter: Vec<Clutter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
    pub records: Vec<SceneRecord>,
}

/// Per-pixel class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("label map length {} != {height}x{width}", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = ImageReader::open(path)?
            .with_guessed_format()?
            .decode()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        Self::new(h as usize, w as usize, g.into_raw())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        PngEncoder::new(f)
            .write_image(&self.data, self.width as u32, self.height as u32, ExtendedColorType::L8)
            .map_err(|e| Error::Format(format!("png encode: {e}")))
    }
}

/// A loaded scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub pair: ScenePair,
    pub labels: Option<LabelMap>,
    pub clutter: Vec<Clutter>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub camera: Option<CameraModel>,
    pub scenes: Vec<Scene>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Dataset {
    /// Reads a manifest and every file it references.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let scenes = manifest
            .records
            .iter()
            .map(|r| load_scene(base, r).map_err(|e| Error::Format(format!("scene {}: {e}", r.id))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(cam) = &manifest.camera {
            cam.validate()?;
            if let Some(s) = scenes.iter().find(|s| s.pair.dims() != (cam.height, cam.width)) {
                return Err(Error::Shape(format!("scene {} does not match the camera size", s.id)));
            }
        }
        Ok(Self {
            split: manifest.split,
            camera: manifest.camera,
            scenes,
        })
    }

    /// Writes every scene next to `manifest.json` in `dir` and returns the
    /// manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut records = Vec::with_capacity(self.scenes.len());
        for s in &self.scenes {
            let file = |suffix: &str| PathBuf::from(format!("{}_{suffix}", s.id));
            let rec = SceneRecord {
                id: s.id.clone(),
                i_full: file("full.lidf"),
                i_off: file("off.lidf"),
                depth: s.pair.depth().map(|_| file("depth.lidf")),
                labels: s.labels.as_ref().map(|_| file("labels.png")),
                annotations: s
                    .pair
                    .annotations()
                    .iter()
                    .map(|a| AnnotationRecord {
                        class_id: a.class_id,
                        bbox: a.bbox,
                        distance: a.distance,
                    })
                    .collect(),
                clutter: s.clutter.clone(),
            };
            s.pair.i_full().save(dir.join(&rec.i_full))?;
            s.pair.i_off().save(dir.join(&rec.i_off))?;
            if let (Some(d), Some(p)) = (s.pair.depth(), &rec.depth) {
                d.save(dir.join(p))?;
            }
            if let (Some(l), Some(p)) = (&s.labels, &rec.labels) {
                l.save(dir.join(p))?;
            }
            records.push(rec);
        }
        let manifest = DatasetManifest {
            split: self.split,
            camera: self.camera,
            records,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}

fn load_scene(base: &Path, r: &SceneRecord) -> Result<Scene> {
    let full = Image::load(resolve(base, &r.i_full))?;
    let off = Image::load(resolve(base, &r.i_off))?;
    let mut pair = ScenePair::new(full, off)?;
    if let Some(d) = &r.depth {
        pair = pair.with_depth(DepthMap::load(resolve(base, d))?)?;
    }
    let anns = r
        .annotations
        .iter()
        .map(|a| {
            let ann = Annotation::new(a.class_id, a.bbox);
            match a.distance {
                Some(d) => ann.with_distance(d),
                None => ann,
            }
        })
        .collect();
    pair = pair.with_annotations(anns)?;
    let labels = match &r.labels {
        Some(p) => {
            let l = LabelMap::load(resolve(base, p))?;
            if (l.height, l.width) != pair.dims() {
                return Err(Error::Shape("label map does not match the images".into()));
            }
            Some(l)
        }
        None => None,
    };
    let (h, w) = pair.dims();
    if let Some(c) = r.clutter.iter().find(|c| !c.bbox.is_inside(w, h)) {
        return Err(Error::InvalidValue(format!("clutter box {:?} outside the image", c.bbox)));
    }
    Ok(Scene {
        id: r.id.clone(),
        pair,
        labels,
        clutter: r.clutter.clone(),
    })
}
