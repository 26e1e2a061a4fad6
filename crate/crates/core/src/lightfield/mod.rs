//! Images, light fields and scene pairs, plus the relighting operators that
//! turn a light field into an observed image.
//!
//! All pixel data is stored row-major as `f32` in linear intensity. Images
//! interleave channels (`[(y * w + x) * c + ch]`); light fields are single
//! channel and modulate every image channel identically.

mod io;
mod relight;

pub use io::{read_raw, write_raw, RawTensor, RAW_MAGIC};
pub use relight::{darken_only, relight, relight_gradient};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

fn check_unit_range(data: &[f32], what: &str) -> Result<()> {
    if let Some((i, v)) = data
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::InvalidValue(format!(
            "{what} value {v} at index {i} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Multi-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        check_unit_range(&data, "image")?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a per-(y, x, channel) function. Values are clamped
    /// into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Pixel slice holding all channels of `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Per-pixel headlight intensity command in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LightField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("light field dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "light field data length {} != {height}x{width}",
                data.len()
            )));
        }
        check_unit_range(&data, "light field")?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Builds a field from a per-pixel function, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds a field from raw values, clamping every entry into `[0, 1]`.
    /// NaN maps to zero.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "light field data length {} != {height}x{width}",
                data.len()
            )));
        }
        data.iter_mut().for_each(|v| *v = clamp_unit(*v));
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Mean intensity, accumulated in `f64`.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at continuous pixel coordinates where integer
    /// coordinates are pixel centers. Coordinates are clamped to the grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        bilinear(&self.data, self.width, self.height, x, y)
    }
}

pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

pub(crate) fn bilinear(data: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = data[y0 * width + x0] as f64;
    let v01 = data[y0 * width + x1] as f64;
    let v10 = data[y1 * width + x0] as f64;
    let v11 = data[y1 * width + x1] as f64;
    let top = v00 + (v01 - v00) * fx;
    let bottom = v10 + (v11 - v10) * fx;
    (top + (bottom - top) * fy) as f32
}

/// Raw residual update `ΔM` with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Residual {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "residual data length {} != {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!("residual value {v} outside [-1, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Per-pixel metric depth. Non-positive or non-finite entries mark pixels
/// without a valid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub const INVALID: f32 = 0.0;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "depth data length {} != {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, depth: f32) -> Self {
        Self {
            height,
            width,
            data: vec![depth; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Depth at `(y, x)` or `None` for the invalid sentinel.
    pub fn at(&self, y: usize, x: usize) -> Option<f32> {
        let d = self.data[y * self.width + x];
        (d.is_finite() && d > 0.0).then_some(d)
    }
}

/// Axis-aligned box in continuous pixel coordinates; pixel `(x, y)` spans
/// `[x, x + 1) x [y, y + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f32 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f32 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f32 {
        self.width().hypot(self.height())
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0) as f64;
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0) as f64;
        let inter = ix * iy;
        let union = self.area() as f64 + other.area() as f64 - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Grows the box by `margin` on every side.
    pub fn expand(&self, margin: f32) -> BBox {
        BBox::new(
            self.x1 - margin,
            self.y1 - margin,
            self.x2 + margin,
            self.y2 + margin,
        )
    }

    /// Whether the pixel `(x, y)` has its center inside the box.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        px >= self.x1 && px < self.x2 && py >= self.y1 && py < self.y2
    }

    /// Inclusive-exclusive pixel index range `(x0, x1, y0, y1)` of pixels
    /// whose centers lie inside the box, clipped to the image.
    pub fn pixel_range(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let lo = |v: f32, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
        let x0 = lo(self.x1, width);
        let x1 = lo(self.x2, width);
        let y0 = lo(self.y1, height);
        let y1 = lo(self.y2, height);
        (x0, x1.max(x0), y0, y1.max(y0))
    }

    pub fn is_inside(&self, width: usize, height: usize) -> bool {
        self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= width as f32
            && self.y2 <= height as f32
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }
}

/// Full-image binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask length {} != {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub class_id: u32,
    pub bbox: BBox,
    pub mask: Option<Mask>,
    /// Distance to the object in meters.
    pub distance: Option<f32>,
}

impl Annotation {
    pub fn new(class_id: u32, bbox: BBox) -> Self {
        Self {
            class_id,
            bbox,
            mask: None,
            distance: None,
        }
    }

    pub fn with_distance(mut self, distance: f32) -> Self {
        self.distance = Some(distance);
        self
    }
}

/// Co-registered full-power and headlight-off renders of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    i_full: Image,
    i_off: Image,
    depth: Option<DepthMap>,
    annotations: Vec<Annotation>,
}

impl ScenePair {
    pub fn new(i_full: Image, i_off: Image) -> Result<Self> {
        if i_full.dims() != i_off.dims() || i_full.channels() != i_off.channels() {
            return Err(Error::Shape(format!(
                "render mismatch: {}x{}x{} vs {}x{}x{}",
                i_full.height(),
                i_full.width(),
                i_full.channels(),
                i_off.height(),
                i_off.width(),
                i_off.channels()
            )));
        }
        Ok(Self {
            i_full,
            i_off,
            depth: None,
            annotations: Vec::new(),
        })
    }

    pub fn with_depth(mut self, depth: DepthMap) -> Result<Self> {
        if depth.dims() != self.dims() {
            return Err(shape_err("depth", depth.dims(), self.dims()));
        }
        self.depth = Some(depth);
        Ok(self)
    }

    pub fn with_annotations(mut self, annotations: Vec<Annotation>) -> Result<Self> {
        let (h, w) = self.dims();
        for a in &annotations {
            if !a.bbox.is_inside(w, h) {
                return Err(Error::InvalidValue(format!(
                    "annotation box {:?} outside {w}x{h} image",
                    a.bbox
                )));
            }
            if let Some(m) = &a.mask {
                if (m.height, m.width) != (h, w) {
                    return Err(shape_err("annotation mask", (m.height, m.width), (h, w)));
                }
            }
        }
        self.annotations = annotations;
        Ok(self)
    }

    pub fn i_full(&self) -> &Image {
        &self.i_full
    }

    pub fn i_off(&self) -> &Image {
        &self.i_off
    }

    pub fn depth(&self) -> Option<&DepthMap> {
        self.depth.as_ref()
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn dims(&self) -> (usize, usize) {
        self.i_full.dims()
    }

    pub fn channels(&self) -> usize {
        self.i_full.channels()
    }
}
