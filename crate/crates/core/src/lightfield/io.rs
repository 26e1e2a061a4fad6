//! Raw float container and PNG conversion.
//!
//! Raw layout: magic `LIDF`, then `u32` height, width and channel count, then
//! `height * width * channels` little-endian `f32` values, row-major with
//! interleaved channels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{DepthMap, Image, LightField, Mask};
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"LIDF";

/// Untyped contents of a raw container.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn write_raw<W: Write>(mut w: W, t: &RawTensor) -> Result<()> {
    w.write_all(RAW_MAGIC)?;
    for v in [t.height, t.width, t.channels] {
        let v = u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&v.to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(t.data.len() * 4);
    for v in &t.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_raw<R: Read>(mut r: R) -> Result<RawTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RAW_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let [height, width, channels] = dims;
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            n * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawTensor {
        height,
        width,
        channels,
        data,
    })
}

fn load_raw_file(path: &Path) -> Result<RawTensor> {
    read_raw(BufReader::new(File::open(path)?))
}

fn save_raw_file(path: &Path, t: &RawTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw(&mut w, t)?;
    w.flush()?;
    Ok(())
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

impl Image {
    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.clone(),
        }
    }

    pub fn from_raw(t: RawTensor) -> Result<Self> {
        Image::new(t.height, t.width, t.channels, t.data)
    }

    /// Loads a PNG (8 or 16 bit, gray or color; alpha is dropped) or a raw
    /// container, chosen by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_png(path) {
            let img = image::open(path).map_err(|e| Error::Format(e.to_string()))?;
            Ok(Self::from_dynamic(img))
        } else {
            Self::from_raw(load_raw_file(path)?)
        }
    }

    /// Saves as 16-bit PNG or raw container, chosen by extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_png(path) {
            self.to_png16()
                .save(path)
                .map_err(|e| Error::Format(e.to_string()))
        } else {
            save_raw_file(path, &self.to_raw())
        }
    }

    pub fn from_dynamic(img: DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let is_gray = !img.color().has_color();
        let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
        let (channels, data): (usize, Vec<f32>) = match (is_gray, sixteen) {
            (true, false) => (1, img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
            (true, true) => (1, img.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
            (false, false) => (3, img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
            (false, true) => (3, img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
        };
        Image::from_parts_unchecked(h, w, channels, data)
    }

    /// 8-bit quantization (round to nearest).
    pub fn to_dynamic8(&self) -> DynamicImage {
        let q: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, q).expect("sized buffer"))
        } else {
            DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, q).expect("sized buffer"))
        }
    }

    fn to_png16(&self) -> DynamicImage {
        let q: Vec<u16> = self.data.iter().map(|v| (v * 65535.0).round() as u16).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, _>::from_raw(w, h, q).expect("sized buffer"),
            )
        } else {
            DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, q).expect("sized buffer"),
            )
        }
    }

    /// Encodes as an 8-bit PNG byte stream.
    pub fn encode_png8(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_dynamic8()
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(buf.into_inner())
    }
}

impl LightField {
    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.clone(),
        }
    }

    pub fn from_raw(t: RawTensor) -> Result<Self> {
        if t.channels != 1 {
            return Err(Error::Format(format!(
                "light field container has {} channels",
                t.channels
            )));
        }
        LightField::new(t.height, t.width, t.data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_png(path) {
            let img = Image::load(path)?;
            if img.channels() != 1 {
                return Err(Error::Format("light field PNG must be grayscale".into()));
            }
            let (h, w) = img.dims();
            LightField::new(h, w, img.into_data())
        } else {
            Self::from_raw(load_raw_file(path)?)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_png(path) {
            Image::from_parts_unchecked(self.height, self.width, 1, self.data.clone()).save(path)
        } else {
            save_raw_file(path, &self.to_raw())
        }
    }
}

impl DepthMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let t = load_raw_file(path.as_ref())?;
        if t.channels != 1 {
            return Err(Error::Format("depth container must have one channel".into()));
        }
        DepthMap::new(t.height, t.width, t.data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_raw_file(
            path.as_ref(),
            &RawTensor {
                height: self.height,
                width: self.width,
                channels: 1,
                data: self.data.clone(),
            },
        )
    }
}

impl Mask {
    /// Loads an 8-bit grayscale PNG; nonzero pixels are set.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref()).map_err(|e| Error::Format(e.to_string()))?;
        let luma = img.to_luma8();
        let (w, h) = (luma.width() as usize, luma.height() as usize);
        Mask::new(h, w, luma.into_raw().into_iter().map(|v| v > 0).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let buf = ImageBuffer::<Luma<u8>, _>::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("sized buffer");
        buf.save(path.as_ref()).map_err(|e| Error::Format(e.to_string()))
    }
}
