//! PNG encoding and decoding for images, masks and rendered panels.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any PNG as `H×W×3` in `[0,1]`; grayscale input is replicated to three channels.
pub fn read_rgb(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb32f();
    let (w, h) = img.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw())
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Reads a mask PNG; any nonzero luma value marks the pixel relevant.
pub fn read_mask(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| u8::from(v != 0)).collect();
    Array2::from_shape_vec((h as usize, w as usize), data).map_err(|e| Error::Shape(e.to_string()))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgb_buffer(img: &Array3<f32>) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    let (h, w, c) = img.dim();
    let raw: Vec<u8> = match c {
        3 => img.iter().map(|&v| quantize(v)).collect(),
        1 => img.iter().flat_map(|&v| [quantize(v); 3]).collect(),
        _ => return Err(Error::Shape(format!("cannot encode {c}-channel image"))),
    };
    ImageBuffer::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Shape("image buffer size".into()))
}

/// Encodes an `H×W×C` image (C = 1 or 3) to PNG bytes.
pub fn encode_rgb(img: &Array3<f32>) -> Result<Vec<u8>> {
    let buf = rgb_buffer(img)?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| image_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

pub fn encode_mask(mask: &Array2<u8>) -> Result<Vec<u8>> {
    let (h, w) = mask.dim();
    let raw = mask.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Shape("mask buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| image_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_rgb(path: &Path, img: &Array3<f32>) -> Result<()> {
    write_bytes(path, &encode_rgb(img)?)
}

pub fn write_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    write_bytes(path, &encode_mask(mask)?)
}
