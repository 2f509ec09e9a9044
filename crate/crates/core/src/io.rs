//! PNG encoding of images, masks and attention maps, plus content hashes.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use ndarray::{Array2, Array3};
use sha2::{Digest, Sha256};

use crate::domain::{BinaryMask, Image};
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode(dynamic: image::DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// 8-bit RGB PNG bytes of `image`.
pub fn image_png(image: &Image) -> Result<Vec<u8>> {
    let px = image.to_u8();
    let (h, w, _) = px.dim();
    let raw: Vec<u8> = px.iter().copied().collect();
    let rgb = RgbImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Shape("image buffer size".into()))?;
    encode(rgb.into())
}

/// Decodes any PNG into an RGB image in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let rgb = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = Array3::from_shape_vec((h as usize, w as usize, 3), rgb.into_raw())
        .map_err(|e| Error::Shape(e.to_string()))?;
    Image::from_u8(&data)
}

pub fn load_png(path: &Path) -> Result<Image> {
    decode_png(&std::fs::read(path)?)
}

pub fn save_png(image: &Image, path: &Path) -> Result<String> {
    let bytes = image_png(image)?;
    std::fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

fn gray_png(values: &Array2<u8>) -> Result<Vec<u8>> {
    let (h, w) = values.dim();
    let gray = GrayImage::from_raw(w as u32, h as u32, values.iter().copied().collect())
        .ok_or_else(|| Error::Shape("mask buffer size".into()))?;
    encode(gray.into())
}

/// Grayscale PNG with 255 for foreground.
pub fn mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    gray_png(&mask.data().mapv(|v| v * 255))
}

/// Grayscale PNG of a score grid scaled so its maximum is white.
pub fn heatmap_png(row: &Array2<f64>) -> Result<Vec<u8>> {
    let max = row.fold(0.0f64, |a, &b| a.max(b));
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    gray_png(&row.mapv(|v| (v.max(0.0) * scale).round().clamp(0.0, 255.0) as u8))
}
