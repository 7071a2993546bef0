//! Image and mask files.
//!
//! Images are PNG (8/16-bit gray, gray+alpha, RGB or RGBA; alpha is
//! ignored). Reference masks are PNG where any nonzero pixel is target.
//! Soft masks use the `.smask` container: the 4-byte magic `KTSM`, width
//! and height as little-endian `u32`, then row-major little-endian `f32`.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader};
use ktseg_core::preprocess::{preprocess, RawImage};
use ktseg_core::resample::resize_nearest;
use ktseg_core::{Grid, ImageSample, ManifestRecord, MaskKind, SoftMask, CANONICAL_SIZE};

use crate::error::{KtError, Result};

const SMASK_MAGIC: &[u8; 4] = b"KTSM";
pub const SOFT_MASK_EXT: &str = "smask";

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.is_file() {
        return Err(KtError::MissingFile(path.to_path_buf()));
    }
    let err = |e: &dyn std::fmt::Display| KtError::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    ImageReader::open(path)
        .map_err(|e| KtError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| err(&e))?
        .decode()
        .map_err(|e| err(&e))
}

/// Decodes a PNG into interleaved samples at native bit depth.
pub fn read_raw(path: &Path) -> Result<RawImage> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let raw = match (
        img.color().bytes_per_pixel() / img.color().channel_count(),
        gray,
    ) {
        (1, true) => RawImage::gray(
            w,
            h,
            255.0,
            img.to_luma8()
                .into_raw()
                .into_iter()
                .map(f32::from)
                .collect(),
        ),
        (1, false) => rgb(
            w,
            h,
            255.0,
            img.to_rgb8()
                .into_raw()
                .into_iter()
                .map(f32::from)
                .collect(),
        ),
        (2, true) => RawImage::gray(
            w,
            h,
            65535.0,
            img.to_luma16()
                .into_raw()
                .into_iter()
                .map(f32::from)
                .collect(),
        ),
        (2, false) => rgb(
            w,
            h,
            65535.0,
            img.to_rgb16()
                .into_raw()
                .into_iter()
                .map(f32::from)
                .collect(),
        ),
        _ => rgb(w, h, 1.0, img.to_rgb32f().into_raw()),
    };
    Ok(raw)
}

fn rgb(width: usize, height: usize, max_value: f32, data: Vec<f32>) -> RawImage {
    RawImage {
        width,
        height,
        channels: 3,
        max_value,
        data,
    }
}

/// Loads an image as a canonical 384×384 grayscale grid in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Grid> {
    Ok(preprocess(&read_raw(path)?)?)
}

/// Loads a mask, resized with nearest-neighbour to canonical size.
pub fn load_mask(path: &Path) -> Result<SoftMask> {
    if path.extension().is_some_and(|e| e == SOFT_MASK_EXT) {
        let grid = read_smask(path)?;
        let grid = resize_nearest(&grid, CANONICAL_SIZE, CANONICAL_SIZE);
        return Ok(SoftMask::soft(grid)?);
    }
    let img = decode(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| (v > 0) as u8 as f32)
        .collect();
    let grid = resize_nearest(&Grid::new(w, h, data)?, CANONICAL_SIZE, CANONICAL_SIZE);
    Ok(SoftMask::new(grid, MaskKind::Binary)?)
}

pub fn read_smask(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| KtError::io(path, e))?;
    let corrupt = |message: &str| KtError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != SMASK_MAGIC {
        return Err(corrupt("missing soft-mask header"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != w * h * 4 {
        return Err(corrupt(
            "soft-mask payload length does not match its header",
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Grid::new(w, h, data)?)
}

pub fn write_smask(grid: &Grid, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + grid.len() * 4);
    bytes.extend_from_slice(SMASK_MAGIC);
    bytes.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for v in grid.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| KtError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| KtError::io(path, e))
}

fn to_png(grid: &Grid, path: &Path, scale: impl Fn(f32) -> u8) -> Result<()> {
    let pixels = grid.as_slice().iter().map(|&v| scale(v)).collect();
    let img = GrayImage::from_raw(grid.width() as u32, grid.height() as u32, pixels)
        .expect("buffer matches dims");
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| KtError::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_bytes(path, &bytes)
}

/// Writes a `[0, 1]` grid as an 8-bit grayscale PNG.
pub fn save_image_png(grid: &Grid, path: &Path) -> Result<()> {
    to_png(grid, path, |v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Writes a binary mask PNG with target pixels (> 0.5) at 255.
pub fn save_binary_mask_png(grid: &Grid, path: &Path) -> Result<()> {
    to_png(grid, path, |v| if v > 0.5 { 255 } else { 0 })
}

/// Stores a mask losslessly: binary masks as PNG, soft masks as `.smask`.
/// `stem` is the path without extension; the written path is returned.
pub fn save_mask(mask: &SoftMask, stem: &Path) -> Result<std::path::PathBuf> {
    match mask.kind() {
        MaskKind::Binary => {
            let path = stem.with_extension("png");
            save_binary_mask_png(mask.values(), &path)?;
            Ok(path)
        }
        MaskKind::Soft => {
            let path = stem.with_extension(SOFT_MASK_EXT);
            write_smask(mask.values(), &path)?;
            Ok(path)
        }
    }
}

/// Loads the image (and mask when present) of one manifest record.
pub fn load_record(record: &ManifestRecord, source: &str) -> Result<ImageSample> {
    let pixels = load_image(Path::new(&record.image_path))?;
    let mask = record
        .mask_path
        .as_deref()
        .map(|m| load_mask(Path::new(m)))
        .transpose()?;
    Ok(ImageSample::new(
        record.sample_id.clone(),
        pixels,
        mask,
        source,
    )?)
}
