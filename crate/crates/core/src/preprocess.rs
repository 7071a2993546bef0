//! Conversion of decoded rasters into canonical grayscale grids.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::resample::resize_bilinear;
use crate::types::CANONICAL_SIZE;

/// Rec. 601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// A decoded raster with interleaved channels and its bit-depth maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Largest representable sample value (255 for 8-bit, 65535 for 16-bit).
    pub max_value: f32,
    pub data: Vec<f32>,
}

impl RawImage {
    pub fn gray(width: usize, height: usize, max_value: f32, data: Vec<f32>) -> Self {
        Self {
            width,
            height,
            channels: 1,
            max_value,
            data,
        }
    }
}

/// Normalizes, converts colour to luminance and resizes to the canonical
/// resolution.
pub fn preprocess(raw: &RawImage) -> Result<Grid> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::InvalidInput("image has no pixels".into()));
    }
    if raw.channels != 1 && raw.channels != 3 {
        return Err(Error::InvalidInput(alloc::format!(
            "expected 1 or 3 channels, got {}",
            raw.channels
        )));
    }
    if raw.data.len() != raw.width * raw.height * raw.channels {
        return Err(Error::InvalidInput(
            "raster data length does not match dimensions".into(),
        ));
    }
    if !(raw.max_value > 0.0) {
        return Err(Error::InvalidInput(
            "bit-depth maximum must be positive".into(),
        ));
    }
    let scale = 1.0 / raw.max_value;
    let gray: Vec<f32> = if raw.channels == 1 {
        raw.data
            .iter()
            .map(|&v| (v * scale).clamp(0.0, 1.0))
            .collect()
    } else {
        raw.data
            .chunks_exact(3)
            .map(|px| {
                let y = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
                (y * scale).clamp(0.0, 1.0)
            })
            .collect()
    };
    let grid = Grid::new(raw.width, raw.height, gray)?;
    Ok(resize_bilinear(&grid, CANONICAL_SIZE, CANONICAL_SIZE))
}

/// Puts an in-memory grid in `[0, 1]` at canonical size.
pub fn canonicalize(grid: &Grid) -> Grid {
    resize_bilinear(grid, CANONICAL_SIZE, CANONICAL_SIZE).map(|v| v.clamp(0.0, 1.0))
}
