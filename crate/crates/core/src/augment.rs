//! Stochastic geometric and photometric augmentations applied jointly to
//! an image and its mask.
//!
//! Geometric ops (crop, flip, rotation) move image and mask together; the
//! image is interpolated bilinearly and the mask by nearest neighbour so
//! binary masks stay binary. Photometric ops (gamma, contrast) touch the
//! image only.

use alloc::vec::Vec;
use num_traits::Float;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::resample::{resize_bilinear, resize_nearest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Fraction of rows and columns retained by the crop.
    pub crop_range: (f64, f64),
    pub rotation_range_deg: (f64, f64),
    pub gamma_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_range: (0.70, 1.00),
            rotation_range_deg: (-45.0, 45.0),
            gamma_range: (0.7, 1.3),
            contrast_range: (0.7, 1.3),
            flip_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Every range collapsed onto its no-op value.
    pub fn identity() -> Self {
        Self {
            crop_range: (1.0, 1.0),
            rotation_range_deg: (0.0, 0.0),
            gamma_range: (1.0, 1.0),
            contrast_range: (1.0, 1.0),
            flip_probability: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if !ordered(self.crop_range) || !(self.crop_range.0 > 0.0) || self.crop_range.1 > 1.0 {
            return Err(Error::InvalidConfig(
                "crop_range must be an ordered subrange of (0, 1]".into(),
            ));
        }
        if !ordered(self.rotation_range_deg) {
            return Err(Error::InvalidConfig(
                "rotation_range_deg must be ordered".into(),
            ));
        }
        if !ordered(self.gamma_range) || !(self.gamma_range.0 > 0.0) {
            return Err(Error::InvalidConfig(
                "gamma_range must be ordered and positive".into(),
            ));
        }
        if !ordered(self.contrast_range) || self.contrast_range.0 < 0.0 {
            return Err(Error::InvalidConfig(
                "contrast_range must be ordered and nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidConfig(
                "flip_probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropWindow {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            width,
            height,
        }
    }
}

/// Parameters drawn for one augmentation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub crop_fraction: f64,
    pub crop: CropWindow,
    pub flip: bool,
    pub angle_deg: f64,
    pub gamma: f64,
    pub contrast: f64,
}

fn draw(rng: &mut dyn RngCore, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

fn window_for(fraction: f64, width: usize, height: usize, rng: &mut dyn RngCore) -> CropWindow {
    let side = |len: usize| (Float::round(fraction * len as f64) as usize).clamp(1, len);
    let (cw, ch) = (side(width), side(height));
    let x = if cw == width {
        0
    } else {
        rng.random_range(0..=width - cw)
    };
    let y = if ch == height {
        0
    } else {
        rng.random_range(0..=height - ch)
    };
    CropWindow {
        x,
        y,
        width: cw,
        height: ch,
    }
}

pub fn sample_params(
    config: &AugmentationConfig,
    width: usize,
    height: usize,
    rng: &mut dyn RngCore,
) -> AugmentParams {
    let crop_fraction = draw(rng, config.crop_range);
    let crop = window_for(crop_fraction, width, height, rng);
    let flip = config.flip_probability > 0.0 && rng.random_bool(config.flip_probability);
    let angle_deg = draw(rng, config.rotation_range_deg);
    let gamma = draw(rng, config.gamma_range);
    let contrast = draw(rng, config.contrast_range);
    AugmentParams {
        crop_fraction,
        crop,
        flip,
        angle_deg,
        gamma,
        contrast,
    }
}

fn extract(src: &Grid, w: &CropWindow) -> Grid {
    let mut data = Vec::with_capacity(w.width * w.height);
    for y in w.y..w.y + w.height {
        data.extend_from_slice(&src.row(y)[w.x..w.x + w.width]);
    }
    Grid::new(w.width, w.height, data).expect("window inside grid")
}

/// Crops the same window from both grids and scales it back up.
pub fn crop(image: &Grid, mask: &Grid, window: CropWindow) -> Result<(Grid, Grid)> {
    image.ensure_same_dims(mask)?;
    let (w, h) = image.dims();
    if window.width == 0
        || window.height == 0
        || window.x + window.width > w
        || window.y + window.height > h
    {
        return Err(Error::InvalidInput("crop window outside the image".into()));
    }
    if window == CropWindow::full(w, h) {
        return Ok((image.clone(), mask.clone()));
    }
    let img = resize_bilinear(&extract(image, &window), w, h);
    let msk = resize_nearest(&extract(mask, &window), w, h);
    Ok((img, msk))
}

pub fn random_crop(
    image: &Grid,
    mask: &Grid,
    fraction: f64,
    rng: &mut dyn RngCore,
) -> Result<(Grid, Grid)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::OutOfRange {
            what: "crop fraction",
            value: fraction,
        });
    }
    let window = window_for(fraction, image.width(), image.height(), rng);
    crop(image, mask, window)
}

fn flip_grid(g: &Grid) -> Grid {
    let mut data = Vec::with_capacity(g.len());
    for y in 0..g.height() {
        data.extend(g.row(y).iter().rev());
    }
    Grid::new(g.width(), g.height(), data).expect("same dims")
}

/// Mirrors both grids left to right.
pub fn horizontal_flip(image: &Grid, mask: &Grid) -> Result<(Grid, Grid)> {
    image.ensure_same_dims(mask)?;
    Ok((flip_grid(image), flip_grid(mask)))
}

/// Rotates both grids about their centre by `angle_deg` (counter-clockwise
/// as displayed); uncovered pixels become 0.
pub fn rotate(image: &Grid, mask: &Grid, angle_deg: f64) -> Result<(Grid, Grid)> {
    image.ensure_same_dims(mask)?;
    if angle_deg == 0.0 {
        return Ok((image.clone(), mask.clone()));
    }
    let (w, h) = image.dims();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = (Float::sin(theta), Float::cos(theta));
    let mut img = Vec::with_capacity(w * h);
    let mut msk = Vec::with_capacity(w * h);
    let src = image.as_slice();
    let src_mask = mask.as_slice();
    let (wi, hi) = (w as i64, h as i64);
    let tap = |xi: i64, yi: i64| -> f32 {
        if xi < 0 || yi < 0 || xi >= wi || yi >= hi {
            0.0
        } else {
            src[(yi * wi + xi) as usize]
        }
    };
    for v in 0..h {
        let dy = v as f64 + 0.5 - cy;
        // source coordinates of output pixel (0, v); each step in u adds (cos, sin)
        let dx0 = 0.5 - cx;
        let mut sx = cx + cos * dx0 - sin * dy;
        let mut sy = cy + sin * dx0 + cos * dy;
        for _ in 0..w {
            let fxf = Float::floor(sx);
            let fyf = Float::floor(sy);
            if fxf >= 0.0 && fyf >= 0.0 && fxf < w as f64 && fyf < h as f64 {
                msk.push(src_mask[fyf as usize * w + fxf as usize]);
            } else {
                msk.push(0.0);
            }
            let x = sx - 0.5;
            let y = sy - 0.5;
            let x0 = Float::floor(x);
            let y0 = Float::floor(y);
            let fx = (x - x0) as f32;
            let fy = (y - y0) as f32;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let value = if x0 >= 0 && y0 >= 0 && x0 + 1 < wi && y0 + 1 < hi {
                let i = (y0 * wi + x0) as usize;
                let top = src[i] + (src[i + 1] - src[i]) * fx;
                let bot = src[i + w] + (src[i + w + 1] - src[i + w]) * fx;
                top + (bot - top) * fy
            } else if x0 < -1 || y0 < -1 || x0 >= wi || y0 >= hi {
                0.0
            } else {
                let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
                let bot = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
                top * (1.0 - fy) + bot * fy
            };
            img.push(value.clamp(0.0, 1.0));
            sx += cos;
            sy += sin;
        }
    }
    Ok((Grid::new(w, h, img)?, Grid::new(w, h, msk)?))
}

pub fn gamma_adjust(image: &Grid, gamma: f64) -> Grid {
    if gamma == 1.0 {
        return image.clone();
    }
    let g = gamma as f32;
    image.map(|v| Float::powf(v.clamp(0.0, 1.0), g))
}

/// Linear contrast about the image mean, clamped to `[0, 1]`.
pub fn contrast_adjust(image: &Grid, factor: f64) -> Grid {
    if factor == 1.0 {
        return image.clone();
    }
    let mean = image.mean();
    image.map(|v| (mean + factor * (v as f64 - mean)).clamp(0.0, 1.0) as f32)
}

/// Applies drawn parameters in the fixed order crop, flip, rotation, gamma,
/// contrast.
pub fn apply_params(image: &Grid, mask: &Grid, params: &AugmentParams) -> Result<(Grid, Grid)> {
    let (mut img, mut msk) = crop(image, mask, params.crop)?;
    if params.flip {
        (img, msk) = horizontal_flip(&img, &msk)?;
    }
    (img, msk) = rotate(&img, &msk, params.angle_deg)?;
    img = gamma_adjust(&img, params.gamma);
    img = contrast_adjust(&img, params.contrast);
    Ok((img, msk))
}

pub fn augment(
    image: &Grid,
    mask: &Grid,
    config: &AugmentationConfig,
    rng: &mut dyn RngCore,
) -> Result<(Grid, Grid, AugmentParams)> {
    let params = sample_params(config, image.width(), image.height(), rng);
    let (img, msk) = apply_params(image, mask, &params)?;
    Ok((img, msk, params))
}
