//! Procedural shape images with exact ground-truth masks.

use alloc::vec::Vec;
use num_traits::Float;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::seed::rng_for;
use crate::types::CANONICAL_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Disks,
    Rectangles,
    Blobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Plain,
    Textured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_images: usize,
    pub shape_family: ShapeFamily,
    pub background: Background,
    /// Standard deviation of additive Gaussian noise.
    pub noise_level: f64,
    /// Shape radius (half-side for rectangles) in canonical pixels.
    pub size_range: (f64, f64),
    /// Fraction of images rendered without any target shape.
    pub empty_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_images: 64,
            shape_family: ShapeFamily::Disks,
            background: Background::Plain,
            noise_level: 0.05,
            size_range: (24.0, 64.0),
            empty_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::InvalidConfig("n_images must be at least 1".into()));
        }
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi * 2.0 < CANONICAL_SIZE as f64 * 0.6) {
            return Err(Error::InvalidConfig(
                "size_range must be ordered, positive and fit the canvas".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.empty_fraction) {
            return Err(Error::InvalidConfig(
                "empty_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_level must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Rendered image and its exact binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: Grid,
    pub mask: Grid,
}

type Circle = (f64, f64, f64);

fn uniform(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn shape_mask(spec: &SynthSpec, rng: &mut dyn RngCore) -> Grid {
    let s = CANONICAL_SIZE as f64;
    let (lo, hi) = spec.size_range;
    match spec.shape_family {
        ShapeFamily::Disks => {
            let r = uniform(rng, lo, hi);
            let cx = uniform(rng, r + 2.0, s - r - 2.0);
            let cy = uniform(rng, r + 2.0, s - r - 2.0);
            rasterize(&[(cx, cy, r)])
        }
        ShapeFamily::Rectangles => {
            let hw = uniform(rng, lo, hi);
            let hh = uniform(rng, lo, hi);
            let cx = uniform(rng, hw + 2.0, s - hw - 2.0);
            let cy = uniform(rng, hh + 2.0, s - hh - 2.0);
            Grid::from_fn(CANONICAL_SIZE, CANONICAL_SIZE, |x, y| {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                ((px - cx).abs() <= hw && (py - cy).abs() <= hh) as u8 as f32
            })
        }
        ShapeFamily::Blobs => {
            let r = uniform(rng, lo, hi);
            let reach = r * 1.6;
            let cx = uniform(rng, reach + 2.0, s - reach - 2.0);
            let cy = uniform(rng, reach + 2.0, s - reach - 2.0);
            let mut circles = alloc::vec![(cx, cy, r)];
            for _ in 0..2 {
                let a = uniform(rng, 0.0, core::f64::consts::TAU);
                let d = r * uniform(rng, 0.4, 0.9);
                let rr = r * uniform(rng, 0.5, 0.7);
                circles.push((cx + d * Float::cos(a), cy + d * Float::sin(a), rr));
            }
            rasterize(&circles)
        }
    }
}

fn rasterize(circles: &[Circle]) -> Grid {
    Grid::from_fn(CANONICAL_SIZE, CANONICAL_SIZE, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        circles
            .iter()
            .any(|&(cx, cy, r)| (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r)
            as u8 as f32
    })
}

fn background(spec: &SynthSpec, rng: &mut dyn RngCore) -> Grid {
    let base = uniform(rng, 0.12, 0.3) as f32;
    match spec.background {
        Background::Plain => Grid::filled(CANONICAL_SIZE, CANONICAL_SIZE, base),
        Background::Textured => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    let a = uniform(rng, 0.0, core::f64::consts::PI);
                    let k = uniform(rng, 0.02, 0.12);
                    (
                        k * Float::cos(a),
                        k * Float::sin(a),
                        uniform(rng, 0.0, 6.3),
                        uniform(rng, 0.02, 0.05),
                    )
                })
                .collect();
            Grid::from_fn(CANONICAL_SIZE, CANONICAL_SIZE, |x, y| {
                let t: f64 = waves
                    .iter()
                    .map(|&(kx, ky, ph, amp)| amp * Float::sin(kx * x as f64 + ky * y as f64 + ph))
                    .sum();
                base + t as f32
            })
        }
    }
}

/// Renders sample `index`; samples are independent of each other and of
/// `n_images`.
pub fn render(spec: &SynthSpec, index: usize) -> SynthSample {
    let mut rng = rng_for(spec.seed, &[index as u64]);
    let mut mask = shape_mask(spec, &mut rng);
    if spec.empty_fraction > 0.0 && rng.random_bool(spec.empty_fraction) {
        mask = Grid::filled(CANONICAL_SIZE, CANONICAL_SIZE, 0.0);
    }
    let bg = background(spec, &mut rng);
    let contrast = uniform(&mut rng, 0.3, 0.45) as f32;
    let noise = Normal::new(0.0f32, spec.noise_level.max(0.0) as f32).expect("finite std");
    let data = bg
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(&b, &m)| {
            let n = if spec.noise_level > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            (b + m * contrast + n).clamp(0.0, 1.0)
        })
        .collect();
    SynthSample {
        image: Grid::new(CANONICAL_SIZE, CANONICAL_SIZE, data).expect("canonical dims"),
        mask,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    Ok((0..spec.n_images).map(|i| render(spec, i)).collect())
}
