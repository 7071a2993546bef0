//! Half-pixel-centred resampling used by preprocessing, cropping and the
//! model output head.

use alloc::vec::Vec;
use num_traits::Float;

use crate::grid::Grid;

/// Two-tap linear interpolation weights for one output coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taps {
    pub lo: usize,
    pub hi: usize,
    pub w_hi: f32,
}

/// Linear taps mapping `dst_len` output samples onto `src_len` inputs,
/// clamping at the borders.
pub fn linear_taps(src_len: usize, dst_len: usize) -> Vec<Taps> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (Float::floor(pos) as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            let frac = (pos - lo as f64).clamp(0.0, 1.0) as f32;
            Taps {
                lo,
                hi,
                w_hi: if hi == lo { 0.0 } else { frac },
            }
        })
        .collect()
}

/// Nearest source index for each output coordinate.
pub fn nearest_index(src_len: usize, dst_len: usize) -> Vec<usize> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| (Float::floor((i as f64 + 0.5) * scale) as usize).min(src_len - 1))
        .collect()
}

pub fn resize_bilinear(src: &Grid, width: usize, height: usize) -> Grid {
    if src.dims() == (width, height) {
        return src.clone();
    }
    let xs = linear_taps(src.width(), width);
    let ys = linear_taps(src.height(), height);
    let mut out = Vec::with_capacity(width * height);
    for ty in &ys {
        let r0 = src.row(ty.lo);
        let r1 = src.row(ty.hi);
        for tx in &xs {
            let top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * tx.w_hi;
            let bot = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * tx.w_hi;
            out.push(top + (bot - top) * ty.w_hi);
        }
    }
    Grid::new(width, height, out).expect("dimensions are consistent")
}

pub fn resize_nearest(src: &Grid, width: usize, height: usize) -> Grid {
    if src.dims() == (width, height) {
        return src.clone();
    }
    let xs = nearest_index(src.width(), width);
    let ys = nearest_index(src.height(), height);
    let mut out = Vec::with_capacity(width * height);
    for &sy in &ys {
        let row = src.row(sy);
        out.extend(xs.iter().map(|&sx| row[sx]));
    }
    Grid::new(width, height, out).expect("dimensions are consistent")
}
