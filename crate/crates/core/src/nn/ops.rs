//! Channel-major tensor kernels. Convolutions lower to im2col + SGEMM.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::grid::Grid;
use crate::resample::{linear_taps, Taps};

/// `c x h x w` activations stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers size `a`, `b` and `c` to cover every strided access.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unrolls `k x k` neighbourhoods (zero padded, "same" output size).
pub fn im2col(x: &Tensor, k: usize, dilation: usize) -> Vec<f32> {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let half = (k / 2) as isize;
    let mut col = vec![0.0f32; x.c * k * k * hw];
    for ci in 0..x.c {
        let src = x.channel(ci);
        for ky in 0..k {
            let dy = (ky as isize - half) * dilation as isize;
            for kx in 0..k {
                let dx = (kx as isize - half) * dilation as isize;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s = sy as usize * w;
                    let d = y * w;
                    let sx0 = (x_lo as isize + dx) as usize;
                    dst[d + x_lo..d + x_hi].copy_from_slice(&src[s + sx0..s + sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, dilation: usize) -> Tensor {
    let hw = h * w;
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = (ky as isize - half) * dilation as isize;
            for kx in 0..k {
                let dx = (kx as isize - half) * dilation as isize;
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s = y * w;
                    let d = sy as usize * w;
                    let dx0 = (x_lo as isize + dx) as usize;
                    let n = x_hi - x_lo;
                    for (o, i) in dst[d + dx0..d + dx0 + n]
                        .iter_mut()
                        .zip(&src[s + x_lo..s + x_hi])
                    {
                        *o += *i;
                    }
                }
            }
        }
    }
    out
}

/// Lowered input kept for the backward pass; 1x1 convolutions reuse the
/// input itself.
pub enum Lowered {
    Col(Vec<f32>),
    Identity,
}

pub fn conv_forward(
    x: &Tensor,
    weight: &[f32],
    bias: &[f32],
    out_c: usize,
    k: usize,
    dilation: usize,
) -> (Tensor, Lowered) {
    let hw = x.plane();
    let kk = x.c * k * k;
    debug_assert_eq!(weight.len(), out_c * kk);
    let lowered = if k == 1 {
        Lowered::Identity
    } else {
        Lowered::Col(im2col(x, k, dilation))
    };
    let b: &[f32] = match &lowered {
        Lowered::Col(col) => col,
        Lowered::Identity => &x.data,
    };
    let mut out = Tensor::zeros(out_c, x.h, x.w);
    for (o, &bv) in bias.iter().enumerate() {
        out.data[o * hw..(o + 1) * hw].fill(bv);
    }
    sgemm(
        out_c,
        kk,
        hw,
        weight,
        kk as isize,
        1,
        b,
        hw as isize,
        1,
        1.0,
        &mut out.data,
    );
    (out, lowered)
}

/// Accumulates weight/bias gradients and returns the input gradient when
/// `need_input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &Tensor,
    lowered: &Lowered,
    weight: &[f32],
    grad_out: &Tensor,
    k: usize,
    dilation: usize,
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
    need_input_grad: bool,
) -> Option<Tensor> {
    let hw = x.plane();
    let kk = x.c * k * k;
    let out_c = grad_out.c;
    let col: &[f32] = match lowered {
        Lowered::Col(col) => col,
        Lowered::Identity => &x.data,
    };
    // dW += dY * col^T
    sgemm(
        out_c,
        hw,
        kk,
        &grad_out.data,
        hw as isize,
        1,
        col,
        1,
        hw as isize,
        1.0,
        grad_weight,
    );
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_out.data[o * hw..(o + 1) * hw].iter().sum::<f32>();
    }
    if !need_input_grad {
        return None;
    }
    // dcol = W^T * dY
    let mut gcol = vec![0.0f32; kk * hw];
    sgemm(
        kk,
        out_c,
        hw,
        weight,
        1,
        kk as isize,
        &grad_out.data,
        hw as isize,
        1,
        0.0,
        &mut gcol,
    );
    if k == 1 {
        Some(Tensor {
            c: x.c,
            h: x.h,
            w: x.w,
            data: gcol,
        })
    } else {
        Some(col2im(&gcol, x.c, x.h, x.w, k, dilation))
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeros gradient entries where the ReLU output was clipped.
pub fn relu_backward_inplace(grad: &mut Tensor, output: &Tensor) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling; returns the flat argmax of each window.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, oh, ow);
    let mut arg = vec![0u32; x.c * oh * ow];
    for c in 0..x.c {
        let src = x.channel(c);
        for y in 0..oh {
            for xo in 0..ow {
                let base = 2 * y * x.w + 2 * xo;
                let cand = [base, base + 1, base + x.w, base + x.w + 1];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = (c * oh + y) * ow + xo;
                out.data[o] = src[best];
                arg[o] = (c * x.plane() + best) as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(grad_out: &Tensor, arg: &[u32], c: usize, h: usize, w: usize) -> Tensor {
    let mut g = Tensor::zeros(c, h, w);
    for (&i, &v) in arg.iter().zip(&grad_out.data) {
        g.data[i as usize] += v;
    }
    g
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = x.channel(c);
        for y in 0..oh {
            let srow = &src[(y / 2) * x.w..(y / 2 + 1) * x.w];
            let drow = &mut out.data[(c * oh + y) * ow..(c * oh + y + 1) * ow];
            for (xo, d) in drow.iter_mut().enumerate() {
                *d = srow[xo / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut g = Tensor::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                g.data[(c * h + y / 2) * w + x / 2] +=
                    grad_out.data[(c * grad_out.h + y) * grad_out.w + x];
            }
        }
    }
    g
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub fn split(grad: &Tensor, a_c: usize) -> (Tensor, Tensor) {
    let at = a_c * grad.plane();
    (
        Tensor {
            c: a_c,
            h: grad.h,
            w: grad.w,
            data: grad.data[..at].to_vec(),
        },
        Tensor {
            c: grad.c - a_c,
            h: grad.h,
            w: grad.w,
            data: grad.data[at..].to_vec(),
        },
    )
}

/// Block-average downsampling of a grid by an integer factor, centred on 0.
pub fn stem(image: &Grid, factor: usize) -> Tensor {
    let (h, w) = (image.height() / factor, image.width() / factor);
    let mut out = Tensor::zeros(1, h, w);
    let norm = 1.0 / (factor * factor) as f32;
    for y in 0..h {
        for fy in 0..factor {
            let row = image.row(y * factor + fy);
            for x in 0..w {
                out.data[y * w + x] += row[x * factor..(x + 1) * factor].iter().sum::<f32>();
            }
        }
    }
    for v in &mut out.data {
        *v = *v * norm - 0.5;
    }
    out
}

/// Separable bilinear upsampling of a single-channel map.
pub struct Upsampler {
    xs: Vec<Taps>,
    ys: Vec<Taps>,
    src_w: usize,
    src_h: usize,
}

impl Upsampler {
    pub fn new(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Self {
        Self {
            xs: linear_taps(src_w, dst_w),
            ys: linear_taps(src_h, dst_h),
            src_w,
            src_h,
        }
    }

    pub fn forward(&self, src: &[f32]) -> Vec<f32> {
        let dw = self.xs.len();
        let mut tmp = vec![0.0f32; self.src_h * dw];
        for y in 0..self.src_h {
            let row = &src[y * self.src_w..(y + 1) * self.src_w];
            for (u, t) in self.xs.iter().enumerate() {
                tmp[y * dw + u] = row[t.lo] * (1.0 - t.w_hi) + row[t.hi] * t.w_hi;
            }
        }
        let mut out = vec![0.0f32; self.ys.len() * dw];
        for (v, t) in self.ys.iter().enumerate() {
            let (a, b) = (
                &tmp[t.lo * dw..(t.lo + 1) * dw],
                &tmp[t.hi * dw..(t.hi + 1) * dw],
            );
            for ((o, &p), &q) in out[v * dw..(v + 1) * dw].iter_mut().zip(a).zip(b) {
                *o = p * (1.0 - t.w_hi) + q * t.w_hi;
            }
        }
        out
    }

    pub fn backward(&self, grad: &[f32]) -> Vec<f32> {
        let dw = self.xs.len();
        let mut tmp = vec![0.0f32; self.src_h * dw];
        for (v, t) in self.ys.iter().enumerate() {
            let g = &grad[v * dw..(v + 1) * dw];
            for (u, &gv) in g.iter().enumerate() {
                tmp[t.lo * dw + u] += gv * (1.0 - t.w_hi);
                tmp[t.hi * dw + u] += gv * t.w_hi;
            }
        }
        let mut out = vec![0.0f32; self.src_h * self.src_w];
        for y in 0..self.src_h {
            let row = &tmp[y * dw..(y + 1) * dw];
            let dst = &mut out[y * self.src_w..(y + 1) * self.src_w];
            for (t, &gv) in self.xs.iter().zip(row) {
                dst[t.lo] += gv * (1.0 - t.w_hi);
                dst[t.hi] += gv * t.w_hi;
            }
        }
        out
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(c: usize, h: usize, w: usize, seed: u32) -> Tensor {
        let mut s = seed;
        let data = (0..c * h * w)
            .map(|_| {
                s = s.wrapping_mul(1_103_515_245).wrapping_add(12345);
                ((s >> 8) as f32 / (1u32 << 24) as f32) - 0.5
            })
            .collect();
        Tensor { c, h, w, data }
    }

    /// Direct convolution without im2col.
    fn naive_conv(x: &Tensor, wt: &[f32], b: &[f32], oc: usize, k: usize, d: usize) -> Tensor {
        let half = (k / 2) as isize;
        let mut out = Tensor::zeros(oc, x.h, x.w);
        for (o, &bias) in b.iter().enumerate().take(oc) {
            for y in 0..x.h as isize {
                for xx in 0..x.w as isize {
                    let mut acc = bias;
                    for ci in 0..x.c {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let sy = y + (ky - half) * d as isize;
                                let sx = xx + (kx - half) * d as isize;
                                if sy >= 0 && sx >= 0 && sy < x.h as isize && sx < x.w as isize {
                                    let wi = ((o * x.c + ci) * k + ky as usize) * k + kx as usize;
                                    acc += wt[wi]
                                        * x.data[(ci * x.h + sy as usize) * x.w + sx as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * x.h + y as usize) * x.w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        for (k, d) in [(3, 1), (3, 2), (3, 4), (1, 1)] {
            let x = rand_tensor(3, 9, 11, 7);
            let wt = rand_tensor(1, 1, 4 * 3 * k * k, 3).data;
            let b = [0.1, -0.2, 0.3, 0.0];
            let (y, _) = conv_forward(&x, &wt, &b, 4, k, d);
            let r = naive_conv(&x, &wt, &b, 4, k, d);
            for (a, e) in y.data.iter().zip(&r.data) {
                assert!((a - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is linear in x and w; check both gradients against it
        let (k, d) = (3, 2);
        let x = rand_tensor(2, 7, 8, 1);
        let wt = rand_tensor(1, 1, 3 * 2 * 9, 2).data;
        let b = [0.0; 3];
        let g = rand_tensor(3, 7, 8, 5);
        let (y, low) = conv_forward(&x, &wt, &b, 3, k, d);
        let inner: f32 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; 3];
        let gx = conv_backward(&x, &low, &wt, &g, k, d, &mut gw, &mut gb, true).unwrap();
        let via_x: f32 = gx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let via_w: f32 = gw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!((inner - via_x).abs() < 1e-4);
        assert!((inner - via_w).abs() < 1e-4);
    }

    #[test]
    fn upsampler_backward_is_adjoint() {
        let up = Upsampler::new(6, 5, 24, 20);
        let x = rand_tensor(1, 5, 6, 11).data;
        let g = rand_tensor(1, 20, 24, 13).data;
        let y = up.forward(&x);
        let lhs: f32 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let gx = up.backward(&g);
        let rhs: f32 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let x = rand_tensor(2, 6, 8, 17);
        let u = upsample2(&x);
        let g = rand_tensor(2, 12, 16, 19);
        let lhs: f32 = u.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f32 = upsample2_backward(&g)
            .data
            .iter()
            .zip(&x.data)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4);

        let (p, arg) = maxpool2(&x);
        assert_eq!((p.h, p.w), (3, 4));
        let gp = rand_tensor(2, 3, 4, 23);
        let gx = maxpool2_backward(&gp, &arg, 2, 6, 8);
        let total: f32 = gx.data.iter().sum();
        assert!((total - gp.data.iter().sum::<f32>()).abs() < 1e-5);
    }
}
