//! Layer kernels and their exact backward passes.
//!
//! Weight layouts:
//! * convolution: `[out, in, k, k]`, cross-correlation, zero "same" padding, stride 1
//! * transposed convolution: `[in, out, k, k]`, stride 2, padding `(k - 2) / 2`,
//!   so the output is exactly twice the input in each spatial direction

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Argmax positions of a 2x2 stride-2 max pool.
///
/// `offsets[i]` is the row-major position (`0..4`) of the winning cell inside
/// the window of pooled element `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolIndices {
    input_shape: [usize; 4],
    offsets: Vec<u8>,
}

impl PoolIndices {
    pub fn new(input_shape: [usize; 4], offsets: Vec<u8>) -> Result<Self> {
        let [n, c, h, w] = input_shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!("pooled extent {h}x{w} is not even")));
        }
        if offsets.len() != n * c * (h / 2) * (w / 2) {
            return Err(Error::mismatch(n * c * (h / 2) * (w / 2), offsets.len()));
        }
        if offsets.iter().any(|&o| o > 3) {
            return Err(Error::invalid("pool offset outside its 2x2 window"));
        }
        Ok(PoolIndices { input_shape, offsets })
    }

    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn pooled_shape(&self) -> [usize; 4] {
        let [n, c, h, w] = self.input_shape;
        [n, c, h / 2, w / 2]
    }

    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }
}

fn check_channels(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::mismatch(
            format!("{what} with {expected} input channels"),
            format!("{actual} channels"),
        ));
    }
    Ok(())
}

/// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
/// `ta` / `tb` read the stored matrix transposed (`a` stored `k x m`, `b` stored `n x k`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the asserted extents.
    unsafe {
        matrixmultiply::dgemm(
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

/// Patch matrix of one image for a "same" convolution: row `(c, ky, kx)`,
/// column `y * w + x` holds `x[c][y + ky - p][x + kx - p]` (0 outside).
fn im2col(img: &[f64], c: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x0 = p.saturating_sub(kx);
                let x1 = (w + p).saturating_sub(kx).min(w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < p || sy - p >= h || x0 >= x1 {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(sy - p) * w..(sy - p + 1) * w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    dst[x0..x1].copy_from_slice(&src[x0 + kx - p..x1 + kx - p]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch rows back into the image.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, img: &mut [f64]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x0 = p.saturating_sub(kx);
                let x1 = (w + p).saturating_sub(kx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < p || sy - p >= h {
                        continue;
                    }
                    let dst = &mut plane[(sy - p) * w + x0 + kx - p..(sy - p) * w + x1 + kx - p];
                    for (a, b) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

fn conv_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, ci, kh, kw) = w.dims4()?;
    check_channels("convolution", ci, c)?;
    if kh != kw || kh % 2 == 0 {
        return Err(Error::invalid(format!("convolution kernel must be odd and square, got {kh}x{kw}")));
    }
    Ok((n, c, h, wd, o, kh))
}

pub fn conv_forward(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    let (n, c, h, wd, o, k) = conv_dims(x, w)?;
    if b.len() != o {
        return Err(Error::mismatch(format!("{o} biases"), b.len()));
    }
    let (hw, ck) = (h * wd, c * k * k);
    let mut y = Tensor::zeros(&[n, o, h, wd]);
    let mut col = vec![0.0; ck * hw];
    for ni in 0..n {
        im2col(&x.data()[ni * c * hw..(ni + 1) * c * hw], c, h, wd, k, &mut col);
        let out = &mut y.data_mut()[ni * o * hw..(ni + 1) * o * hw];
        for (plane, &bias) in out.chunks_exact_mut(hw).zip(b) {
            plane.fill(bias);
        }
        gemm(o, ck, hw, w.data(), false, &col, false, 1.0, out);
    }
    Ok(y)
}

/// Returns `(dx, dw, db)` for the convolution `conv_forward(x, w, _)`.
pub fn conv_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (n, c, h, wd, o, k) = conv_dims(x, w)?;
    if dy.shape() != [n, o, h, wd] {
        return Err(Error::mismatch(format!("{:?}", [n, o, h, wd]), format!("{:?}", dy.shape())));
    }
    let (hw, ck) = (h * wd, c * k * k);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![0.0; o];
    let mut col = vec![0.0; ck * hw];
    for ni in 0..n {
        let g = &dy.data()[ni * o * hw..(ni + 1) * o * hw];
        for (acc, plane) in db.iter_mut().zip(g.chunks_exact(hw)) {
            *acc += plane.iter().sum::<f64>();
        }
        im2col(&x.data()[ni * c * hw..(ni + 1) * c * hw], c, h, wd, k, &mut col);
        gemm(o, hw, ck, g, false, &col, true, 1.0, dw.data_mut());
        gemm(ck, o, hw, w.data(), true, g, false, 0.0, &mut col);
        col2im(&col, c, h, wd, k, &mut dx.data_mut()[ni * c * hw..(ni + 1) * c * hw]);
    }
    Ok((dx, dw, db))
}

/// Adjoint of a bias-free [`conv_forward`]: maps `[n, out, h, w]` back to `[n, in, h, w]`.
pub fn conv_transpose(dy: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, o, h, wd) = dy.dims4()?;
    let (wo, c, k, kw) = w.dims4()?;
    check_channels("transposed convolution", wo, o)?;
    if k != kw || k % 2 == 0 {
        return Err(Error::invalid(format!("convolution kernel must be odd and square, got {k}x{kw}")));
    }
    let (hw, ck) = (h * wd, c * k * k);
    let mut dx = Tensor::zeros(&[n, c, h, wd]);
    let mut col = vec![0.0; ck * hw];
    for ni in 0..n {
        gemm(ck, o, hw, w.data(), true, &dy.data()[ni * o * hw..(ni + 1) * o * hw], false, 0.0, &mut col);
        col2im(&col, c, h, wd, k, &mut dx.data_mut()[ni * c * hw..(ni + 1) * c * hw]);
    }
    Ok(dx)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `dy` through where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::mismatch(format!("{:?}", x.shape()), format!("{:?}", dy.shape())));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// 2x2 stride-2 max pool. Ties go to the first cell in row-major window order.
pub fn maxpool_forward(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("max pool needs even extents, got {h}x{w}")));
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, ph, pw]);
    let mut offsets = Vec::with_capacity(n * c * ph * pw);
    for ni in 0..n {
        for ci in 0..c {
            let inp = x.plane(ni, ci);
            let out = y.plane_mut(ni, ci);
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = 0u8;
                    let mut best_v = inp[(2 * py) * w + 2 * px];
                    for off in 1..4u8 {
                        let v = inp[(2 * py + (off as usize >> 1)) * w + 2 * px + (off as usize & 1)];
                        if v > best_v {
                            best_v = v;
                            best = off;
                        }
                    }
                    out[py * pw + px] = best_v;
                    offsets.push(best);
                }
            }
        }
    }
    let idx = PoolIndices::new([n, c, h, w], offsets)?;
    Ok((y, idx))
}

fn check_pooled(y: &Tensor, idx: &PoolIndices) -> Result<()> {
    if y.shape() != idx.pooled_shape() {
        return Err(Error::mismatch(
            format!("pooled shape {:?}", idx.pooled_shape()),
            format!("{:?}", y.shape()),
        ));
    }
    Ok(())
}

/// Scatters each pooled value back to its recorded argmax; everything else is 0.
pub fn unpool_forward(y: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    check_pooled(y, idx)?;
    let [_, _, _, w] = idx.input_shape;
    let mut x = Tensor::zeros(&idx.input_shape);
    let pw = w / 2;
    let plane = y.shape()[2] * pw;
    for (i, (&v, &off)) in y.data().iter().zip(&idx.offsets).enumerate() {
        let (nc, rem) = (i / plane, i % plane);
        let (py, px) = (rem / pw, rem % pw);
        let (oy, ox) = (off as usize >> 1, off as usize & 1);
        let hw = 4 * plane;
        x.data_mut()[nc * hw + (2 * py + oy) * w + 2 * px + ox] = v;
    }
    Ok(x)
}

/// Adjoint of [`unpool_forward`]: reads the gradient back at each argmax.
pub fn unpool_backward(dx: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    if dx.shape() != idx.input_shape {
        return Err(Error::mismatch(format!("{:?}", idx.input_shape), format!("{:?}", dx.shape())));
    }
    let [_, _, _, w] = idx.input_shape;
    let pooled = idx.pooled_shape();
    let pw = w / 2;
    let plane = pooled[2] * pw;
    let data = idx
        .offsets
        .iter()
        .enumerate()
        .map(|(i, &off)| {
            let (nc, rem) = (i / plane, i % plane);
            let (py, px) = (rem / pw, rem % pw);
            dx.data()[nc * 4 * plane + (2 * py + (off as usize >> 1)) * w + 2 * px + (off as usize & 1)]
        })
        .collect();
    Tensor::from_vec(&pooled, data)
}

/// Max pool backward is unpooling of the output gradient.
pub fn maxpool_backward(dy: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    unpool_forward(dy, idx)
}

fn deconv_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, wd) = x.dims4()?;
    let (ci, o, kh, kw) = w.dims4()?;
    check_channels("transposed convolution", ci, c)?;
    if kh != kw || kh < 2 || kh % 2 != 0 {
        return Err(Error::invalid(format!(
            "transposed convolution kernel must be even and square, got {kh}x{kw}"
        )));
    }
    Ok((n, c, h, wd, o, kh))
}

/// Output cell `(2i + ky - p, 2j + kx - p)` hit by tap `(ky, kx)` of input cell `(i, j)`, if inside.
#[inline]
fn deconv_target(i: usize, ky: usize, p: usize, out: usize) -> Option<usize> {
    (2 * i + ky).checked_sub(p).filter(|&v| v < out)
}

/// Scatters a `[o * k * k, h * w]` tap matrix onto a `[o, 2h, 2w]` image.
fn deconv_col2im(col: &[f64], o: usize, h: usize, w: usize, k: usize, img: &mut [f64]) {
    let p = (k - 2) / 2;
    let (oh, ow) = (2 * h, 2 * w);
    for oi in 0..o {
        let plane = &mut img[oi * oh * ow..(oi + 1) * oh * ow];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((oi * k + ky) * k + kx) * h * w..][..h * w];
                for i in 0..h {
                    let Some(yy) = deconv_target(i, ky, p, oh) else { continue };
                    for j in 0..w {
                        if let Some(xx) = deconv_target(j, kx, p, ow) {
                            plane[yy * ow + xx] += row[i * w + j];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`deconv_col2im`]: gathers the tap matrix from a `[o, 2h, 2w]` image.
fn deconv_im2col(img: &[f64], o: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let p = (k - 2) / 2;
    let (oh, ow) = (2 * h, 2 * w);
    for oi in 0..o {
        let plane = &img[oi * oh * ow..(oi + 1) * oh * ow];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((oi * k + ky) * k + kx) * h * w..][..h * w];
                for i in 0..h {
                    let yy = deconv_target(i, ky, p, oh);
                    for j in 0..w {
                        row[i * w + j] = match (yy, deconv_target(j, kx, p, ow)) {
                            (Some(yy), Some(xx)) => plane[yy * ow + xx],
                            _ => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Stride-2 transposed convolution: `out[o][2i + ky - p][2j + kx - p] += x[c][i][j] * w[c][o][ky][kx]`.
pub fn deconv_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, c, h, wd, o, k) = deconv_dims(x, w)?;
    let (hw, ok) = (h * wd, o * k * k);
    let mut y = Tensor::zeros(&[n, o, 2 * h, 2 * wd]);
    let mut col = vec![0.0; ok * hw];
    for ni in 0..n {
        gemm(ok, c, hw, w.data(), true, &x.data()[ni * c * hw..(ni + 1) * c * hw], false, 0.0, &mut col);
        deconv_col2im(&col, o, h, wd, k, &mut y.data_mut()[ni * o * 4 * hw..(ni + 1) * o * 4 * hw]);
    }
    Ok(y)
}

/// Returns `(dx, dw)` for `deconv_forward(x, w)`.
pub fn deconv_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c, h, wd, o, k) = deconv_dims(x, w)?;
    let (oh, ow) = (2 * h, 2 * wd);
    if dy.shape() != [n, o, oh, ow] {
        return Err(Error::mismatch(format!("{:?}", [n, o, oh, ow]), format!("{:?}", dy.shape())));
    }
    let (hw, ok) = (h * wd, o * k * k);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut col = vec![0.0; ok * hw];
    for ni in 0..n {
        deconv_im2col(&dy.data()[ni * o * 4 * hw..(ni + 1) * o * 4 * hw], o, h, wd, k, &mut col);
        let xs = &x.data()[ni * c * hw..(ni + 1) * c * hw];
        gemm(c, hw, ok, xs, false, &col, true, 1.0, dw.data_mut());
        gemm(c, ok, hw, w.data(), false, &col, false, 0.0, &mut dx.data_mut()[ni * c * hw..(ni + 1) * c * hw]);
    }
    Ok((dx, dw))
}

/// Softmax over the channel axis at every pixel, max-subtracted.
pub fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    let src = x.data();
    let dst = y.data_mut();
    for ni in 0..n {
        let base = ni * c * hw;
        for pix in 0..hw {
            let at = |ch: usize| base + ch * hw + pix;
            let m = (0..c).map(|ch| src[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (src[at(ch)] - m).exp();
                dst[at(ch)] = e;
                sum += e;
            }
            for ch in 0..c {
                dst[at(ch)] /= sum;
            }
        }
    }
    Ok(y)
}

/// Given softmax output `p` and `dL/dp`, returns `dL/dz = p * (g - sum(p * g))`.
pub fn softmax_backward(p: &Tensor, dp: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = p.dims4()?;
    if dp.shape() != p.shape() {
        return Err(Error::mismatch(format!("{:?}", p.shape()), format!("{:?}", dp.shape())));
    }
    let hw = h * w;
    let mut dz = Tensor::zeros(p.shape());
    for ni in 0..n {
        let base = ni * c * hw;
        for pix in 0..hw {
            let at = |ch: usize| base + ch * hw + pix;
            let dot: f64 = (0..c).map(|ch| p.data()[at(ch)] * dp.data()[at(ch)]).sum();
            for ch in 0..c {
                dz.data_mut()[at(ch)] = p.data()[at(ch)] * (dp.data()[at(ch)] - dot);
            }
        }
    }
    Ok(dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    /// Textbook six-loop same-padded cross-correlation.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, k, _) = w.dims4().unwrap();
        let p = (k / 2) as i64;
        let mut y = Tensor::zeros(&[n, o, h, wd]);
        for ni in 0..n {
            for oi in 0..o {
                for yy in 0..h {
                    for xx in 0..wd {
                        let mut acc = b[oi];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = yy as i64 + ky as i64 - p;
                                    let sx = xx as i64 + kx as i64 - p;
                                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < wd as i64 {
                                        acc += w.at4(oi, ci, ky, kx) * x.at4(ni, ci, sy as usize, sx as usize);
                                    }
                                }
                            }
                        }
                        y.data_mut()[((ni * o + oi) * h + yy) * wd + xx] = acc;
                    }
                }
            }
        }
        y
    }

    /// Gather formulation: every output pixel collects the inputs that land on it.
    fn naive_deconv(x: &Tensor, w: &Tensor) -> Tensor {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (_, o, k, _) = w.dims4().unwrap();
        let p = (k as i64 - 2) / 2;
        let (oh, ow) = (2 * h, 2 * wd);
        let mut y = Tensor::zeros(&[n, o, oh, ow]);
        for ni in 0..n {
            for oi in 0..o {
                for yy in 0..oh as i64 {
                    for xx in 0..ow as i64 {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k as i64 {
                                for kx in 0..k as i64 {
                                    let (ty, tx) = (yy + p - ky, xx + p - kx);
                                    if ty < 0 || tx < 0 || ty % 2 != 0 || tx % 2 != 0 {
                                        continue;
                                    }
                                    let (i, j) = ((ty / 2) as usize, (tx / 2) as usize);
                                    if i < h && j < wd {
                                        acc += x.at4(ni, ci, i, j) * w.at4(ci, oi, ky as usize, kx as usize);
                                    }
                                }
                            }
                        }
                        y.data_mut()[((ni * o + oi) * oh + yy as usize) * ow + xx as usize] = acc;
                    }
                }
            }
        }
        y
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn conv_scalar_kernel() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[2.0]);
        let y = conv_forward(&x, &w, &[0.0]).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 1, 5, 4], &mut rng);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = t(&[1, 1, 3, 3], &k);
        assert_eq!(conv_forward(&x, &w, &[0.0]).unwrap(), x);
    }

    #[test]
    fn conv_transpose_is_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[2, 3, 5, 6], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let dy = random(&[2, 4, 5, 6], &mut rng);
        let (dx, _, _) = conv_backward(&x, &w, &dy).unwrap();
        assert_close(&conv_transpose(&dy, &w).unwrap(), &dx, 1e-12);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[2, 3, 4, 4], &mut rng);
        let w = random(&[2, 3, 3, 3], &mut rng);
        let b = [0.3, -0.7];
        assert_close(&conv_forward(&x, &w, &b).unwrap(), &naive_conv(&x, &w, &b), 1e-12);
        let w5 = random(&[1, 3, 5, 5], &mut rng);
        assert_close(&conv_forward(&x, &w5, &[0.1]).unwrap(), &naive_conv(&x, &w5, &[0.1]), 1e-12);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv_forward(&x, &w, &[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(conv_forward(&x, &Tensor::zeros(&[1, 2, 2, 2]), &[0.0]).is_err());
    }

    #[test]
    fn maxpool_unique_max_and_ties() {
        let (y, idx) = maxpool_forward(&t(&[1, 1, 2, 2], &[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.offsets(), &[3]);
        let (y, idx) = maxpool_forward(&t(&[1, 1, 2, 2], &[5.0; 4])).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(idx.offsets(), &[0]);
        assert!(maxpool_forward(&Tensor::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 2, 8, 8], &mut rng);
        let (y, idx) = maxpool_forward(&x).unwrap();
        for c in 0..2 {
            for py in 0..4 {
                for px in 0..4 {
                    let mut best = f64::MIN;
                    let mut at = (0, 0);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x.at4(0, c, 2 * py + dy, 2 * px + dx);
                            if v > best {
                                best = v;
                                at = (dy, dx);
                            }
                        }
                    }
                    assert_eq!(y.at4(0, c, py, px), best);
                    assert_eq!(idx.offsets()[(c * 4 + py) * 4 + px] as usize, at.0 * 2 + at.1);
                }
            }
        }
    }

    #[test]
    fn unpool_places_at_offset() {
        let idx = PoolIndices::new([1, 1, 2, 2], vec![3]).unwrap();
        let x = unpool_forward(&t(&[1, 1, 1, 1], &[4.0]), &idx).unwrap();
        assert_eq!(x.data(), &[0.0, 0.0, 0.0, 4.0]);
        assert!(unpool_forward(&Tensor::zeros(&[1, 1, 2, 1]), &idx).is_err());
        assert!(PoolIndices::new([1, 1, 2, 2], vec![4]).is_err());
    }

    #[test]
    fn unpool_keeps_window_maxima_in_place() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 3, 6, 8], &mut rng);
        let (y, idx) = maxpool_forward(&x).unwrap();
        let u = unpool_forward(&y, &idx).unwrap();
        for (a, b) in u.data().iter().zip(x.data()) {
            assert!(*a == 0.0 || a == b);
        }
        assert_eq!(u.data().iter().filter(|&&v| v != 0.0).count(), y.len());
    }

    #[test]
    fn deconv_two_by_two_block() {
        let x = t(&[1, 1, 1, 1], &[3.0]);
        let w = t(&[1, 1, 2, 2], &[1.0; 4]);
        assert_eq!(deconv_forward(&x, &w).unwrap().data(), &[3.0; 4]);
        let zero = Tensor::zeros(&[1, 2, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = deconv_forward(&random(&[1, 1, 3, 3], &mut rng), &zero).unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(deconv_forward(&Tensor::zeros(&[1, 2, 2, 2]), &zero).is_err());
    }

    #[test]
    fn deconv_matches_gather_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[2, 2, 3, 4], &mut rng);
        let w = random(&[2, 3, 4, 4], &mut rng);
        assert_close(&deconv_forward(&x, &w).unwrap(), &naive_deconv(&x, &w), 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_forward(&t(&[1, 3, 1, 1], &[0.0, 0.0, 0.0])).unwrap();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax_forward(&t(&[1, 2, 1, 1], &[1000.0, 0.0])).unwrap();
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-15 && p.data()[1] < 1e-300);
        let p = softmax_forward(&t(&[1, 3, 1, 1], &[1.0, 2.0, 3.0])).unwrap();
        // e^k / (e + e^2 + e^3)
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        for (k, v) in p.data().iter().enumerate() {
            assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-15);
        }
        for (v, e) in p.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((v - e).abs() < 1e-4);
        }
    }

    #[test]
    fn relu_backward_masks_nonpositive() {
        let x = t(&[1, 1, 1, 4], &[-1.0, 0.0, 2.0, 1e-300]);
        let g = t(&[1, 1, 1, 4], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 7.0, 8.0]);
    }

    proptest! {
        #[test]
        fn pool_of_unpool_is_identity(vals in prop::collection::vec(-5.0f64..5.0, 8), offs in prop::collection::vec(0u8..4, 8)) {
            let idx = PoolIndices::new([1, 2, 4, 4], offs).unwrap();
            let y = Tensor::from_vec(&[1, 2, 2, 2], vals).unwrap();
            let u = unpool_forward(&y, &idx).unwrap();
            let (back, _) = maxpool_forward(&u).unwrap();
            // unpool leaves at most one nonzero per window; pooling must recover it
            // as long as the kept value is the window max, i.e. non-negative
            for (b, v) in back.data().iter().zip(y.data()) {
                prop_assert_eq!(*b, v.max(0.0));
            }
            prop_assert_eq!(unpool_backward(&u, &idx).unwrap(), y);
        }

        // beyond a logit gap of ~37 the largest probability rounds to exactly 1.0
        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-15.0f64..15.0, 12)) {
            let p = softmax_forward(&Tensor::from_vec(&[1, 3, 2, 2], v).unwrap()).unwrap();
            for pix in 0..4 {
                let s: f64 = (0..3).map(|c| p.data()[c * 4 + pix]).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            prop_assert!(p.data().iter().all(|&x| x > 0.0 && x < 1.0));
        }

        #[test]
        fn adjoint_identities(seed in any::<u64>()) {
            // <K x, g> = <x, K^T g> for the conv, deconv and unpool operators
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[1, 2, 4, 6], &mut rng);
            let w = random(&[3, 2, 3, 3], &mut rng);
            let g = random(&[1, 3, 4, 6], &mut rng);
            let y = conv_forward(&x, &w, &[0.0; 3]).unwrap();
            let (dx, _, _) = conv_backward(&x, &w, &g).unwrap();
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);

            let wd = random(&[2, 3, 4, 4], &mut rng);
            let gd = random(&[1, 3, 8, 12], &mut rng);
            let yd = deconv_forward(&x, &wd).unwrap();
            let (dxd, _) = deconv_backward(&x, &wd, &gd).unwrap();
            let lhs: f64 = yd.data().iter().zip(gd.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(dxd.data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
