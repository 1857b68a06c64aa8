//! 2D cross-correlation via im2col + GEMM, one sample at a time.
//!
//! Working per sample keeps each sample's result independent of batch
//! composition, so eval-mode outputs do not change with batch size.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::gemm::gemm;
use super::Tensor;

/// Output extent `⌊(n + 2·pad − k) / stride⌋ + 1`.
pub fn conv_output_extent(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv stride must be ≥ 1"));
    }
    let padded = n + 2 * pad;
    if padded < k {
        return Err(Error::shape(format!(
            "kernel {k} larger than padded input {padded} (extent {n}, pad {pad})"
        )));
    }
    Ok((padded - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, no padding: the column matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Range of output columns `ox` whose input column `ox·s + kx − p` lies inside `[0, w)`.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let (s, p, w) = (self.stride, self.pad, self.w);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        // ox·s + kx − p ≤ w − 1  ⇔  ox ≤ (w − 1 + p − kx) / s
        let hi = if w + p > kx { ((w - 1 + p - kx) / s + 1).min(self.ow) } else { 0 };
        (lo.min(hi), hi)
    }
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, Geom)> {
    let (n, c, h, wd) = x.dims4()?;
    let [o, ci, kh, kw] = w.shape()[..] else {
        return Err(Error::dim(format!("conv weight must be O×I×K×K, got {:?}", w.shape())));
    };
    if ci != c {
        return Err(Error::dim(format!(
            "conv input has {c} channels but weight {:?} expects {ci}",
            w.shape()
        )));
    }
    let oh = conv_output_extent(h, kh, stride, pad)?;
    let ow = conv_output_extent(wd, kw, stride, pad)?;
    Ok((n, o, Geom { c, h, w: wd, kh, kw, oh, ow, stride, pad }))
}

impl Geom {
    /// Stride 1 with output width equal to input width: each tap row is the input
    /// plane shifted by a constant offset, apart from the wrapped edge columns.
    fn is_same_width(&self) -> bool {
        self.stride == 1 && self.ow == self.w
    }

    /// Output rows `oy` whose input row `oy + ky − pad` lies inside `[0, h)`.
    fn valid_oy(&self, ky: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(ky);
        let hi = (self.h + self.pad).saturating_sub(ky).min(self.oh);
        (lo.min(hi), hi)
    }
}

/// Fast path of [`im2col`] for [`Geom::is_same_width`].
fn im2col_same<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let (ncol, w) = (g.cols(), g.w);
    for ch in 0..g.c {
        let plane = &x[ch * g.h * w..(ch + 1) * g.h * w];
        for ky in 0..g.kh {
            let (ylo, yhi) = g.valid_oy(ky);
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                let (lo, hi) = g.valid_ox(kx);
                dst[..ylo * w].fill(T::zero());
                dst[yhi * w..].fill(T::zero());
                if ylo < yhi {
                    // dst[oy·w + ox] = plane[(oy + ky − pad)·w + ox + kx − pad] over the valid span.
                    let d0 = ylo * w + lo;
                    let d1 = (yhi - 1) * w + hi;
                    let s0 = (ylo + ky - g.pad) * w + lo + kx - g.pad;
                    dst[d0..d1].copy_from_slice(&plane[s0..s0 + (d1 - d0)]);
                    for oy in ylo..yhi {
                        dst[oy * w..oy * w + lo].fill(T::zero());
                        dst[oy * w + hi..(oy + 1) * w].fill(T::zero());
                    }
                }
            }
        }
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    if g.is_same_width() {
        return im2col_same(x, g, cols);
    }
    let ncol = g.cols();
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                let (lo, hi) = g.valid_ox(kx);
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
                            *v = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Fast path of [`col2im`] for [`Geom::is_same_width`]. Zeroes the wrapped edge
/// columns of `cols` so each tap row can be added as one contiguous span.
fn col2im_same<T: Scalar>(cols: &mut [T], g: &Geom, x: &mut [T]) {
    let (ncol, w) = (g.cols(), g.w);
    for ch in 0..g.c {
        let plane = &mut x[ch * g.h * w..(ch + 1) * g.h * w];
        for ky in 0..g.kh {
            let (ylo, yhi) = g.valid_oy(ky);
            if ylo >= yhi {
                continue;
            }
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let src = &mut cols[row * ncol..(row + 1) * ncol];
                let (lo, hi) = g.valid_ox(kx);
                for oy in ylo..yhi {
                    src[oy * w..oy * w + lo].fill(T::zero());
                    src[oy * w + hi..(oy + 1) * w].fill(T::zero());
                }
                let d0 = ylo * w + lo;
                let d1 = (yhi - 1) * w + hi;
                let p0 = (ylo + ky - g.pad) * w + lo + kx - g.pad;
                for (d, &v) in plane[p0..p0 + (d1 - d0)].iter_mut().zip(&src[d0..d1]) {
                    *d += v;
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &mut [T], g: &Geom, x: &mut [T]) {
    if g.is_same_width() {
        return col2im_same(cols, g, x);
    }
    let ncol = g.cols();
    for ch in 0..g.c {
        let plane = &mut x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                let (lo, hi) = g.valid_ox(kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        for (d, &v) in dst[start..start + (hi - lo)].iter_mut().zip(&s[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox * g.stride + kx - g.pad] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

fn transpose_into<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Cross-correlation of `x: N×C×H×W` with `w: O×C×Kh×Kw`, plus optional per-output-channel bias.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, o, g) = geometry(x, w, stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::dim(format!("conv bias {:?} does not match {o} outputs", b.shape())));
        }
    }
    let (rows, ncol) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); n * o * ncol];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ncol] };
    for s in 0..n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let colm: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        let ys = &mut out[s * o * ncol..(s + 1) * o * ncol];
        gemm(o, rows, ncol, w.data(), colm, ys, false);
        if let Some(b) = bias {
            for (oc, chunk) in ys.chunks_mut(ncol).enumerate() {
                let bv = b.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, o, g.oh, g.ow], out))
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
///
/// Each of the three gradients is only computed when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> Result<Conv2dGrads<T>> {
    let (n, o, g) = geometry(x, w, stride, pad)?;
    if grad_out.shape() != [n, o, g.oh, g.ow] {
        return Err(Error::dim(format!(
            "conv grad {:?} does not match output [{n}, {o}, {}, {}]",
            grad_out.shape(),
            g.oh,
            g.ow
        )));
    }
    let (rows, ncol) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let gy = grad_out.data();

    let bias = need_bias.then(|| {
        let mut gb = vec![T::zero(); o];
        for s in 0..n {
            for (oc, acc) in gb.iter_mut().enumerate() {
                for &v in &gy[(s * o + oc) * ncol..(s * o + oc + 1) * ncol] {
                    *acc += v;
                }
            }
        }
        Tensor::from_parts(vec![o], gb)
    });

    // dWᵀ = Σ_n cols_n · dY_nᵀ, which keeps the large column matrix in row-major order.
    let weight = if need_weight {
        let mut gw_t = vec![T::zero(); rows * o];
        let mut cols = vec![T::zero(); rows * ncol];
        let mut gy_t = vec![T::zero(); ncol * o];
        for s in 0..n {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let colm: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut cols);
                &cols
            };
            transpose_into(&gy[s * o * ncol..(s + 1) * o * ncol], o, ncol, &mut gy_t);
            gemm(rows, ncol, o, colm, &gy_t, &mut gw_t, true);
        }
        let mut gw = vec![T::zero(); o * rows];
        transpose_into(&gw_t, rows, o, &mut gw);
        Some(Tensor::from_parts(w.shape().to_vec(), gw))
    } else {
        None
    };

    let input = if need_input {
        let mut w_t = vec![T::zero(); o * rows];
        transpose_into(w.data(), o, rows, &mut w_t);
        let mut gx = vec![T::zero(); n * in_len];
        let mut dcols = vec![T::zero(); rows * ncol];
        for s in 0..n {
            let gys = &gy[s * o * ncol..(s + 1) * o * ncol];
            let gxs = &mut gx[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                gemm(rows, o, ncol, &w_t, gys, gxs, false);
            } else {
                gemm(rows, o, ncol, &w_t, gys, &mut dcols, false);
                col2im(&mut dcols, &g, gxs);
            }
        }
        Some(Tensor::from_parts(x.shape().to_vec(), gx))
    } else {
        None
    };

    Ok(Conv2dGrads { input, weight, bias })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop cross-correlation, used as an oracle for the im2col path.
    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for s in 0..n {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((s * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, o, oh, ow], out).unwrap()
    }

    fn wave(shape: &[usize], f: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * f).sin()).unwrap()
    }

    #[test]
    fn pointwise_identity_is_exact() {
        let x = wave(&[2, 3, 5, 4], 0.7);
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(conv2d(&x, &w, None, 1, 0).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let x = Tensor::full(&[1, 1, 4, 4], 5.0).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 45.0));
    }

    #[test]
    fn strided_shape_floors() {
        let x = Tensor::<f64>::zeros(&[1, 1, 32, 32]).unwrap();
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]).unwrap();
        assert_eq!(conv2d(&x, &w, None, 2, 1).unwrap().shape(), &[1, 1, 16, 16]);
    }

    #[test]
    fn matches_naive_across_geometries() {
        for &(k, s, p, h, wd) in &[(3, 1, 1, 6, 5), (3, 2, 1, 8, 8), (1, 2, 0, 7, 6), (3, 1, 0, 5, 5), (2, 3, 2, 7, 9), (5, 1, 2, 6, 7), (5, 1, 2, 2, 3), (3, 1, 1, 1, 4)] {
            let x = wave(&[2, 3, h, wd], 0.31);
            let w = wave(&[4, 3, k, k], 0.57);
            let got = conv2d(&x, &w, None, s, p).unwrap();
            let want = conv_naive(&x, &w, s, p);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn bias_is_added_per_output_channel() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3, 3]).unwrap();
        let w = Tensor::<f64>::zeros(&[2, 2, 3, 3]).unwrap();
        let b = Tensor::new(&[2], vec![1.5, -2.0]).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 1.5));
        assert!(y.data()[9..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn errors() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]).unwrap();
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]).unwrap();
        assert!(matches!(conv2d(&x, &w, None, 1, 0), Err(Error::Dimension(_))));
        let w = Tensor::<f64>::zeros(&[1, 2, 5, 5]).unwrap();
        assert!(matches!(conv2d(&x, &w, None, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), gy> == <x, dX> and == <w, dW> since conv is bilinear.
        for &(k, s, p, h, wd) in &[(3, 1, 1, 6, 6), (3, 2, 1, 6, 6), (1, 2, 0, 6, 6), (1, 1, 0, 6, 6), (5, 1, 2, 5, 7), (3, 1, 1, 2, 3)] {
            let x = wave(&[2, 3, h, wd], 0.41);
            let w = wave(&[4, 3, k, k], 0.23);
            let y = conv2d(&x, &w, None, s, p).unwrap();
            let gy = wave(y.shape(), 0.77);
            let gr = conv2d_backward(&x, &w, s, p, &gy, true, true, true).unwrap();
            let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
            let via_x: f64 = x.data().iter().zip(gr.input.unwrap().data()).map(|(a, b)| a * b).sum();
            let via_w: f64 = w.data().iter().zip(gr.weight.unwrap().data()).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10, "{lhs} vs {via_x}");
            assert!((lhs - via_w).abs() < 1e-10, "{lhs} vs {via_w}");
            assert!((gr.bias.unwrap().sum() - gy.sum()).abs() < 1e-12);
        }
    }
}
