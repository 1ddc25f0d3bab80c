//! Raw forward/backward kernels over flat NCHW buffers.
//!
//! Everything here is generic over [`Scalar`] so the tape (32-bit) and the
//! gradient-check harness (64-bit) execute identical arithmetic paths.

use super::tensor::Scalar;

/// `c (m×n) = a (m×k) · b (k×n)`, optionally transposing either operand and
/// optionally accumulating into `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// Geometry shared by `im2col`/`col2im`: an image of `channels × height ×
/// width`, a `kh × kw` window at stride 1 with symmetric zero padding, and
/// the resulting column grid `out_h × out_w`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(channels: usize, height: usize, width: usize, kh: usize, kw: usize, pad: usize) -> Option<Self> {
        let out_h = (height + 2 * pad).checked_sub(kh)? + 1;
        let out_w = (width + 2 * pad).checked_sub(kw)? + 1;
        Some(Self { channels, height, width, kh, kw, pad, out_h, out_w })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    /// Valid `ox` range for kernel column `kx`: `0 <= ox + kx - pad < width`.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.width + self.pad).saturating_sub(kx).min(self.out_w);
        (lo, hi.max(lo))
    }
}

pub(crate) fn im2col<T: Scalar>(image: &[T], g: &Window, cols: &mut [T]) {
    debug_assert_eq!(image.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.rows() * g.cols());
    if g.is_identity() {
        cols.copy_from_slice(image);
        return;
    }
    let plane = g.height * g.width;
    let ncols = g.cols();
    for c in 0..g.channels {
        let src = &image[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = g.ox_range(kx);
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = (oy + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = iy as usize;
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if hi > lo {
                        let ix0 = lo + kx - g.pad;
                        line[lo..hi].copy_from_slice(&src[iy * g.width + ix0..iy * g.width + ix0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &Window, image: &mut [T]) {
    debug_assert_eq!(image.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.rows() * g.cols());
    if g.is_identity() {
        for (d, &s) in image.iter_mut().zip(cols) {
            *d = *d + s;
        }
        return;
    }
    let plane = g.height * g.width;
    let ncols = g.cols();
    for c in 0..g.channels {
        let dst = &mut image[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = g.ox_range(kx);
                if hi <= lo {
                    continue;
                }
                for oy in 0..g.out_h {
                    let iy = (oy + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let ix0 = lo + kx - g.pad;
                    let out = &mut dst[iy * g.width + ix0..iy * g.width + ix0 + (hi - lo)];
                    for (d, &s) in out.iter_mut().zip(&src[oy * g.out_w + lo..oy * g.out_w + hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Convolution: input `[n, c, h, w]`, kernel `[o, c, kh, kw]`, bias `[o]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    xd: [usize; 4],
    kernel: &[T],
    kd: [usize; 4],
    bias: &[T],
    pad: usize,
) -> (Vec<T>, [usize; 4]) {
    let [n, c, h, w] = xd;
    let [o, _, kh, kw] = kd;
    let g = Window::new(c, h, w, kh, kw, pad).expect("validated by caller");
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut y = vec![T::zero(); n * o * ncols];
    for b in 0..n {
        im2col(&x[b * c * h * w..(b + 1) * c * h * w], &g, &mut cols);
        let yb = &mut y[b * o * ncols..(b + 1) * o * ncols];
        matmul(o, rows, ncols, kernel, false, &cols, false, yb, false);
        for (oc, line) in yb.chunks_mut(ncols).enumerate() {
            let bv = bias[oc];
            line.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    (y, [n, o, g.out_h, g.out_w])
}

/// Returns `(dx, dkernel, dbias)` for [`conv2d_forward`].
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    xd: [usize; 4],
    kernel: &[T],
    kd: [usize; 4],
    pad: usize,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = xd;
    let [o, _, kh, kw] = kd;
    let g = Window::new(c, h, w, kh, kw, pad).expect("validated by caller");
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); o];
    for b in 0..n {
        let dyb = &dy[b * o * ncols..(b + 1) * o * ncols];
        for (oc, line) in dyb.chunks(ncols).enumerate() {
            db[oc] = db[oc] + line.iter().copied().sum::<T>();
        }
        im2col(&x[b * c * h * w..(b + 1) * c * h * w], &g, &mut cols);
        matmul(o, ncols, rows, dyb, false, &cols, true, &mut dk, true);
        matmul(rows, o, ncols, kernel, true, dyb, false, &mut cols, false);
        col2im(&cols, &g, &mut dx[b * c * h * w..(b + 1) * c * h * w]);
    }
    (dx, dk, db)
}

/// Transposed convolution at stride 1: input `[n, i, h, w]`, kernel
/// `[i, o, kh, kw]`, bias `[o]`; output side `h - 1 + kh - 2·pad`.
pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    xd: [usize; 4],
    kernel: &[T],
    kd: [usize; 4],
    bias: &[T],
    pad: usize,
) -> (Vec<T>, [usize; 4]) {
    let [n, i, h, w] = xd;
    let [_, o, kh, kw] = kd;
    let (oh, ow) = (h + kh - 1 - 2 * pad, w + kw - 1 - 2 * pad);
    let g = Window::new(o, oh, ow, kh, kw, pad).expect("validated by caller");
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut y = vec![T::zero(); n * o * oh * ow];
    for b in 0..n {
        let xb = &x[b * i * ncols..(b + 1) * i * ncols];
        matmul(rows, i, ncols, kernel, true, xb, false, &mut cols, false);
        let yb = &mut y[b * o * oh * ow..(b + 1) * o * oh * ow];
        col2im(&cols, &g, yb);
        for (oc, plane) in yb.chunks_mut(oh * ow).enumerate() {
            let bv = bias[oc];
            plane.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    (y, [n, o, oh, ow])
}

/// Returns `(dx, dkernel, dbias)` for [`conv_transpose2d_forward`].
pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    xd: [usize; 4],
    kernel: &[T],
    kd: [usize; 4],
    pad: usize,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, i, h, w] = xd;
    let [_, o, kh, kw] = kd;
    let (oh, ow) = (h + kh - 1 - 2 * pad, w + kw - 1 - 2 * pad);
    let g = Window::new(o, oh, ow, kh, kw, pad).expect("validated by caller");
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); o];
    for b in 0..n {
        let dyb = &dy[b * o * oh * ow..(b + 1) * o * oh * ow];
        for (oc, plane) in dyb.chunks(oh * ow).enumerate() {
            db[oc] = db[oc] + plane.iter().copied().sum::<T>();
        }
        im2col(dyb, &g, &mut cols);
        let xb = &x[b * i * ncols..(b + 1) * i * ncols];
        matmul(i, rows, ncols, kernel, false, &cols, false, &mut dx[b * i * ncols..(b + 1) * i * ncols], false);
        matmul(i, ncols, rows, xb, false, &cols, true, &mut dk, true);
    }
    (dx, dk, db)
}

/// 2×2 max pooling; also returns, per output element, the flat input index
/// of the window maximum (first occurrence in row-major order on ties).
pub(crate) fn maxpool2x_forward<T: Scalar>(x: &[T], xd: [usize; 4]) -> (Vec<T>, Vec<usize>, [usize; 4]) {
    let [n, c, h, w] = xd;
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg, [n, c, oh, ow])
}

pub(crate) fn upsample2x_forward<T: Scalar>(x: &[T], xd: [usize; 4]) -> (Vec<T>, [usize; 4]) {
    let [n, c, h, w] = xd;
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let srow = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = srow[ox / 2];
            }
        }
    }
    (y, [n, c, oh, ow])
}

pub(crate) fn upsample2x_backward<T: Scalar>(dy: &[T], xd: [usize; 4]) -> Vec<T> {
    let [n, c, h, w] = xd;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let d = &mut dst[(oy / 2) * w + ox / 2];
                *d = *d + src[oy * ow + ox];
            }
        }
    }
    dx
}

/// Per-channel batch statistics over `n × h × w`, accumulated in f64.
pub(crate) fn channel_moments<T: Scalar>(x: &[T], xd: [usize; 4]) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = xd;
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0;
        for b in 0..n {
            q += x[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = q / m;
    }
    (mean, var)
}

/// Applies `y = gamma·(x − mean)·inv_std + beta` per channel and returns the
/// normalized activations `xhat` alongside `y`.
pub(crate) fn batchnorm_apply<T: Scalar>(
    x: &[T],
    xd: [usize; 4],
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = xd;
    let plane = h * w;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let (mu, is) = (T::from_f64(mean[ch]), T::from_f64(inv_std[ch]));
            let (g, be) = (gamma[ch], beta[ch]);
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x[i] - mu) * is;
                xhat[i] = xh;
                y[i] = g * xh + be;
            }
        }
    }
    (y, xhat)
}

/// Training-mode batch-norm backward. Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batchnorm_backward_train<T: Scalar>(
    xhat: &[T],
    xd: [usize; 4],
    inv_std: &[f64],
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = xd;
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                sdy += dy[i].as_f64();
                sdyx += dy[i].as_f64() * xhat[i].as_f64();
            }
        }
        dgamma[ch] = T::from_f64(sdyx);
        dbeta[ch] = T::from_f64(sdy);
        let scale = gamma[ch].as_f64() * inv_std[ch] / m;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let v = scale * (m * dy[i].as_f64() - sdy - xhat[i].as_f64() * sdyx);
                dx[i] = T::from_f64(v);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Eval-mode batch-norm backward (statistics are constants).
pub(crate) fn batchnorm_backward_eval<T: Scalar>(
    xhat: &[T],
    xd: [usize; 4],
    inv_std: &[f64],
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = xd;
    let plane = h * w;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let s = gamma[ch] * T::from_f64(inv_std[ch]);
            for i in off..off + plane {
                dgamma[ch] = dgamma[ch] + dy[i] * xhat[i];
                dbeta[ch] = dbeta[ch] + dy[i];
                dx[i] = dy[i] * s;
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = Window::new(2, 4, 5, 3, 3, 1).unwrap();
        let x: Vec<f64> = (0..g.channels * g.height * g.width).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_tie_break_is_first_in_scan_order() {
        let x = [1.0f32, 1.0, 1.0, 1.0];
        let (_, arg, _) = maxpool2x_forward(&x, [1, 1, 2, 2]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f32), 0.5);
        assert!(sigmoid(-1e4f32).is_finite());
        assert!((sigmoid(1e4f32) - 1.0).abs() < 1e-7);
    }
}
