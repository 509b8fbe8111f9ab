//! Numeric kernels behind the tape ops. Row-major throughout.

/// `out[m x n] = a[m x k] * b[k x n]`, skipping zero entries of `a`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x != 0.0 {
                axpy(x, &b[p * n..(p + 1) * n], row);
            }
        }
    }
    out
}

/// `g[m x n] * b^T` -> `[m x k]`.
pub(crate) fn matmul_grad_a(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(gi, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

/// `a^T * g` -> `[k x n]`, skipping zero entries of `a`.
pub(crate) fn matmul_grad_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x != 0.0 {
                axpy(x, gi, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
    out
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Geometry of a same-padded 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    /// For kernel offset `d` along an axis of length `len` with half-width
    /// `pad`, the output positions whose source stays in bounds, and the
    /// source shift.
    #[inline]
    fn span(d: usize, pad: usize, len: usize) -> (usize, usize, isize) {
        let shift = d as isize - pad as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).min(len as isize).max(0) as usize;
        (lo, hi.max(lo), shift)
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Unrolls `input [C_in x H x W]` into `[C_in*kh*kw x H*W]`: row
/// `(c, dy, dx)` holds the input shifted by that tap, zero outside.
fn im2col(input: &[f64], d: ConvDims) -> Vec<f64> {
    if d.kh == 1 && d.kw == 1 {
        return input.to_vec();
    }
    let plane = d.h * d.w;
    let mut cols = vec![0.0; d.patch() * plane];
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    for c in 0..d.c_in {
        for dy in 0..d.kh {
            let (y_lo, y_hi, sy) = ConvDims::span(dy, ph, d.h);
            for dx in 0..d.kw {
                let (x_lo, x_hi, sx) = ConvDims::span(dx, pw, d.w);
                let row = ((c * d.kh + dy) * d.kw + dx) * plane;
                for y in y_lo..y_hi {
                    let src = c * plane + (y as isize + sy) as usize * d.w + (x_lo as isize + sx) as usize;
                    let dst = row + y * d.w + x_lo;
                    cols[dst..dst + x_hi - x_lo].copy_from_slice(&input[src..src + x_hi - x_lo]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-adds rows back onto the input grid.
fn col2im(cols: &[f64], d: ConvDims) -> Vec<f64> {
    if d.kh == 1 && d.kw == 1 {
        return cols.to_vec();
    }
    let plane = d.h * d.w;
    let mut out = vec![0.0; d.c_in * plane];
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    for c in 0..d.c_in {
        for dy in 0..d.kh {
            let (y_lo, y_hi, sy) = ConvDims::span(dy, ph, d.h);
            for dx in 0..d.kw {
                let (x_lo, x_hi, sx) = ConvDims::span(dx, pw, d.w);
                let row = ((c * d.kh + dy) * d.kw + dx) * plane;
                for y in y_lo..y_hi {
                    let dst = c * plane + (y as isize + sy) as usize * d.w + (x_lo as isize + sx) as usize;
                    let src = row + y * d.w + x_lo;
                    for (o, v) in out[dst..dst + x_hi - x_lo].iter_mut().zip(&cols[src..src + x_hi - x_lo]) {
                        *o += v;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d(input: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    matmul(kernel, &im2col(input, d), d.c_out, d.patch(), d.h * d.w)
}

pub(crate) fn conv2d_grad_input(g: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    col2im(&matmul_grad_b(kernel, g, d.c_out, d.patch(), d.h * d.w), d)
}

pub(crate) fn conv2d_grad_kernel(g: &[f64], input: &[f64], d: ConvDims) -> Vec<f64> {
    matmul_grad_a(g, &im2col(input, d), d.c_out, d.patch(), d.h * d.w)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, returning `x` itself above 30 where the correction is
/// below `1e-13`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
