//! Direct convolution kernels over up to three spatial axes.
//!
//! Two-dimensional convolutions are the `depth == 1` case of the volumetric
//! kernels: an NCHW buffer has exactly the memory layout of an NCDHW buffer
//! with `D = 1`, so no copies are needed. Transposed convolutions reuse the
//! same three kernels with the roles of input and output swapped.

use rayon::prelude::*;

use super::tensor::Real;

/// Stride and zero padding per spatial axis (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn new2d(stride: usize, pad: usize) -> Self {
        Self {
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        }
    }

    pub fn new3d(stride: usize, pad: usize) -> Self {
        Self {
            stride: [stride; 3],
            pad: [pad; 3],
        }
    }

    /// Output extent of a direct convolution, `None` if the kernel does not fit.
    pub fn conv_out(&self, input: [usize; 3], kernel: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.pad[a];
            if padded < kernel[a] || self.stride[a] == 0 {
                return None;
            }
            out[a] = (padded - kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }

    /// Output extent of a transposed convolution.
    pub fn transpose_out(&self, input: [usize; 3], kernel: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a] - 1) * self.stride[a] + kernel[a];
            if full <= 2 * self.pad[a] {
                return None;
            }
            out[a] = full - 2 * self.pad[a];
        }
        Some(out)
    }
}

/// Extents of one direct convolution `x[n, c_in, in] * w[c_out, c_in, ker] -> y[n, c_out, out]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub geom: ConvGeom,
}

impl ConvDims {
    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }
    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }
    fn ker_vol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Range of output indices along `axis` whose tap `k` lands inside the input.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.geom.stride[axis];
        let p = self.geom.pad[axis];
        let i = self.input[axis];
        let o = self.output[axis];
        if i + p <= k {
            return (0, 0);
        }
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = ((i - 1 + p - k) / s + 1).min(o);
        if lo >= hi {
            (0, 0)
        } else {
            (lo, hi)
        }
    }
}

impl ConvDims {
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.geom.stride == [1, 1, 1] && self.geom.pad == [0, 0, 0]
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.ker_vol()
    }
}

/// Visits every (column row, output row segment, input row segment) triple
/// of the unfolded matrix of one batch item.
#[inline]
fn for_each_tap(d: &ConvDims, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let out_vol = d.out_vol();
    let in_vol = d.in_vol();
    let [_, ih, iw] = d.input;
    let [_, oh, ow] = d.output;
    let [kd, kh, kw] = d.kernel;
    let [sd, sh, _] = d.geom.stride;
    let [pd, ph, pw] = d.geom.pad;
    for c in 0..d.c_in {
        for kz in 0..kd {
            let (z0, z1) = d.valid(0, kz);
            for ky in 0..kh {
                let (y0, y1) = d.valid(1, ky);
                for kx in 0..kw {
                    let (x0, x1) = d.valid(2, kx);
                    if x0 >= x1 {
                        continue;
                    }
                    let row = ((c * kd + kz) * kh + ky) * kw + kx;
                    for oz in z0..z1 {
                        let iz = oz * sd + kz - pd;
                        for oy in y0..y1 {
                            let iy = oy * sh + ky - ph;
                            let o = row * out_vol + (oz * oh + oy) * ow + x0;
                            let i = c * in_vol + (iz * ih + iy) * iw + x0 * d.geom.stride[2] + kx - pw;
                            f(o, i, x1 - x0, kx, pw);
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds one batch item into `cols[c_in * kernel_volume, out_volume]`.
fn im2col<T: Real>(d: &ConvDims, x: &[T], cols: &mut [T]) {
    cols.fill(T::zero());
    let sw = d.geom.stride[2];
    for_each_tap(d, |o, i, len, _, _| {
        let dst = &mut cols[o..o + len];
        if sw == 1 {
            dst.copy_from_slice(&x[i..i + len]);
        } else {
            for (j, v) in dst.iter_mut().enumerate() {
                *v = x[i + j * sw];
            }
        }
    });
}

/// Adjoint of [`im2col`]: folds columns back, accumulating into `x`.
fn col2im<T: Real>(d: &ConvDims, cols: &[T], x: &mut [T]) {
    let sw = d.geom.stride[2];
    for_each_tap(d, |o, i, len, _, _| {
        let src = &cols[o..o + len];
        if sw == 1 {
            for (v, &g) in x[i..i + len].iter_mut().zip(src) {
                *v += g;
            }
        } else {
            for (j, &g) in src.iter().enumerate() {
                x[i + j * sw] += g;
            }
        }
    });
}

/// `y += conv(x, w)`; `y` must already hold the bias (or zeros).
pub(crate) fn forward<T: Real>(d: &ConvDims, x: &[T], w: &[T], y: &mut [T]) {
    let (in_item, out_vol) = (d.c_in * d.in_vol(), d.out_vol());
    let rows = d.col_rows();
    y.par_chunks_mut(d.c_out * out_vol).enumerate().for_each(|(n, yn)| {
        let xn = &x[n * in_item..][..in_item];
        let mut buf = Vec::new();
        let cols = if d.is_pointwise() {
            xn
        } else {
            buf.resize(rows * out_vol, T::zero());
            im2col(d, xn, &mut buf);
            &buf
        };
        T::gemm(d.c_out, rows, out_vol, w, (rows, 1), cols, (out_vol, 1), T::one(), yn, out_vol);
    });
}

/// `dx += conv^T(dy, w)`: gradient of [`forward`] w.r.t. its input, which is
/// also the forward pass of a transposed convolution.
pub(crate) fn backward_input<T: Real>(d: &ConvDims, dy: &[T], w: &[T], dx: &mut [T]) {
    let (in_item, out_vol) = (d.c_in * d.in_vol(), d.out_vol());
    let rows = d.col_rows();
    dx.par_chunks_mut(in_item).enumerate().for_each(|(n, dxn)| {
        let dyn_ = &dy[n * d.c_out * out_vol..][..d.c_out * out_vol];
        if d.is_pointwise() {
            T::gemm(rows, d.c_out, out_vol, w, (1, rows), dyn_, (out_vol, 1), T::one(), dxn, out_vol);
        } else {
            let mut cols = vec![T::zero(); rows * out_vol];
            T::gemm(rows, d.c_out, out_vol, w, (1, rows), dyn_, (out_vol, 1), T::zero(), &mut cols, out_vol);
            col2im(d, &cols, dxn);
        }
    });
}

/// `dw += d(conv)/dw` contracted with `dy`.
pub(crate) fn backward_weight<T: Real>(d: &ConvDims, x: &[T], dy: &[T], dw: &mut [T]) {
    let (in_item, out_vol) = (d.c_in * d.in_vol(), d.out_vol());
    let rows = d.col_rows();
    let mut buf = if d.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * out_vol]
    };
    for n in 0..d.n {
        let xn = &x[n * in_item..][..in_item];
        let dyn_ = &dy[n * d.c_out * out_vol..][..d.c_out * out_vol];
        let cols = if d.is_pointwise() {
            xn
        } else {
            im2col(d, xn, &mut buf);
            &buf
        };
        T::gemm(d.c_out, out_vol, rows, dyn_, (out_vol, 1), cols, (1, out_vol), T::one(), dw, rows);
    }
}
