//! Convolution kernels: stride-1 "same" convolution via im2col + GEMM and the
//! 2x2 stride-2 transposed convolution used for upsampling.

use super::{Buffer, Result, Scalar, TensorError};

/// Geometry of a stride-1 "same" convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvKernel {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvKernel {
    /// Reads the geometry from a `(c_out, c_in, k, k)` weight shape.
    pub fn same(weight_shape: &[usize]) -> Result<Self> {
        match *weight_shape {
            [c_out, c_in, k, k2] if k == k2 && k % 2 == 1 && c_out > 0 && c_in > 0 => Ok(Self {
                c_out,
                c_in,
                k,
                stride: 1,
                padding: (k - 1) / 2,
            }),
            _ => Err(TensorError::Shape(format!(
                "conv weights must be (c_out, c_in, k, k) with odd k, got {weight_shape:?}"
            ))),
        }
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Unfolds one `(c_in, h, w)` image into `(c_in*k*k, h*w)` columns.
fn im2col<T: Scalar>(geo: &ConvKernel, x: &[T], h: usize, w: usize, cols: &mut [T]) {
    let (k, p) = (geo.k, geo.padding as isize);
    let hw = h * w;
    for ci in 0..geo.c_in {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - p;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out_row[..x_lo].fill(T::zero());
                    out_row[x_hi..].fill(T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    out_row[x_lo..x_hi].copy_from_slice(&src_row[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Folds columns back onto a `(c_in, h, w)` gradient, accumulating.
fn col2im<T: Scalar>(geo: &ConvKernel, cols: &[T], h: usize, w: usize, dx_img: &mut [T]) {
    let (k, p) = (geo.k, geo.padding as isize);
    let hw = h * w;
    for ci in 0..geo.c_in {
        let plane = &mut dx_img[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - p;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Zeroed workspace, counted by the active memory tracker.
fn scratch<T: Scalar>(len: usize) -> Buffer<T> {
    Buffer::from_vec(vec![T::zero(); len])
}

/// `out[b] = W * im2col(x[b]) + bias`; `out` has shape `(batch, c_out, h, w)`.
pub(super) fn conv2d_forward<T: Scalar>(
    geo: &ConvKernel,
    x: &[T],
    weights: &[T],
    bias: Option<&[T]>,
    batch: usize,
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let hw = h * w;
    let patch = geo.patch_len();
    let mut cols = scratch(if geo.k == 1 { 0 } else { patch * hw });
    for b in 0..batch {
        let xb = &x[b * geo.c_in * hw..(b + 1) * geo.c_in * hw];
        let ob = &mut out[b * geo.c_out * hw..(b + 1) * geo.c_out * hw];
        let src: &[T] = if geo.k == 1 {
            xb
        } else {
            im2col(geo, xb, h, w, &mut cols);
            &cols
        };
        if let Some(bias) = bias {
            for (co, plane) in ob.chunks_exact_mut(hw).enumerate() {
                plane.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            geo.c_out, patch, hw, T::one(), weights, patch as isize, 1, src, hw as isize, 1, beta, ob,
            hw as isize, 1,
        );
    }
}

/// Accumulates input, weight and bias gradients of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Scalar>(
    geo: &ConvKernel,
    x: &[T],
    weights: &[T],
    grad_out: &[T],
    batch: usize,
    h: usize,
    w: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let hw = h * w;
    let patch = geo.patch_len();
    let mut cols = scratch(if geo.k == 1 { 0 } else { patch * hw });
    let mut dcols = scratch(if dx.is_some() { patch * hw } else { 0 });
    for b in 0..batch {
        let xb = &x[b * geo.c_in * hw..(b + 1) * geo.c_in * hw];
        let gb = &grad_out[b * geo.c_out * hw..(b + 1) * geo.c_out * hw];
        if let Some(db) = db.as_deref_mut() {
            for (co, plane) in gb.chunks_exact(hw).enumerate() {
                let mut s = T::zero();
                for v in plane {
                    s += *v;
                }
                db[co] += s;
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let src: &[T] = if geo.k == 1 {
                xb
            } else {
                im2col(geo, xb, h, w, &mut cols);
                &cols
            };
            // dW (c_out x patch) += G (c_out x hw) * cols^T (hw x patch)
            T::gemm(
                geo.c_out, hw, patch, T::one(), gb, hw as isize, 1, src, 1, hw as isize, T::one(), dw,
                patch as isize, 1,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * geo.c_in * hw..(b + 1) * geo.c_in * hw];
            if geo.k == 1 {
                T::gemm(
                    patch, geo.c_out, hw, T::one(), weights, 1, patch as isize, gb, hw as isize, 1,
                    T::one(), dxb, hw as isize, 1,
                );
            } else {
                // dcols (patch x hw) = W^T (patch x c_out) * G (c_out x hw)
                T::gemm(
                    patch, geo.c_out, hw, T::one(), weights, 1, patch as isize, gb, hw as isize, 1,
                    T::zero(), &mut dcols, hw as isize, 1,
                );
                col2im(geo, &dcols, h, w, dxb);
            }
        }
    }
}

/// 2x2 stride-2 transposed convolution. Weights are `(c_in, c_out, 2, 2)`;
/// output is `(batch, c_out, 2h, 2w)`.
#[allow(clippy::too_many_arguments)]
pub(super) fn tconv2_forward<T: Scalar>(
    x: &[T],
    weights: &[T],
    bias: Option<&[T]>,
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let hw = h * w;
    let rows = c_out * 4;
    let mut y = scratch(rows * hw);
    for b in 0..batch {
        let xb = &x[b * c_in * hw..(b + 1) * c_in * hw];
        // Y (4 c_out x hw) = Wm^T * X, Wm = weights viewed as (c_in x 4 c_out)
        T::gemm(
            rows, c_in, hw, T::one(), weights, 1, rows as isize, xb, hw as isize, 1, T::zero(), &mut y,
            hw as isize, 1,
        );
        let ob = &mut out[b * c_out * 4 * hw..(b + 1) * c_out * 4 * hw];
        let ow = 2 * w;
        for co in 0..c_out {
            let bias_v = bias.map_or(T::zero(), |bs| bs[co]);
            for a in 0..2 {
                for c in 0..2 {
                    let yrow = &y[(co * 4 + a * 2 + c) * hw..(co * 4 + a * 2 + c + 1) * hw];
                    for i in 0..h {
                        let orow = &mut ob[co * 4 * hw + (2 * i + a) * ow..];
                        for j in 0..w {
                            orow[2 * j + c] = yrow[i * w + j] + bias_v;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn tconv2_backward<T: Scalar>(
    x: &[T],
    weights: &[T],
    grad_out: &[T],
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let hw = h * w;
    let rows = c_out * 4;
    let ow = 2 * w;
    let mut dy = scratch(rows * hw);
    for b in 0..batch {
        let gb = &grad_out[b * c_out * 4 * hw..(b + 1) * c_out * 4 * hw];
        for co in 0..c_out {
            for a in 0..2 {
                for c in 0..2 {
                    let drow = &mut dy[(co * 4 + a * 2 + c) * hw..(co * 4 + a * 2 + c + 1) * hw];
                    for i in 0..h {
                        let grow = &gb[co * 4 * hw + (2 * i + a) * ow..];
                        for j in 0..w {
                            drow[i * w + j] = grow[2 * j + c];
                        }
                    }
                }
            }
        }
        if let Some(db) = db.as_deref_mut() {
            for co in 0..c_out {
                let mut s = T::zero();
                for v in &dy[co * 4 * hw..(co + 1) * 4 * hw] {
                    s += *v;
                }
                db[co] += s;
            }
        }
        let xb = &x[b * c_in * hw..(b + 1) * c_in * hw];
        if let Some(dw) = dw.as_deref_mut() {
            // dWm (c_in x 4c_out) += X (c_in x hw) * dY^T (hw x 4c_out)
            T::gemm(
                c_in, hw, rows, T::one(), xb, hw as isize, 1, &dy, 1, hw as isize, T::one(), dw,
                rows as isize, 1,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * c_in * hw..(b + 1) * c_in * hw];
            // dX (c_in x hw) += Wm (c_in x 4c_out) * dY (4c_out x hw)
            T::gemm(
                c_in, rows, hw, T::one(), weights, rows as isize, 1, &dy, hw as isize, 1, T::one(), dxb,
                hw as isize, 1,
            );
        }
    }
}
