//! Raw convolution, pooling and filtering kernels on NCHW buffers.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

pub fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

pub fn conv_transpose_out(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((size - 1) * stride + kernel).checked_sub(2 * pad)
}

/// Unfolds one `C x H x W` image into `(C*k*k) x (Ho*Wo)` columns.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let k = g.kernel;
    for ci in 0..g.channels {
        let src = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let line = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let k = g.kernel;
    for ci in 0..g.channels {
        let dst = &mut x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[n] = W * im2col(x[n]) + b`, weight `O x C x k x k`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
    out_channels: usize,
) -> Vec<T> {
    let in_len = g.channels * g.height * g.width;
    let plane = g.col_cols();
    let mut cols = vec![T::zero(); g.col_rows() * plane];
    let mut y = vec![T::zero(); batch * out_channels * plane];
    for n in 0..batch {
        im2col(&x[n * in_len..(n + 1) * in_len], g, &mut cols);
        let yn = &mut y[n * out_channels * plane..(n + 1) * out_channels * plane];
        T::gemm(
            false,
            false,
            out_channels,
            plane,
            g.col_rows(),
            T::one(),
            weight,
            &cols,
            T::zero(),
            yn,
        );
        if let Some(b) = bias {
            for (o, chunk) in yn.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    out_channels: usize,
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let in_len = g.channels * g.height * g.width;
    let plane = g.col_cols();
    let rows = g.col_rows();
    let mut cols = vec![T::zero(); rows * plane];
    let mut dx = need_dx.then(|| vec![T::zero(); batch * in_len]);
    let mut dw = need_dw.then(|| vec![T::zero(); out_channels * rows]);
    for n in 0..batch {
        let dyn_ = &dy[n * out_channels * plane..(n + 1) * out_channels * plane];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * in_len..(n + 1) * in_len], g, &mut cols);
            T::gemm(false, true, out_channels, rows, plane, T::one(), dyn_, &cols, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(true, false, rows, plane, out_channels, T::one(), weight, dyn_, T::zero(), &mut cols);
            col2im(&cols, g, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    let db = need_db.then(|| channel_sums(dy, batch, out_channels, plane));
    ConvGrads { dx, dw, db }
}

/// Transposed convolution. `out_geom` describes the *output* image as the
/// input of the adjoint convolution; weight is `Cin x Cout x k x k`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    in_channels: usize,
    out_geom: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane = out_geom.col_cols();
    let rows = out_geom.col_rows();
    let out_len = out_geom.channels * out_geom.height * out_geom.width;
    let mut cols = vec![T::zero(); rows * plane];
    let mut y = vec![T::zero(); batch * out_len];
    for n in 0..batch {
        let xn = &x[n * in_channels * plane..(n + 1) * in_channels * plane];
        T::gemm(true, false, rows, plane, in_channels, T::one(), weight, xn, T::zero(), &mut cols);
        let yn = &mut y[n * out_len..(n + 1) * out_len];
        col2im(&cols, out_geom, yn);
        if let Some(b) = bias {
            let hw = out_geom.height * out_geom.width;
            for (o, chunk) in yn.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    in_channels: usize,
    out_geom: &ConvGeom,
    weight: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let plane = out_geom.col_cols();
    let rows = out_geom.col_rows();
    let out_len = out_geom.channels * out_geom.height * out_geom.width;
    let mut cols = vec![T::zero(); rows * plane];
    let mut dx = need_dx.then(|| vec![T::zero(); batch * in_channels * plane]);
    let mut dw = need_dw.then(|| vec![T::zero(); in_channels * rows]);
    for n in 0..batch {
        im2col(&dy[n * out_len..(n + 1) * out_len], out_geom, &mut cols);
        let xn = &x[n * in_channels * plane..(n + 1) * in_channels * plane];
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_channels * plane..(n + 1) * in_channels * plane];
            T::gemm(false, false, in_channels, plane, rows, T::one(), weight, &cols, T::zero(), dxn);
        }
        if let Some(dw) = dw.as_mut() {
            T::gemm(false, true, in_channels, rows, plane, T::one(), xn, &cols, T::one(), dw);
        }
    }
    let hw = out_geom.height * out_geom.width;
    let db = need_db.then(|| channel_sums(dy, batch, out_geom.channels, hw));
    ConvGrads { dx, dw, db }
}

fn channel_sums<T: Scalar>(dy: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for n in 0..batch {
        for (o, d) in db.iter_mut().enumerate() {
            let start = (n * channels + o) * plane;
            *d += dy[start..start + plane].iter().copied().sum::<T>();
        }
    }
    db
}

/// 2x2 max pooling with stride 2; returns pooled values and source indices.
pub fn maxpool2_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(planes * ho * wo);
    let mut idx = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                y.push(x[best]);
                idx.push(best);
            }
        }
    }
    (y, idx)
}

/// Depthwise separable correlation with a 1-D kernel along both axes,
/// no padding ("valid" output).
pub fn blur_valid<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, k: &[T]) -> Vec<T> {
    let kl = k.len();
    let (ho, wo) = (h + 1 - kl, w + 1 - kl);
    let mut tmp = vec![T::zero(); h * wo];
    let mut y = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for c in 0..wo {
                let mut s = T::zero();
                for (t, &kv) in k.iter().enumerate() {
                    s += kv * src[r * w + c + t];
                }
                tmp[r * wo + c] = s;
            }
        }
        let dst = &mut y[p * ho * wo..(p + 1) * ho * wo];
        for r in 0..ho {
            for c in 0..wo {
                let mut s = T::zero();
                for (t, &kv) in k.iter().enumerate() {
                    s += kv * tmp[(r + t) * wo + c];
                }
                dst[r * wo + c] = s;
            }
        }
    }
    y
}

/// Adjoint of [`blur_valid`].
pub fn blur_valid_adjoint<T: Scalar>(
    dy: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: &[T],
) -> Vec<T> {
    let kl = k.len();
    let (ho, wo) = (h + 1 - kl, w + 1 - kl);
    let mut tmp = vec![T::zero(); h * wo];
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * ho * wo..(p + 1) * ho * wo];
        tmp.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..ho {
            for c in 0..wo {
                let g = src[r * wo + c];
                for (t, &kv) in k.iter().enumerate() {
                    tmp[(r + t) * wo + c] += kv * g;
                }
            }
        }
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for c in 0..wo {
                let g = tmp[r * wo + c];
                for (t, &kv) in k.iter().enumerate() {
                    dst[r * w + c + t] += kv * g;
                }
            }
        }
    }
    dx
}
