//! Raw forward/backward kernels on `[C, H, W]` buffers.

use crate::scalar::Scalar;

/// How positions outside the input are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    #[default]
    Zero,
    /// Repeat the nearest edge pixel.
    Edge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Source index along an axis of length `n`, or `None` for a zero fill.
    #[inline]
    fn source(&self, i: isize, n: usize) -> Option<usize> {
        if i >= 0 && i < n as isize {
            Some(i as usize)
        } else {
            match self.padding {
                Padding::Zero => None,
                Padding::Edge => Some(i.clamp(0, n as isize - 1) as usize),
            }
        }
    }

    /// 1x1, stride 1, no padding: the input already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

impl ConvGeom {
    /// Output columns `lo..hi` whose input column `ox * stride + kx - pad`
    /// lies inside the image.
    fn interior(&self, kx: usize, wo: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(kx).div_ceil(s).min(wo);
        let hi = if self.w + self.pad > kx {
            ((self.w - 1 + self.pad - kx) / s + 1).min(wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.interior(kx, wo);
                for oy in 0..ho {
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    let Some(iy) = g.source((oy * g.stride + ky) as isize - g.pad as isize, g.h)
                    else {
                        out.fill(T::zero());
                        continue;
                    };
                    let src_row = &src[iy * g.w..(iy + 1) * g.w];
                    if hi > lo {
                        let first = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            out[lo..hi].copy_from_slice(&src_row[first..first + hi - lo]);
                        } else {
                            for (o, &v) in out[lo..hi]
                                .iter_mut()
                                .zip(src_row[first..].iter().step_by(g.stride))
                            {
                                *o = v;
                            }
                        }
                    }
                    for ox in (0..lo).chain(hi..wo) {
                        out[ox] =
                            match g.source((ox * g.stride + kx) as isize - g.pad as isize, g.w) {
                                Some(ix) => src_row[ix],
                                None => T::zero(),
                            };
                    }
                }
            }
        }
    }
}

pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    for ci in 0..g.cin {
        let dst = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.interior(kx, wo);
                for oy in 0..ho {
                    let Some(iy) = g.source((oy * g.stride + ky) as isize - g.pad as isize, g.h)
                    else {
                        continue;
                    };
                    let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let src_row = &src[oy * wo..(oy + 1) * wo];
                    if hi > lo {
                        let first = lo * g.stride + kx - g.pad;
                        for (d, &v) in dst_row[first..]
                            .iter_mut()
                            .step_by(g.stride)
                            .zip(&src_row[lo..hi])
                        {
                            *d += v;
                        }
                    }
                    for ox in (0..lo).chain(hi..wo) {
                        if let Some(ix) =
                            g.source((ox * g.stride + kx) as isize - g.pad as isize, g.w)
                        {
                            dst_row[ix] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[cout, ho*wo] = w[cout, patch] * cols + b`
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    cout: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let mut y = vec![T::zero(); cout * plane];
    if g.is_pointwise() {
        T::gemm(
            cout,
            g.patch(),
            plane,
            w,
            false,
            x,
            false,
            T::zero(),
            &mut y,
        );
    } else {
        let mut cols = vec![T::zero(); g.patch() * plane];
        im2col(x, g, &mut cols);
        T::gemm(
            cout,
            g.patch(),
            plane,
            w,
            false,
            &cols,
            false,
            T::zero(),
            &mut y,
        );
    }
    if let Some(b) = b {
        for (row, &bias) in y.chunks_mut(plane).zip(b) {
            row.iter_mut().for_each(|v| *v += bias);
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
    w: &[T],
    dy: &[T],
    cout: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads<T> {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let patch = g.patch();
    let owned_cols;
    let cols: &[T] = if g.is_pointwise() {
        x
    } else if want_dw {
        let mut c = vec![T::zero(); patch * plane];
        im2col(x, g, &mut c);
        owned_cols = c;
        &owned_cols
    } else {
        &[]
    };
    let dw = want_dw.then(|| {
        let mut dw = vec![T::zero(); cout * patch];
        T::gemm(
            cout,
            plane,
            patch,
            dy,
            false,
            cols,
            true,
            T::zero(),
            &mut dw,
        );
        dw
    });
    let db = want_db.then(|| dy.chunks(plane).map(|r| r.iter().copied().sum()).collect());
    let dx = want_dx.then(|| {
        let mut dcols = vec![T::zero(); patch * plane];
        T::gemm(
            patch,
            cout,
            plane,
            w,
            true,
            dy,
            false,
            T::zero(),
            &mut dcols,
        );
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.cin * g.h * g.w];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    ConvGrads { dx, dw, db }
}

pub fn avg_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut y = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let src = &x[ch * h * w..];
        let dst = &mut y[ch * ho * wo..(ch + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let i = 2 * oy * w + 2 * ox;
                dst[oy * wo + ox] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..2 * ho {
            for x in 0..2 * wo {
                dx[ch * h * w + y * w + x] = dy[ch * ho * wo + (y / 2) * wo + x / 2] * quarter;
            }
        }
    }
    dx
}

pub fn upsample2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            let src = &x[ch * h * w + (oy / 2) * w..ch * h * w + (oy / 2 + 1) * w];
            let dst = &mut y[ch * ho * wo + oy * wo..ch * ho * wo + (oy + 1) * wo];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                dx[ch * h * w + (oy / 2) * w + ox / 2] += dy[ch * ho * wo + oy * wo + ox];
            }
        }
    }
    dx
}
