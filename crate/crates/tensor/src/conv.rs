//! im2col lowering for square-kernel 2-d convolution.

use crate::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
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

    pub fn valid(&self) -> bool {
        self.stride > 0 && self.height + 2 * self.pad >= self.kernel && self.width + 2 * self.pad >= self.kernel
    }
}

/// Output columns `ox` whose input column `ox * stride + kj - pad` lies
/// inside the image.
fn valid_cols(g: &ConvGeometry, kj: usize) -> (usize, usize) {
    let wo = g.out_width();
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(wo);
    let hi = if g.width + g.pad > kj {
        (g.width + g.pad - kj).div_ceil(g.stride).min(wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds one `C x H x W` image into a `(C*k*k) x (Ho*Wo)` matrix.
pub fn im2col<F: Float>(g: &ConvGeometry, image: &[F], col: &mut [F]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    line[..lo].fill(F::zero());
                    line[hi..].fill(F::zero());
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &x) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image.
pub fn col2im<F: Float>(g: &ConvGeometry, col: &[F], image: &mut [F]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let first = lo * g.stride + kj - g.pad;
                    let line = &src[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}
