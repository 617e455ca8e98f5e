//! Flat-slice loops shared by the forward and backward passes.
//!
//! Inner loops are written over contiguous slices so they vectorize. Every
//! reduction has a fixed summation order, which keeps results bit-identical
//! from run to run.

use super::Real;

#[inline]
pub fn add_assign<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a = *a + b;
    }
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Dot product with eight interleaved partial sums.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut partial = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: T = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            partial[i] = partial[i] + ca[i] * cb[i];
        }
    }
    let lo = (partial[0] + partial[1]) + (partial[2] + partial[3]);
    let hi = (partial[4] + partial[5]) + (partial[6] + partial[7]);
    (lo + hi) + tail
}

/// `[m×k] · [k×n] → [m×n]`
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&aik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if aik != T::zero() {
                axpy(aik, b_row, out_row);
            }
        }
    }
    out
}

/// Gradient of `a` in `a·b`: `out_grad · bᵀ`, shape `[m×k]`.
pub fn matmul_grad_lhs<T: Real>(out_grad: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut ga = Vec::with_capacity(m * k);
    for g_row in out_grad.chunks_exact(n) {
        ga.extend(b.chunks_exact(n).map(|b_row| dot(g_row, b_row)));
    }
    debug_assert_eq!(ga.len(), m * k);
    ga
}

/// Gradient of `b` in `a·b`: `aᵀ · out_grad`, shape `[k×n]`.
pub fn matmul_grad_rhs<T: Real>(a: &[T], out_grad: &[T], _m: usize, k: usize, n: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); k * n];
    for (a_row, g_row) in a.chunks_exact(k).zip(out_grad.chunks_exact(n)) {
        for (&aik, gb_row) in a_row.iter().zip(gb.chunks_exact_mut(n)) {
            if aik != T::zero() {
                axpy(aik, g_row, gb_row);
            }
        }
    }
    gb
}

/// Geometry of a 2-D cross-correlation over a `[C×H×W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input column range `[ox_lo, ox_hi)` of output positions whose tap `kx`
    /// lands inside the unpadded row.
    #[inline]
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        // ix = ox * stride + kx - padding must lie in [0, width)
        let lo = if kx >= self.padding {
            0
        } else {
            (self.padding - kx).div_ceil(self.stride)
        };
        let hi = if self.width + self.padding > kx {
            ((self.width + self.padding - kx - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds the input into a `[C·kh·kw × out_h·out_w]` patch matrix, zero
/// where a tap falls into the padding.
pub fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let positions = g.positions();
    let mut cols = vec![T::zero(); g.patch_len() * positions];
    let mut rows = cols.chunks_exact_mut(positions);
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = rows.next().expect("patch row");
                let (ox_lo, ox_hi) = g.valid_ox(kx);
                if ox_lo == ox_hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.padding;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let positions = g.positions();
    let mut input = vec![T::zero(); g.channels * g.height * g.width];
    let mut rows = cols.chunks_exact(positions);
    for c in 0..g.channels {
        let plane = &mut input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = rows.next().expect("patch row");
                let (ox_lo, ox_hi) = g.valid_ox(kx);
                if ox_lo == ox_hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.padding;
                        add_assign(&mut dst[ix0..ix0 + (ox_hi - ox_lo)], &src[ox_lo..ox_hi]);
                    } else {
                        for (ox, &s) in src.iter().enumerate().take(ox_hi).skip(ox_lo) {
                            let ix = ox * g.stride + kx - g.padding;
                            dst[ix] = dst[ix] + s;
                        }
                    }
                }
            }
        }
    }
    input
}
