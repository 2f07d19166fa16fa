//! Slice-level correlation kernels. All routines are single-threaded with a
//! fixed summation order so results are reproducible bit for bit.
//!
//! Layouts are row-major: inputs `cin × h × w`, kernels `cout × cin × r × r`,
//! outputs `cout × ho × wo` with `ho = h + 2·pad − r + 1`.

use crate::real::Real;

#[inline]
pub(crate) fn axpy<T: Real>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.r
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.r
    }

    pub fn valid(&self) -> bool {
        self.r >= 1 && self.h + 2 * self.pad >= self.r && self.w + 2 * self.pad >= self.r
    }

    /// Output columns `x` whose input column `x + kx − pad` is inside the field.
    #[inline]
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let wo = self.out_w();
        let x0 = self.pad.saturating_sub(kx);
        let x1 = (self.w + self.pad).saturating_sub(kx).min(wo);
        (x0, x1.max(x0))
    }

    #[inline]
    fn in_row(&self, y: usize, ky: usize) -> Option<usize> {
        let iy = y + ky;
        if iy < self.pad || iy - self.pad >= self.h {
            None
        } else {
            Some(iy - self.pad)
        }
    }
}

/// `out[o] += Σ_i K[o,i] ⋆ in[i]` over the zero-padded input.
pub fn correlate_forward<T: Real>(s: &ConvShape, input: &[T], kernel: &[T], out: &mut [T]) {
    let (ho, wo, r) = (s.out_h(), s.out_w(), s.r);
    let plane = s.h * s.w;
    for o in 0..s.cout {
        let out_o = &mut out[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..s.cin {
            let in_i = &input[i * plane..(i + 1) * plane];
            let k_oi = &kernel[(o * s.cin + i) * r * r..(o * s.cin + i + 1) * r * r];
            for ky in 0..r {
                for y in 0..ho {
                    let Some(iy) = s.in_row(y, ky) else { continue };
                    let in_row = &in_i[iy * s.w..(iy + 1) * s.w];
                    let out_row = &mut out_o[y * wo..(y + 1) * wo];
                    for kx in 0..r {
                        let wv = k_oi[ky * r + kx];
                        let (x0, x1) = s.x_range(kx);
                        if x1 > x0 {
                            let ix0 = x0 + kx - s.pad;
                            axpy(&mut out_row[x0..x1], wv, &in_row[ix0..ix0 + (x1 - x0)]);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `∂L/∂input` into `grad_in`.
pub fn correlate_backward_input<T: Real>(s: &ConvShape, kernel: &[T], grad_out: &[T], grad_in: &mut [T]) {
    let (ho, wo, r) = (s.out_h(), s.out_w(), s.r);
    let plane = s.h * s.w;
    for o in 0..s.cout {
        let g_o = &grad_out[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..s.cin {
            let gi = &mut grad_in[i * plane..(i + 1) * plane];
            let k_oi = &kernel[(o * s.cin + i) * r * r..(o * s.cin + i + 1) * r * r];
            for ky in 0..r {
                for y in 0..ho {
                    let Some(iy) = s.in_row(y, ky) else { continue };
                    let g_row = &g_o[y * wo..(y + 1) * wo];
                    let gi_row = &mut gi[iy * s.w..(iy + 1) * s.w];
                    for kx in 0..r {
                        let wv = k_oi[ky * r + kx];
                        let (x0, x1) = s.x_range(kx);
                        if x1 > x0 {
                            let ix0 = x0 + kx - s.pad;
                            axpy(&mut gi_row[ix0..ix0 + (x1 - x0)], wv, &g_row[x0..x1]);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `∂L/∂kernel` into `grad_k`.
pub fn correlate_backward_kernel<T: Real>(s: &ConvShape, input: &[T], grad_out: &[T], grad_k: &mut [T]) {
    let (ho, wo, r) = (s.out_h(), s.out_w(), s.r);
    let plane = s.h * s.w;
    for o in 0..s.cout {
        let g_o = &grad_out[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..s.cin {
            let in_i = &input[i * plane..(i + 1) * plane];
            let gk = &mut grad_k[(o * s.cin + i) * r * r..(o * s.cin + i + 1) * r * r];
            for ky in 0..r {
                for kx in 0..r {
                    let (x0, x1) = s.x_range(kx);
                    if x1 <= x0 {
                        continue;
                    }
                    let ix0 = x0 + kx - s.pad;
                    let mut acc = T::zero();
                    for y in 0..ho {
                        let Some(iy) = s.in_row(y, ky) else { continue };
                        let g_row = &g_o[y * wo + x0..y * wo + x1];
                        let in_row = &in_i[iy * s.w + ix0..iy * s.w + ix0 + (x1 - x0)];
                        acc += dot(g_row, in_row);
                    }
                    gk[ky * r + kx] += acc;
                }
            }
        }
    }
}
