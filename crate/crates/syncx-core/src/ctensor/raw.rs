//! Low-level kernels shared by the public complex ops and the autodiff graph.
//!
//! Activations use a packed layout: a map of C complex channels is stored as
//! a real array `[..., 2C]` whose last dimension holds the C real parts
//! followed by the C imaginary parts. A complex convolution is then one real
//! matrix product
//!
//! ```text
//!   [ A | B ] @ [ Kre  Kim ]  =  [ out_re | out_im ]
//!               [-Kim  Kre ]
//! ```
//!
//! where `A`/`B` are the im2col expansions of the real/imaginary parts. The
//! backward passes are expressed the same way (gemm against the transposed
//! packed kernel, plus a col2im gather), so gradients cost two more gemms of
//! the same size.
//!
//! Parallel loops are written so every output element is produced by exactly
//! one task with a fixed accumulation order; results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use crate::real::Real;

/// Work size below which the rayon fan-out is not worth it.
const PAR_THRESHOLD: usize = 1 << 15;

/// "Same" padding for one spatial axis: output extent is ceil(extent/stride).
/// Returns (before, after); the excess pixel goes after, as in TF SAME.
pub fn same_padding(extent: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = extent.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(extent);
    (total / 2, total - total / 2)
}

/// Geometry of one 2-D convolution over a batched packed map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Same-padded geometry: output extent is ceil(input/stride) per axis.
    pub fn same(batch: usize, in_h: usize, in_w: usize, in_c: usize, kh: usize, kw: usize, stride: usize) -> Self {
        let (pad_top, _) = same_padding(in_h, kh, stride);
        let (pad_left, _) = same_padding(in_w, kw, stride);
        ConvGeom {
            batch,
            in_h,
            in_w,
            in_c,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h: in_h.div_ceil(stride),
            out_w: in_w.div_ceil(stride),
        }
    }

    /// Explicit padding; output extent from the standard conv formula.
    #[allow(clippy::too_many_arguments)]
    pub fn explicit(
        batch: usize,
        in_h: usize,
        in_w: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pads: [usize; 4], // top, bottom, left, right
    ) -> Self {
        let out_h = (in_h + pads[0] + pads[1] - kh) / stride + 1;
        let out_w = (in_w + pads[2] + pads[3] - kw) / stride + 1;
        ConvGeom {
            batch,
            in_h,
            in_w,
            in_c,
            kh,
            kw,
            stride,
            pad_top: pads[0],
            pad_left: pads[2],
            out_h,
            out_w,
        }
    }

    /// Columns of the im2col matrix (both complex halves).
    pub fn col_width(&self) -> usize {
        2 * self.kh * self.kw * self.in_c
    }

    /// Rows of the im2col matrix.
    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.in_h * self.in_w * 2 * self.in_c
    }
}

/// Expand a packed input `[B, H, W, 2C]` into the im2col matrix
/// `[B*OH*OW, 2*KH*KW*C]` (real taps first, imaginary taps second).
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let half = g.kh * g.kw * g.in_c;
    let width = 2 * half;
    debug_assert_eq!(x.len(), g.input_len());
    debug_assert_eq!(col.len(), g.rows() * width);

    let c = g.in_c;
    let row_px = 2 * c; // packed row stride per pixel
    let fill_row = |row_idx: usize, out: &mut [T]| {
        let b = row_idx / (g.out_h * g.out_w);
        let rem = row_idx % (g.out_h * g.out_w);
        let oh = rem / g.out_w;
        let ow = rem % g.out_w;
        let base_in = b * g.in_h * g.in_w * row_px;
        for ki in 0..g.kh {
            let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
            let tap0 = ki * g.kw * c;
            if ih < 0 || ih >= g.in_h as isize {
                out[tap0..tap0 + g.kw * c].fill(T::zero());
                out[half + tap0..half + tap0 + g.kw * c].fill(T::zero());
                continue;
            }
            let ih = ih as usize;
            // Valid kw span: ow*stride + kj - pad_left in [0, in_w).
            let iw0 = ow * g.stride;
            let kj_lo = g.pad_left.saturating_sub(iw0).min(g.kw);
            let kj_hi = (g.in_w + g.pad_left - iw0).min(g.kw);
            out[tap0..tap0 + kj_lo * c].fill(T::zero());
            out[half + tap0..half + tap0 + kj_lo * c].fill(T::zero());
            out[tap0 + kj_hi * c..tap0 + g.kw * c].fill(T::zero());
            out[half + tap0 + kj_hi * c..half + tap0 + g.kw * c].fill(T::zero());
            if kj_hi > kj_lo {
                let span = kj_hi - kj_lo;
                let iw = iw0 + kj_lo - g.pad_left;
                // Consecutive kw taps touch consecutive pixels; copy each
                // pixel's re/im channel blocks in a short inner loop.
                for s in 0..span {
                    let src = base_in + (ih * g.in_w + iw + s) * row_px;
                    let dst = tap0 + (kj_lo + s) * c;
                    out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    out[half + dst..half + dst + c].copy_from_slice(&x[src + c..src + 2 * c]);
                }
            }
        }
    };

    if col.len() >= PAR_THRESHOLD {
        col.par_chunks_mut(width).enumerate().for_each(|(i, out)| fill_row(i, out));
    } else {
        for (i, out) in col.chunks_mut(width).enumerate() {
            fill_row(i, out);
        }
    }
}

/// Scatter the gradient of the im2col matrix back onto the packed input,
/// accumulating into `dx`. Written as a gather over input pixels so each
/// output element is owned by one task.
pub fn col2im<T: Real>(dcol: &[T], g: &ConvGeom, dx: &mut [T]) {
    let half = g.kh * g.kw * g.in_c;
    let width = 2 * half;
    debug_assert_eq!(dx.len(), g.input_len());
    debug_assert_eq!(dcol.len(), g.rows() * width);

    let c = g.in_c;
    let row_px = 2 * c;
    let stride1 = g.stride == 1;
    let gather_px = |b: usize, ih: usize, iw: usize, out: &mut [T]| {
        for ki in 0..g.kh {
            let num_h = ih + g.pad_top;
            if num_h < ki {
                break; // ki increases; once too large it stays too large
            }
            let num_h = num_h - ki;
            if !stride1 && num_h % g.stride != 0 {
                continue;
            }
            let oh = if stride1 { num_h } else { num_h / g.stride };
            if oh >= g.out_h {
                continue;
            }
            for kj in 0..g.kw {
                let num_w = iw + g.pad_left;
                if num_w < kj {
                    break;
                }
                let num_w = num_w - kj;
                if !stride1 && num_w % g.stride != 0 {
                    continue;
                }
                let ow = if stride1 { num_w } else { num_w / g.stride };
                if ow >= g.out_w {
                    continue;
                }
                let row = (b * g.out_h + oh) * g.out_w + ow;
                let tap = (ki * g.kw + kj) * c;
                let src = row * width + tap;
                for ch in 0..c {
                    out[ch] += dcol[src + ch];
                    out[c + ch] += dcol[half + src + ch];
                }
            }
        }
    };

    let px_rows = g.batch * g.in_h * g.in_w;
    let body = |pi: usize, out: &mut [T]| {
        let b = pi / (g.in_h * g.in_w);
        let rem = pi % (g.in_h * g.in_w);
        gather_px(b, rem / g.in_w, rem % g.in_w, out);
    };
    if px_rows * row_px >= PAR_THRESHOLD {
        dx.par_chunks_mut(row_px).enumerate().for_each(|(pi, out)| body(pi, out));
    } else {
        for (pi, out) in dx.chunks_mut(row_px).enumerate() {
            body(pi, out);
        }
    }
}

/// Build the packed weight matrix `[[Kre, Kim], [-Kim, Kre]]` of shape
/// `[2R, 2Cout]` from kernels stored row-major `[kh, kw, cin, cout]`.
pub fn pack_kernel<T: Real>(kre: &[T], kim: &[T], r: usize, cout: usize, p: &mut [T]) {
    debug_assert_eq!(kre.len(), r * cout);
    debug_assert_eq!(kim.len(), r * cout);
    debug_assert_eq!(p.len(), 4 * r * cout);
    let w = 2 * cout;
    for i in 0..r {
        let (kre_row, kim_row) = (&kre[i * cout..(i + 1) * cout], &kim[i * cout..(i + 1) * cout]);
        let top = &mut p[i * w..i * w + w];
        top[..cout].copy_from_slice(kre_row);
        top[cout..].copy_from_slice(kim_row);
        let bot = &mut p[(r + i) * w..(r + i) * w + w];
        for j in 0..cout {
            bot[j] = -kim_row[j];
        }
        bot[cout..].copy_from_slice(kre_row);
    }
}

/// Fold the packed-matrix gradient back onto the two kernel gradients
/// (accumulating).
pub fn unpack_kernel_grad<T: Real>(dp: &[T], r: usize, cout: usize, dkre: &mut [T], dkim: &mut [T]) {
    let w = 2 * cout;
    for i in 0..r {
        let top = &dp[i * w..i * w + w];
        let bot = &dp[(r + i) * w..(r + i) * w + w];
        let (dre_row, dim_row) = (&mut dkre[i * cout..(i + 1) * cout], &mut dkim[i * cout..(i + 1) * cout]);
        for j in 0..cout {
            dre_row[j] += top[j] + bot[cout + j];
            dim_row[j] += top[cout + j] - bot[j];
        }
    }
}

/// modReLU forward on a packed map: magnitude becomes ReLU(|y| + b_c), phase
/// is preserved. A zero-magnitude input with positive bias lands on the
/// zero-phase convention (output is real-positive). Computed through the
/// bounded unit components re/|y|, im/|y| so subnormal magnitudes cannot
/// overflow.
pub fn modrelu_fwd<T: Real>(x: &[T], bias: &[T], c: usize, out: &mut [T]) {
    debug_assert_eq!(bias.len(), c);
    debug_assert_eq!(x.len(), out.len());
    let row = 2 * c;
    let body = |xr: &[T], o: &mut [T]| {
        for ch in 0..c {
            let (re, im) = (xr[ch], xr[c + ch]);
            let mu = (re * re + im * im).sqrt();
            let s = mu + bias[ch];
            if s > T::zero() {
                if mu > T::zero() {
                    o[ch] = s * (re / mu);
                    o[c + ch] = s * (im / mu);
                } else {
                    o[ch] = s;
                    o[c + ch] = T::zero();
                }
            } else {
                o[ch] = T::zero();
                o[c + ch] = T::zero();
            }
        }
    };
    if x.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(row).zip(x.par_chunks(row)).for_each(|(o, xr)| body(xr, o));
    } else {
        for (o, xr) in out.chunks_mut(row).zip(x.chunks(row)) {
            body(xr, o);
        }
    }
}

/// modReLU backward: accumulates into `dx`; the per-channel bias gradient is
/// accumulated into `dbias`.
///
/// The input gradient carries a 1/|y| factor that genuinely diverges toward
/// the phase singularity; below the precision's kink floor it is cut to zero,
/// extending the exact-zero kink convention to the numerically degenerate
/// neighborhood.
///
/// The bias reduction runs over fixed pixel blocks whose partial sums are
/// combined in block order, so the result is independent of thread count.
pub fn modrelu_bwd<T: Real>(x: &[T], bias: &[T], g: &[T], c: usize, dx: &mut [T], dbias: &mut [T]) {
    let row = 2 * c;
    let floor = T::kink_floor();
    let body = |xr: &[T], gr: &[T], d: &mut [T], db: &mut [T]| {
        for ch in 0..c {
            let (re, im) = (xr[ch], xr[c + ch]);
            let (gre, gim) = (gr[ch], gr[c + ch]);
            let mu = (re * re + im * im).sqrt();
            let b = bias[ch];
            let s = mu + b;
            if s <= T::zero() {
                continue;
            }
            if mu > T::zero() {
                let inv = T::one() / mu;
                let (ure, uim) = (re * inv, im * inv);
                db[ch] += gre * ure + gim * uim;
                if mu > floor {
                    let bom = b * inv; // b/|y|
                    let scale = T::one() + bom;
                    d[ch] += gre * (scale - bom * ure * ure) - gim * bom * ure * uim;
                    d[c + ch] += gim * (scale - bom * uim * uim) - gre * bom * ure * uim;
                }
            } else {
                // Exact zero: the forward output is (s, 0), so only the bias
                // path is live.
                db[ch] += gre;
            }
        }
    };
    if x.len() >= PAR_THRESHOLD {
        const BLOCK: usize = 4096;
        let mut partials: Vec<Vec<T>> = dx
            .par_chunks_mut(BLOCK * row)
            .zip(x.par_chunks(BLOCK * row))
            .zip(g.par_chunks(BLOCK * row))
            .map(|((dblk, xblk), gblk)| {
                let mut db = vec![T::zero(); c];
                for ((d, xr), gr) in dblk.chunks_mut(row).zip(xblk.chunks(row)).zip(gblk.chunks(row)) {
                    body(xr, gr, d, &mut db);
                }
                db
            })
            .collect();
        for db in partials.drain(..) {
            for (o, v) in dbias.iter_mut().zip(&db) {
                *o += *v;
            }
        }
    } else {
        for ((d, xr), gr) in dx.chunks_mut(row).zip(x.chunks(row)).zip(g.chunks(row)) {
            body(xr, gr, d, dbias);
        }
    }
}

/// Elementwise magnitude of a packed map: `[n, 2C] -> [n, C]`.
pub fn magnitude_fwd<T: Real>(x: &[T], c: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), 2 * out.len());
    let body = |xr: &[T], o: &mut [T]| {
        for ch in 0..c {
            o[ch] = (xr[ch] * xr[ch] + xr[c + ch] * xr[c + ch]).sqrt();
        }
    };
    if x.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(c).zip(x.par_chunks(2 * c)).for_each(|(o, xr)| body(xr, o));
    } else {
        for (o, xr) in out.chunks_mut(c).zip(x.chunks(2 * c)) {
            body(xr, o);
        }
    }
}

/// Backward of [`magnitude_fwd`]; gradient at zero magnitude is 0 by the
/// kink convention.
pub fn magnitude_bwd<T: Real>(x: &[T], g: &[T], c: usize, dx: &mut [T]) {
    let body = |xr: &[T], gr: &[T], d: &mut [T]| {
        for ch in 0..c {
            let (re, im) = (xr[ch], xr[c + ch]);
            let mu = (re * re + im * im).sqrt();
            if mu > T::zero() {
                d[ch] += gr[ch] * re / mu;
                d[c + ch] += gr[ch] * im / mu;
            }
        }
    };
    if x.len() >= PAR_THRESHOLD {
        dx.par_chunks_mut(2 * c)
            .zip(x.par_chunks(2 * c))
            .zip(g.par_chunks(c))
            .for_each(|((d, xr), gr)| body(xr, gr, d));
    } else {
        for ((d, xr), gr) in dx.chunks_mut(2 * c).zip(x.chunks(2 * c)).zip(g.chunks(c)) {
            body(xr, gr, d);
        }
    }
}

/// Phase feedback: `x = mag ⊙ z / |z|` on packed maps. `mag` has C real
/// channels per pixel. Zero-magnitude z falls back to the zero-phase
/// convention (`x = mag + 0i`).
pub fn renorm_fwd<T: Real>(z: &[T], mag: &[T], c: usize, out: &mut [T]) {
    debug_assert_eq!(z.len(), 2 * mag.len());
    let body = |zr: &[T], mr: &[T], o: &mut [T]| {
        for ch in 0..c {
            let (re, im) = (zr[ch], zr[c + ch]);
            let mu = (re * re + im * im).sqrt();
            if mu > T::zero() {
                o[ch] = mr[ch] * (re / mu);
                o[c + ch] = mr[ch] * (im / mu);
            } else {
                o[ch] = mr[ch];
                o[c + ch] = T::zero();
            }
        }
    };
    if z.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(2 * c)
            .zip(z.par_chunks(2 * c))
            .zip(mag.par_chunks(c))
            .for_each(|((o, zr), mr)| body(zr, mr, o));
    } else {
        for ((o, zr), mr) in out.chunks_mut(2 * c).zip(z.chunks(2 * c)).zip(mag.chunks(c)) {
            body(zr, mr, o);
        }
    }
}

/// Backward of [`renorm_fwd`] with respect to `z` (the clamp magnitudes are
/// constants). Magnitudes at or below the kink floor contribute nothing,
/// matching the convention at the exact singularity.
pub fn renorm_bwd<T: Real>(z: &[T], mag: &[T], g: &[T], c: usize, dz: &mut [T]) {
    let floor = T::kink_floor();
    let body = |zr: &[T], mr: &[T], gr: &[T], d: &mut [T]| {
        for ch in 0..c {
            let (re, im) = (zr[ch], zr[c + ch]);
            let mu = (re * re + im * im).sqrt();
            if mu > floor {
                let inv = T::one() / mu;
                let (ure, uim) = (re * inv, im * inv);
                let k = mr[ch] * inv;
                let (gre, gim) = (gr[ch], gr[c + ch]);
                d[ch] += k * (gre * uim * uim - gim * ure * uim);
                d[c + ch] += k * (gim * ure * ure - gre * ure * uim);
            }
        }
    };
    if z.len() >= PAR_THRESHOLD {
        dz.par_chunks_mut(2 * c)
            .zip(z.par_chunks(2 * c))
            .zip(mag.par_chunks(c))
            .zip(g.par_chunks(2 * c))
            .for_each(|(((d, zr), mr), gr)| body(zr, mr, gr, d));
    } else {
        for (((d, zr), mr), gr) in dz.chunks_mut(2 * c).zip(z.chunks(2 * c)).zip(mag.chunks(c)).zip(g.chunks(2 * c))
        {
            body(zr, mr, gr, d);
        }
    }
}

/// Nearest-neighbor 2x upsampling of a packed `[B, H, W, 2C]` map.
pub fn upsample2x_fwd<T: Real>(x: &[T], batch: usize, h: usize, w: usize, row: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), batch * h * w * row);
    debug_assert_eq!(out.len(), 4 * x.len());
    let ow = 2 * w;
    let body = |or_idx: usize, orow: &mut [T]| {
        let b = or_idx / (2 * h);
        let oh = or_idx % (2 * h);
        let src = (b * h + oh / 2) * w * row;
        for iw in 0..w {
            let px = &x[src + iw * row..src + (iw + 1) * row];
            orow[2 * iw * row..(2 * iw + 1) * row].copy_from_slice(px);
            orow[(2 * iw + 1) * row..(2 * iw + 2) * row].copy_from_slice(px);
        }
    };
    if out.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(ow * row).enumerate().for_each(|(i, orow)| body(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(ow * row).enumerate() {
            body(i, orow);
        }
    }
}

/// Backward of 2x upsampling: each input pixel accumulates its 2x2 block.
pub fn upsample2x_bwd<T: Real>(g: &[T], batch: usize, h: usize, w: usize, row: usize, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), batch * h * w * row);
    debug_assert_eq!(g.len(), 4 * dx.len());
    let ow = 2 * w;
    let body = |ir_idx: usize, drow: &mut [T]| {
        let b = ir_idx / h;
        let ih = ir_idx % h;
        for (dy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let gh = 2 * ih + dy;
            let gbase = (b * 2 * h + gh) * ow * row;
            for iw in 0..w {
                let gpx = &g[gbase + (2 * iw + dxx) * row..gbase + (2 * iw + dxx + 1) * row];
                let d = &mut drow[iw * row..(iw + 1) * row];
                for (dv, gv) in d.iter_mut().zip(gpx) {
                    *dv += *gv;
                }
            }
        }
    };
    if dx.len() >= PAR_THRESHOLD {
        dx.par_chunks_mut(w * row).enumerate().for_each(|(i, drow)| body(i, drow));
    } else {
        for (i, drow) in dx.chunks_mut(w * row).enumerate() {
            body(i, drow);
        }
    }
}

/// Center crop `[B, H, W, row] -> [B, out_h, out_w, row]` with given offsets.
#[allow(clippy::too_many_arguments)]
pub fn crop_fwd<T: Real>(
    x: &[T],
    batch: usize,
    h: usize,
    w: usize,
    row: usize,
    off_h: usize,
    off_w: usize,
    out_h: usize,
    out_w: usize,
    out: &mut [T],
) {
    debug_assert!(off_h + out_h <= h && off_w + out_w <= w);
    for b in 0..batch {
        for oh in 0..out_h {
            let src = ((b * h + off_h + oh) * w + off_w) * row;
            let dst = (b * out_h + oh) * out_w * row;
            out[dst..dst + out_w * row].copy_from_slice(&x[src..src + out_w * row]);
        }
    }
}

/// Backward of the center crop: scatter into the padded area (accumulating).
#[allow(clippy::too_many_arguments)]
pub fn crop_bwd<T: Real>(
    g: &[T],
    batch: usize,
    h: usize,
    w: usize,
    row: usize,
    off_h: usize,
    off_w: usize,
    out_h: usize,
    out_w: usize,
    dx: &mut [T],
) {
    for b in 0..batch {
        for oh in 0..out_h {
            let dst = ((b * h + off_h + oh) * w + off_w) * row;
            let src = (b * out_h + oh) * out_w * row;
            for i in 0..out_w * row {
                dx[dst + i] += g[src + i];
            }
        }
    }
}
