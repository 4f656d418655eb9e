//! Complex-valued feature maps and the differentiable op set of the model:
//! complex 2-D convolution, modReLU, nearest-neighbor upsampling and the
//! polar/Cartesian conversions.
//!
//! Storage is Cartesian (separate real and imaginary arrays); magnitude and
//! phase are derived views. Convolution uses cross-correlation (no kernel
//! flip) with "same"-style zero padding so the output extent is
//! ceil(extent/stride) per spatial axis.

pub mod raw;

use crate::error::{Error, Result};
use crate::real::{par_gemm, MatRef, Real};
use crate::tensor::Tensor;
use raw::{same_padding, ConvGeom};

/// An `H x W x C` complex-valued feature map stored as two real arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMap<T> {
    height: usize,
    width: usize,
    channels: usize,
    re: Tensor<T>,
    im: Tensor<T>,
}

impl<T: Real> ComplexMap<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        ComplexMap {
            height,
            width,
            channels,
            re: Tensor::zeros(&[height, width, channels]),
            im: Tensor::zeros(&[height, width, channels]),
        }
    }

    pub fn from_parts(height: usize, width: usize, channels: usize, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        let n = height * width * channels;
        if re.len() != n || im.len() != n {
            return Err(Error::shape(format!(
                "complex map parts must have {n} entries, got re={} im={}",
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexMap {
            height,
            width,
            channels,
            re: Tensor::from_vec(&[height, width, channels], re),
            im: Tensor::from_vec(&[height, width, channels], im),
        })
    }

    /// Constant map with every element `re + i*im`.
    pub fn constant(height: usize, width: usize, channels: usize, re: T, im: T) -> Self {
        ComplexMap {
            height,
            width,
            channels,
            re: Tensor::full(&[height, width, channels], re),
            im: Tensor::full(&[height, width, channels], im),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn re(&self) -> &[T] {
        self.re.data()
    }

    pub fn im(&self) -> &[T] {
        self.im.data()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    pub fn get(&self, h: usize, w: usize, c: usize) -> (T, T) {
        let i = self.index(h, w, c);
        (self.re.data()[i], self.im.data()[i])
    }

    pub fn set(&mut self, h: usize, w: usize, c: usize, re: T, im: T) {
        let i = self.index(h, w, c);
        self.re.data_mut()[i] = re;
        self.im.data_mut()[i] = im;
    }

    pub fn magnitude_at(&self, h: usize, w: usize, c: usize) -> T {
        let (re, im) = self.get(h, w, c);
        (re * re + im * im).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.re.all_finite() && self.im.all_finite()
    }

    /// Packed view `[H*W, 2C]`: real channels then imaginary channels per
    /// pixel, the layout the compute kernels work in.
    pub fn to_packed(&self) -> Vec<T> {
        let c = self.channels;
        let mut out = vec![T::zero(); 2 * self.re.len()];
        for (px, o) in out.chunks_mut(2 * c).enumerate() {
            o[..c].copy_from_slice(&self.re.data()[px * c..(px + 1) * c]);
            o[c..].copy_from_slice(&self.im.data()[px * c..(px + 1) * c]);
        }
        out
    }

    pub fn from_packed(height: usize, width: usize, channels: usize, packed: &[T]) -> Self {
        assert_eq!(packed.len(), 2 * height * width * channels);
        let c = channels;
        let mut re = vec![T::zero(); height * width * c];
        let mut im = vec![T::zero(); height * width * c];
        for (px, p) in packed.chunks(2 * c).enumerate() {
            re[px * c..(px + 1) * c].copy_from_slice(&p[..c]);
            im[px * c..(px + 1) * c].copy_from_slice(&p[c..]);
        }
        ComplexMap::from_parts(height, width, channels, re, im).expect("sizes agree")
    }

    pub fn to_f64(&self) -> ComplexMap<f64> {
        ComplexMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            re: self.re.to_f64(),
            im: self.im.to_f64(),
        }
    }
}

/// Per-side zero padding (top, bottom, left, right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Complex convolution kernel, stored row-major `[kh, kw, cin, cout]`.
#[derive(Debug, Clone)]
pub struct ComplexKernel<T> {
    kh: usize,
    kw: usize,
    in_channels: usize,
    out_channels: usize,
    re: Tensor<T>,
    im: Tensor<T>,
    stride: usize,
    padding: Padding,
}

impl<T: Real> ComplexKernel<T> {
    pub fn new(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        re: Vec<T>,
        im: Vec<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let n = kh * kw * in_channels * out_channels;
        if re.len() != n || im.len() != n {
            return Err(Error::shape(format!("kernel parts must have {n} entries")));
        }
        if stride < 1 {
            return Err(Error::config("kernel stride must be >= 1"));
        }
        if out_channels < 1 {
            return Err(Error::config("kernel must have at least one output channel"));
        }
        if !(re.iter().all(|v| v.is_finite()) && im.iter().all(|v| v.is_finite())) {
            return Err(Error::numeric("kernel contains non-finite entries"));
        }
        let shape = [kh, kw, in_channels, out_channels];
        Ok(ComplexKernel {
            kh,
            kw,
            in_channels,
            out_channels,
            re: Tensor::from_vec(&shape, re),
            im: Tensor::from_vec(&shape, im),
            stride,
            padding,
        })
    }

    /// Kernel with "same" padding computed for the given input extent.
    #[allow(clippy::too_many_arguments)]
    pub fn same(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        re: Vec<T>,
        im: Vec<T>,
        stride: usize,
        input_extent: (usize, usize),
    ) -> Result<Self> {
        let (top, bottom) = same_padding(input_extent.0, kh, stride);
        let (left, right) = same_padding(input_extent.1, kw, stride);
        ComplexKernel::new(kh, kw, in_channels, out_channels, re, im, stride, Padding { top, bottom, left, right })
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn re(&self) -> &[T] {
        self.re.data()
    }

    pub fn im(&self) -> &[T] {
        self.im.data()
    }

    pub fn geometry(&self, input: &ComplexMap<T>) -> ConvGeom {
        ConvGeom::explicit(
            1,
            input.height,
            input.width,
            self.in_channels,
            self.kh,
            self.kw,
            self.stride,
            [self.padding.top, self.padding.bottom, self.padding.left, self.padding.right],
        )
    }
}

/// Complex 2-D convolution (cross-correlation) of a map with a kernel.
///
/// Computed as four real correlations folded into one packed matrix product:
/// `out.re = corr(x.re, k.re) - corr(x.im, k.im)` and
/// `out.im = corr(x.re, k.im) + corr(x.im, k.re)`.
pub fn complex_conv2d<T: Real>(input: &ComplexMap<T>, kernel: &ComplexKernel<T>) -> Result<ComplexMap<T>> {
    if input.channels != kernel.in_channels {
        return Err(Error::config(format!(
            "input has {} channels but kernel expects {}",
            input.channels, kernel.in_channels
        )));
    }
    if !input.all_finite() {
        return Err(Error::numeric("convolution input contains non-finite values"));
    }
    let g = kernel.geometry(input);
    let x = input.to_packed();
    let r = g.kh * g.kw * g.in_c;
    let cout = kernel.out_channels;

    let mut col = vec![T::zero(); g.rows() * g.col_width()];
    raw::im2col(&x, &g, &mut col);
    let mut packed_k = vec![T::zero(); 4 * r * cout];
    raw::pack_kernel(kernel.re(), kernel.im(), r, cout, &mut packed_k);
    let mut out = vec![T::zero(); g.rows() * 2 * cout];
    par_gemm(
        g.rows(),
        2 * r,
        2 * cout,
        MatRef::row_major(&col, 2 * r),
        MatRef::row_major(&packed_k, 2 * cout),
        &mut out,
    );
    Ok(ComplexMap::from_packed(g.out_h, g.out_w, cout, &out))
}

/// modReLU: `h = ReLU(|y| + b) ⊙ e^{i·phase(y)}`, applied per channel.
pub fn mod_relu<T: Real>(input: &ComplexMap<T>, bias: &[T]) -> Result<ComplexMap<T>> {
    if bias.len() != input.channels {
        return Err(Error::shape(format!(
            "bias length {} does not match {} channels",
            bias.len(),
            input.channels
        )));
    }
    let x = input.to_packed();
    let mut out = vec![T::zero(); x.len()];
    raw::modrelu_fwd(&x, bias, input.channels, &mut out);
    Ok(ComplexMap::from_packed(input.height, input.width, input.channels, &out))
}

/// Nearest-neighbor 2x upsampling; replication is identical in Cartesian and
/// polar form, so this covers both readings of "upsample magnitude and phase
/// independently".
pub fn nearest_upsample2x<T: Real>(input: &ComplexMap<T>) -> ComplexMap<T> {
    let x = input.to_packed();
    let mut out = vec![T::zero(); 4 * x.len()];
    raw::upsample2x_fwd(&x, 1, input.height, input.width, 2 * input.channels, &mut out);
    ComplexMap::from_packed(2 * input.height, 2 * input.width, input.channels, &out)
}

/// Center crop to `(out_h, out_w)`; the excess goes half before (rounded
/// down), half after.
pub fn center_crop<T: Real>(input: &ComplexMap<T>, out_h: usize, out_w: usize) -> ComplexMap<T> {
    assert!(out_h <= input.height && out_w <= input.width, "crop larger than input");
    let x = input.to_packed();
    let row = 2 * input.channels;
    let mut out = vec![T::zero(); out_h * out_w * row];
    raw::crop_fwd(
        &x,
        1,
        input.height,
        input.width,
        row,
        (input.height - out_h) / 2,
        (input.width - out_w) / 2,
        out_h,
        out_w,
        &mut out,
    );
    ComplexMap::from_packed(out_h, out_w, input.channels, &out)
}

/// Split a map into its (magnitude, phase) views. The phase of a
/// zero-magnitude element is 0 by convention.
pub fn to_polar<T: Real>(input: &ComplexMap<T>) -> (Tensor<T>, Tensor<T>) {
    let n = input.len();
    let mut mag = vec![T::zero(); n];
    let mut phase = vec![T::zero(); n];
    for i in 0..n {
        let (re, im) = (input.re()[i], input.im()[i]);
        let mu = (re * re + im * im).sqrt();
        mag[i] = mu;
        phase[i] = if mu > T::zero() { im.atan2(re) } else { T::zero() };
    }
    let shape = [input.height, input.width, input.channels];
    (Tensor::from_vec(&shape, mag), Tensor::from_vec(&shape, phase))
}

/// Rebuild a map from magnitude and phase arrays of identical shape.
pub fn to_cartesian<T: Real>(magnitude: &Tensor<T>, phase: &Tensor<T>) -> Result<ComplexMap<T>> {
    if magnitude.shape() != phase.shape() {
        return Err(Error::shape("magnitude and phase shapes differ".to_string()));
    }
    if magnitude.shape().len() != 3 {
        return Err(Error::shape("expected [H, W, C] arrays".to_string()));
    }
    if magnitude.data().iter().any(|&m| m < T::zero()) {
        return Err(Error::contract("negative magnitude passed to to_cartesian"));
    }
    let (h, w, c) = (magnitude.shape()[0], magnitude.shape()[1], magnitude.shape()[2]);
    let mut re = vec![T::zero(); magnitude.len()];
    let mut im = vec![T::zero(); magnitude.len()];
    for i in 0..magnitude.len() {
        let (m, p) = (magnitude.data()[i], phase.data()[i]);
        re[i] = m * p.cos();
        im[i] = m * p.sin();
    }
    ComplexMap::from_parts(h, w, c, re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop complex convolution, the independent oracle for the
    /// gemm-based path.
    fn conv_oracle(input: &ComplexMap<f64>, kernel: &ComplexKernel<f64>) -> ComplexMap<f64> {
        let g = kernel.geometry(input);
        let mut out = ComplexMap::zeros(g.out_h, g.out_w, kernel.out_channels());
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                for co in 0..kernel.out_channels() {
                    let (mut acc_re, mut acc_im) = (0.0, 0.0);
                    for ki in 0..kernel.kh() {
                        for kj in 0..kernel.kw() {
                            let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                            let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                            if ih < 0 || iw < 0 || ih >= input.height() as isize || iw >= input.width() as isize {
                                continue;
                            }
                            for ci in 0..kernel.in_channels() {
                                let (xr, xi) = input.get(ih as usize, iw as usize, ci);
                                let kidx = ((ki * kernel.kw() + kj) * kernel.in_channels() + ci)
                                    * kernel.out_channels()
                                    + co;
                                let (wr, wi) = (kernel.re()[kidx], kernel.im()[kidx]);
                                acc_re += xr * wr - xi * wi;
                                acc_im += xr * wi + xi * wr;
                            }
                        }
                    }
                    out.set(oh, ow, co, acc_re, acc_im);
                }
            }
        }
        out
    }

    fn pseudo_map(h: usize, w: usize, c: usize, salt: u64) -> ComplexMap<f64> {
        let n = h * w * c;
        let f = |i: usize, k: u64| (((i as u64).wrapping_mul(k).wrapping_add(salt) % 1000) as f64) / 500.0 - 1.0;
        ComplexMap::from_parts(
            h,
            w,
            c,
            (0..n).map(|i| f(i, 2654435761)).collect(),
            (0..n).map(|i| f(i, 40503)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = pseudo_map(4, 5, 1, 3);
        let k = ComplexKernel::same(1, 1, 1, 1, vec![1.0], vec![0.0], 1, (4, 5)).unwrap();
        let y = complex_conv2d(&x, &k).unwrap();
        for i in 0..x.len() {
            assert_eq!(y.re()[i], x.re()[i]);
            assert_eq!(y.im()[i], x.im()[i]);
        }
    }

    #[test]
    fn i_kernel_rotates_phase_by_half_pi() {
        // (1 + 0i) * i = 0 + 1i: phase rotated, magnitude preserved.
        let x = ComplexMap::constant(3, 3, 1, 1.0, 0.0);
        let k = ComplexKernel::same(1, 1, 1, 1, vec![0.0], vec![1.0], 1, (3, 3)).unwrap();
        let y = complex_conv2d(&x, &k).unwrap();
        for px in 0..9 {
            assert_eq!(y.re()[px], 0.0);
            assert_eq!(y.im()[px], 1.0);
        }
    }

    #[test]
    fn conv_matches_direct_sum_oracle() {
        for (salt, stride) in [(1u64, 1usize), (2, 2), (3, 2)] {
            let x = pseudo_map(5, 5, 2, salt);
            let n = 3 * 3 * 2 * 4;
            let kre: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 13) as f64 / 13.0 - 0.5).collect();
            let kim: Vec<f64> = (0..n).map(|i| ((i * 11 + 5) % 17) as f64 / 17.0 - 0.5).collect();
            let k = ComplexKernel::same(3, 3, 2, 4, kre, kim, stride, (5, 5)).unwrap();
            let got = complex_conv2d(&x, &k).unwrap();
            let want = conv_oracle(&x, &k);
            assert_eq!(got.height(), want.height());
            let mut max_rel: f64 = 0.0;
            for i in 0..got.len() {
                for (a, b) in [(got.re()[i], want.re()[i]), (got.im()[i], want.im()[i])] {
                    max_rel = max_rel.max((a - b).abs() / b.abs().max(1.0));
                }
            }
            assert!(max_rel <= 1e-12, "stride {stride}: max rel err {max_rel}");
        }
    }

    #[test]
    fn conv_is_additive_and_phase_equivariant() {
        let x1 = pseudo_map(6, 6, 2, 10);
        let x2 = pseudo_map(6, 6, 2, 20);
        let n = 3 * 3 * 2 * 3;
        let k = ComplexKernel::same(
            3,
            3,
            2,
            3,
            (0..n).map(|i| (i as f64 * 0.37).sin()).collect(),
            (0..n).map(|i| (i as f64 * 0.73).cos()).collect(),
            1,
            (6, 6),
        )
        .unwrap();

        // Additivity: conv(x1 + x2) == conv(x1) + conv(x2).
        let sum = ComplexMap::from_parts(
            6,
            6,
            2,
            x1.re().iter().zip(x2.re()).map(|(a, b)| a + b).collect(),
            x1.im().iter().zip(x2.im()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let y_sum = complex_conv2d(&sum, &k).unwrap();
        let y1 = complex_conv2d(&x1, &k).unwrap();
        let y2 = complex_conv2d(&x2, &k).unwrap();
        for i in 0..y_sum.len() {
            assert!((y_sum.re()[i] - y1.re()[i] - y2.re()[i]).abs() < 1e-10);
            assert!((y_sum.im()[i] - y1.im()[i] - y2.im()[i]).abs() < 1e-10);
        }

        // Global phase equivariance: conv(e^{i t} x) == e^{i t} conv(x).
        let theta: f64 = 0.83;
        let (ct, st) = (theta.cos(), theta.sin());
        let rotated = ComplexMap::from_parts(
            6,
            6,
            2,
            x1.re().iter().zip(x1.im()).map(|(r, i)| r * ct - i * st).collect(),
            x1.re().iter().zip(x1.im()).map(|(r, i)| r * st + i * ct).collect(),
        )
        .unwrap();
        let y_rot = complex_conv2d(&rotated, &k).unwrap();
        for i in 0..y1.len() {
            let want_re = y1.re()[i] * ct - y1.im()[i] * st;
            let want_im = y1.re()[i] * st + y1.im()[i] * ct;
            assert!((y_rot.re()[i] - want_re).abs() < 1e-10);
            assert!((y_rot.im()[i] - want_im).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_rejects_bad_inputs() {
        let x = pseudo_map(4, 4, 2, 5);
        let k = ComplexKernel::same(3, 3, 3, 2, vec![0.0; 54], vec![0.0; 54], 1, (4, 4)).unwrap();
        assert!(matches!(complex_conv2d(&x, &k), Err(Error::Config(_))));

        let mut bad = pseudo_map(4, 4, 3, 5);
        bad.set(0, 0, 0, f64::NAN, 0.0);
        let k = ComplexKernel::same(1, 1, 3, 2, vec![0.0; 6], vec![0.0; 6], 1, (4, 4)).unwrap();
        assert!(matches!(complex_conv2d(&bad, &k), Err(Error::Numeric(_))));
    }

    #[test]
    fn modrelu_matches_contract() {
        // ReLU(1 - 0.5) = 0.5 with phase 0.
        let x = ComplexMap::constant(1, 1, 1, 1.0, 0.0);
        let y = mod_relu(&x, &[-0.5]).unwrap();
        assert_eq!(y.get(0, 0, 0), (0.5, 0.0));

        // |y| = 0.3 with b = -0.5 clamps to exactly zero.
        let x = ComplexMap::constant(1, 1, 1, 0.3 * (0.7f64).cos(), 0.3 * (0.7f64).sin());
        let y = mod_relu(&x, &[-0.5]).unwrap();
        assert_eq!(y.get(0, 0, 0), (0.0, 0.0));

        // b = 0 preserves magnitudes and phases everywhere.
        let x = pseudo_map(4, 3, 2, 9);
        let y = mod_relu(&x, &[0.0, 0.0]).unwrap();
        for i in 0..x.len() {
            assert!((y.re()[i] - x.re()[i]).abs() < 1e-15);
            assert!((y.im()[i] - x.im()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn modrelu_never_grows_magnitude_with_negative_bias() {
        let x = pseudo_map(5, 5, 3, 21);
        let y = mod_relu(&x, &[-0.1, -0.2, 0.0]).unwrap();
        for h in 0..5 {
            for w in 0..5 {
                for c in 0..3 {
                    let before = x.magnitude_at(h, w, c);
                    let after = y.magnitude_at(h, w, c);
                    assert!(after <= before + 1e-12);
                    if after > 0.0 {
                        // Surviving elements keep their phase.
                        let (xr, xi) = x.get(h, w, c);
                        let (yr, yi) = y.get(h, w, c);
                        assert!((xi.atan2(xr) - yi.atan2(yr)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn upsample_replicates_and_commutes_with_polar() {
        let x = ComplexMap::constant(1, 1, 1, 0.3, 0.4);
        let y = nearest_upsample2x(&x);
        assert_eq!((y.height(), y.width()), (2, 2));
        for px in 0..4 {
            assert_eq!(y.re()[px], 0.3);
            assert_eq!(y.im()[px], 0.4);
        }

        // Checkerboard of a+0i / 0+bi stays exact under replication.
        let mut cb = ComplexMap::zeros(2, 2, 1);
        cb.set(0, 0, 0, 0.7, 0.0);
        cb.set(0, 1, 0, 0.0, 0.9);
        cb.set(1, 0, 0, 0.0, 0.9);
        cb.set(1, 1, 0, 0.7, 0.0);
        let up = nearest_upsample2x(&cb);
        for h in 0..4 {
            for w in 0..4 {
                assert_eq!(up.get(h, w, 0), cb.get(h / 2, w / 2, 0), "at ({h},{w})");
            }
        }

        // polar(upsample(x)) == upsample-of-polar exactly.
        let x = pseudo_map(3, 4, 2, 33);
        let (mag_up, phase_up) = to_polar(&nearest_upsample2x(&x));
        let (mag, phase) = to_polar(&x);
        for h in 0..6 {
            for w in 0..8 {
                for c in 0..2 {
                    let up_idx = (h * 8 + w) * 2 + c;
                    let idx = ((h / 2) * 4 + w / 2) * 2 + c;
                    assert_eq!(mag_up.data()[up_idx], mag.data()[idx]);
                    assert_eq!(phase_up.data()[up_idx], phase.data()[idx]);
                }
            }
        }
    }

    #[test]
    fn polar_conventions() {
        let one = ComplexMap::constant(1, 1, 1, 1.0, 0.0);
        let (m, p) = to_polar(&one);
        assert_eq!((m.data()[0], p.data()[0]), (1.0, 0.0));

        let zero = ComplexMap::zeros(1, 1, 1);
        let (m, p) = to_polar(&zero);
        assert_eq!((m.data()[0], p.data()[0]), (0.0, 0.0));

        let neg = Tensor::from_vec(&[1, 1, 1], vec![-0.1]);
        let ph = Tensor::zeros(&[1, 1, 1]);
        assert!(matches!(to_cartesian(&neg, &ph), Err(Error::Contract(_))));
    }

    #[test]
    fn magnitude_nonnegative_after_every_op() {
        let x = pseudo_map(5, 4, 2, 77);
        let n = 3 * 3 * 2 * 2;
        let k = ComplexKernel::same(
            3,
            3,
            2,
            2,
            (0..n).map(|i| (i as f64 * 0.11).sin()).collect(),
            (0..n).map(|i| (i as f64 * 0.19).cos()).collect(),
            2,
            (5, 4),
        )
        .unwrap();
        for map in [
            complex_conv2d(&x, &k).unwrap(),
            mod_relu(&x, &[-0.3, 0.2]).unwrap(),
            nearest_upsample2x(&x),
        ] {
            for h in 0..map.height() {
                for w in 0..map.width() {
                    for c in 0..map.channels() {
                        assert!(map.magnitude_at(h, w, c) >= 0.0);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn polar_round_trip(values in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..200)) {
            let n = values.len();
            let re: Vec<f64> = values.iter().map(|v| v.0).collect();
            let im: Vec<f64> = values.iter().map(|v| v.1).collect();
            let x = ComplexMap::from_parts(n, 1, 1, re, im).unwrap();
            let (mag, phase) = to_polar(&x);
            let back = to_cartesian(&mag, &phase).unwrap();
            for i in 0..n {
                let scale = x.re()[i].abs().max(x.im()[i].abs()).max(1.0);
                prop_assert!((back.re()[i] - x.re()[i]).abs() / scale < 1e-12);
                prop_assert!((back.im()[i] - x.im()[i]).abs() / scale < 1e-12);
            }
        }
    }
}
