//! 2-D convolution with stride, zero padding and dilation, lowered to GEMM
//! through an im2col buffer.

use super::matmul::{gemm_nn, gemm_nt, gemm_tn};
use super::GradBundle;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Convolution hyper-parameters and weights.
///
/// `weights` is `[out, in, kh, kw]` and `bias` is `[out]`. Dilation spaces
/// the kernel taps `dilation` pixels apart in the input (à trous).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Zero weights, stride 1, dilation 1, no padding.
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            stride: 1,
            dilation: 1,
            padding: 0,
            weights: Tensor::zeros(vec![out_channels, in_channels, kernel_h, kernel_w]),
            bias: Tensor::zeros(vec![out_channels]),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "stride ({}) and dilation ({}) must be >= 1",
                    self.stride, self.dilation
                ),
            ));
        }
        let want_w = [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w];
        if self.weights.shape() != want_w {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weights shape {:?} does not match {want_w:?}",
                    self.weights.shape()
                ),
            ));
        }
        if self.bias.shape() != [self.out_channels] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {:?} does not match [{}]",
                    self.bias.shape(),
                    self.out_channels
                ),
            ));
        }
        Ok(())
    }

    /// Output extents for an `h x w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span_h = self.dilation * (self.kernel_h - 1) + 1;
        let span_w = self.dilation * (self.kernel_w - 1) + 1;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if span_h > ph || span_w > pw {
            return Err(Error::shape(
                "conv2d",
                format!("receptive field {span_h}x{span_w} exceeds padded input {ph}x{pw}"),
            ));
        }
        Ok(((ph - span_h) / self.stride + 1, (pw - span_w) / self.stride + 1))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// Output columns `lo..hi` whose stride-1 source column `ox + offset` lies
/// inside `0..w`.
fn valid_span(offset: isize, ow: usize, w: usize) -> (usize, usize) {
    let lo = (-offset).clamp(0, ow as isize) as usize;
    let hi = (w as isize - offset).clamp(lo as isize, ow as isize) as usize;
    (lo, hi)
}

fn im2col<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    p: &ConvParams<T>,
    (oh, ow): (usize, usize),
    col: &mut [T],
) {
    let n = oh * ow;
    let (kh, kw) = (p.kernel_h, p.kernel_w);
    let pad = p.padding as isize;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * p.stride + ki * p.dilation) as isize - pad;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let offset = (kj * p.dilation) as isize - pad;
                    if p.stride == 1 {
                        let (lo, hi) = valid_span(offset, ow, w);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        if lo < hi {
                            let s0 = (lo as isize + offset) as usize;
                            out_row[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * p.stride) as isize + offset;
                        *slot = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_accumulate<T: Scalar>(
    col: &[T],
    (c, h, w): (usize, usize, usize),
    p: &ConvParams<T>,
    (oh, ow): (usize, usize),
    dx: &mut [T],
) {
    let n = oh * ow;
    let (kh, kw) = (p.kernel_h, p.kernel_w);
    let pad = p.padding as isize;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * p.stride + ki * p.dilation) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let offset = (kj * p.dilation) as isize - pad;
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    if p.stride == 1 {
                        let (lo, hi) = valid_span(offset, ow, w);
                        if lo < hi {
                            let d0 = (lo as isize + offset) as usize;
                            for (d, &g) in dst[d0..d0 + hi - lo].iter_mut().zip(&src_row[lo..hi]) {
                                *d += g;
                            }
                        }
                        continue;
                    }
                    for (ox, &g) in src_row.iter().enumerate() {
                        let ix = (ox * p.stride) as isize + offset;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

fn check_input<T: Scalar>(
    dims: (usize, usize, usize),
    len: usize,
    p: &ConvParams<T>,
) -> Result<(usize, usize)> {
    p.validate()?;
    let (c, h, w) = dims;
    if c * h * w != len {
        return Err(Error::shape(
            "conv2d",
            format!("input buffer of {len} values for dims {dims:?}"),
        ));
    }
    if c != p.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, layer expects {}", p.in_channels),
        ));
    }
    p.output_extent(h, w)
}

/// Writes the convolution of `x` into `out` (`[out_channels, oh, ow]`),
/// reusing `col` as scratch. Returns the output extents.
pub(crate) fn conv2d_forward_into<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    p: &ConvParams<T>,
    col: &mut Vec<T>,
    out: &mut [T],
) -> Result<(usize, usize)> {
    let (oh, ow) = check_input(dims, x.len(), p)?;
    let n = oh * ow;
    let k = p.patch_len();
    if out.len() != p.out_channels * n {
        return Err(Error::shape(
            "conv2d",
            format!(
                "output buffer of {} values, need {}",
                out.len(),
                p.out_channels * n
            ),
        ));
    }
    col.resize(k * n, T::zero());
    im2col(x, dims, p, (oh, ow), col);
    for (oc, row) in out.chunks_mut(n).enumerate() {
        row.fill(p.bias.data()[oc]);
    }
    gemm_nn(p.out_channels, k, n, p.weights.data(), col, out, true);
    Ok((oh, ow))
}

/// Accumulates weight, bias and (optionally) input gradients.
///
/// `dw`, `db` and `dx` are added to, never overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_accumulate<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    p: &ConvParams<T>,
    grad_out: &[T],
    col: &mut Vec<T>,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) -> Result<()> {
    let (oh, ow) = check_input(dims, x.len(), p)?;
    let n = oh * ow;
    let k = p.patch_len();
    if grad_out.len() != p.out_channels * n {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out has {} values, expected [{}, {oh}, {ow}]",
                grad_out.len(),
                p.out_channels
            ),
        ));
    }
    col.resize(k * n, T::zero());
    im2col(x, dims, p, (oh, ow), col);
    gemm_nt(p.out_channels, n, k, grad_out, col, dw, true);
    for (b, row) in db.iter_mut().zip(grad_out.chunks(n)) {
        *b += row.iter().copied().sum::<T>();
    }
    if let Some(dx) = dx {
        // col now holds d(loss)/d(col)
        gemm_tn(k, p.out_channels, n, p.weights.data(), grad_out, col, false);
        col2im_accumulate(col, dims, p, (oh, ow), dx);
    }
    Ok(())
}

/// Convolves a `[C, H, W]` input.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let dims = x.dims3()?;
    let (oh, ow) = check_input(dims, x.len(), p)?;
    let mut out = vec![T::zero(); p.out_channels * oh * ow];
    let mut col = Vec::new();
    conv2d_forward_into(x.data(), dims, p, &mut col, &mut out)?;
    Tensor::new(vec![p.out_channels, oh, ow], out)
}

/// Gradients of a convolution with respect to its weights, bias and input.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<GradBundle<T>> {
    let dims = x.dims3()?;
    let (oh, ow) = check_input(dims, x.len(), p)?;
    if grad_out.shape() != [p.out_channels, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out shape {:?} does not match output [{}, {oh}, {ow}]",
                grad_out.shape(),
                p.out_channels
            ),
        ));
    }
    let mut dw = Tensor::zeros(p.weights.shape().to_vec());
    let mut db = Tensor::zeros(vec![p.out_channels]);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut col = Vec::new();
    conv2d_backward_accumulate(
        x.data(),
        dims,
        p,
        grad_out.data(),
        &mut col,
        dw.data_mut(),
        db.data_mut(),
        Some(dx.data_mut()),
    )?;
    Ok(GradBundle {
        input: dx,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_yields_bias() {
        let mut p = ConvParams::<f64>::zeros(1, 2, 3, 3).with_padding(1);
        p.weights = Tensor::from_fn(vec![2, 1, 3, 3], |i| i as f64 - 4.0);
        p.bias = Tensor::from_f64(vec![2], &[0.5, -1.5]).unwrap();
        let y = conv2d_forward(&Tensor::zeros(vec![1, 3, 3]), &p).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
        assert!(y.data()[9..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut p = ConvParams::<f64>::zeros(1, 1, 1, 1);
        p.weights = Tensor::full(vec![1, 1, 1, 1], 1.0);
        let x = Tensor::from_fn(vec![1, 4, 5], |i| (i as f64).sqrt());
        assert_eq!(conv2d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn dilated_kernel_sums_spread_taps() {
        let mut p = ConvParams::<f64>::zeros(1, 1, 3, 3).with_dilation(2);
        p.weights = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let x = Tensor::from_fn(vec![1, 5, 5], |i| i as f64 / 25.0);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        // brute force over the 3x3 grid of taps two pixels apart
        let mut want = 0.0;
        for r in [0usize, 2, 4] {
            for c in [0usize, 2, 4] {
                want += x.data()[r * 5 + c];
            }
        }
        assert!((y.data()[0] - want).abs() < 1e-12);
        assert!((want - 4.32).abs() < 1e-12);
    }

    #[test]
    fn same_padding_preserves_extent() {
        for (dil, pad) in [(1, 1), (2, 2)] {
            let p = ConvParams::<f32>::zeros(3, 4, 3, 3)
                .with_dilation(dil)
                .with_padding(pad);
            assert_eq!(p.output_extent(28, 28).unwrap(), (28, 28));
        }
        let p = ConvParams::<f32>::zeros(1, 1, 5, 5).with_padding(2);
        assert_eq!(p.output_extent(7, 9).unwrap(), (7, 9));
    }

    #[test]
    fn strided_output_extent() {
        let p = ConvParams::<f32>::zeros(1, 1, 3, 3)
            .with_stride(2)
            .with_padding(1);
        assert_eq!(p.output_extent(28, 28).unwrap(), (14, 14));
        let p = ConvParams::<f32>::zeros(1, 1, 3, 3).with_dilation(3);
        assert!(p.output_extent(6, 6).is_err());
    }

    #[test]
    fn shape_errors_are_reported() {
        let p = ConvParams::<f64>::zeros(2, 1, 3, 3);
        let x = Tensor::zeros(vec![1, 5, 5]);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Shape { .. })));
        let p = ConvParams::<f64>::zeros(1, 1, 3, 3).with_stride(0);
        assert!(conv2d_forward(&x, &p).is_err());
        let p = ConvParams::<f64>::zeros(1, 1, 3, 3);
        assert!(conv2d_backward(&x, &p, &Tensor::zeros(vec![1, 5, 5])).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut p = ConvParams::<f64>::zeros(2, 3, 3, 3).with_padding(1);
        p.weights = Tensor::from_fn(vec![3, 2, 3, 3], |i| (i as f64).cos());
        let x = Tensor::from_fn(vec![2, 4, 4], |i| (i as f64).sin());
        let g = conv2d_backward(&x, &p, &Tensor::zeros(vec![3, 4, 4])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_routes_one_hot_gradient() {
        let mut p = ConvParams::<f64>::zeros(1, 1, 1, 1);
        p.weights = Tensor::full(vec![1, 1, 1, 1], 1.0);
        let x = Tensor::from_fn(vec![1, 3, 3], |i| i as f64);
        let mut go = Tensor::zeros(vec![1, 3, 3]);
        go.data_mut()[5] = 1.0;
        let g = conv2d_backward(&x, &p, &go).unwrap();
        for (i, &v) in g.input.data().iter().enumerate() {
            assert_eq!(v, if i == 5 { 1.0 } else { 0.0 });
        }
    }
}
