use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradBundle, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given the layer *input* `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("input {:?} vs grad {:?}", x.shape(), grad_out.shape()),
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn pool_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    let [c, h, w] = shape[..] else {
        return Err(Error::shape(op, format!("expected [C, H, W], got {shape:?}")));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            op,
            format!("2x2 pooling needs even extents, got {h}x{w}"),
        ));
    }
    Ok((c, h, w))
}

pub(crate) fn avgpool2d_into<T: Scalar>(x: &[T], (c, h, w): (usize, usize, usize), out: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    for ch in 0..c {
        let plane = &x[ch * h * w..];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &plane[2 * y * w..];
            let r1 = &plane[(2 * y + 1) * w..];
            for xo in 0..ow {
                let s = r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1];
                dst[y * ow + xo] = s * quarter;
            }
        }
    }
}

pub(crate) fn avgpool2d_backward_accumulate<T: Scalar>(
    grad_out: &[T],
    (c, h, w): (usize, usize, usize),
    dx: &mut [T],
) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    for ch in 0..c {
        let src = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let g = src[y * ow + xo] * quarter;
                plane[2 * y * w + 2 * xo] += g;
                plane[2 * y * w + 2 * xo + 1] += g;
                plane[(2 * y + 1) * w + 2 * xo] += g;
                plane[(2 * y + 1) * w + 2 * xo + 1] += g;
            }
        }
    }
}

/// Non-overlapping 2x2 average pooling with stride 2. Odd extents are rejected.
pub fn avgpool2d_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = pool_dims("avgpool2d", x.shape())?;
    let mut out = vec![T::zero(); c * (h / 2) * (w / 2)];
    avgpool2d_into(x.data(), (c, h, w), &mut out);
    Tensor::new(vec![c, h / 2, w / 2], out)
}

pub fn avgpool2d_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let (c, h, w) = pool_dims("avgpool2d_backward", input_shape)?;
    if grad_out.shape() != [c, h / 2, w / 2] {
        return Err(Error::shape(
            "avgpool2d_backward",
            format!(
                "grad {:?} does not match pooled input {input_shape:?}",
                grad_out.shape()
            ),
        ));
    }
    let mut dx = vec![T::zero(); c * h * w];
    avgpool2d_backward_accumulate(grad_out.data(), (c, h, w), &mut dx);
    Tensor::new(input_shape.to_vec(), dx)
}

/// Fully connected layer, `weights: [out, in]`, `bias: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weights: Tensor::zeros(vec![out_features, in_features]),
            bias: Tensor::zeros(vec![out_features]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.shape() != [self.out_features, self.in_features]
            || self.bias.shape() != [self.out_features]
        {
            return Err(Error::shape(
                "dense",
                format!(
                    "weights {:?} / bias {:?} inconsistent with {} -> {}",
                    self.weights.shape(),
                    self.bias.shape(),
                    self.in_features,
                    self.out_features
                ),
            ));
        }
        Ok(())
    }
}

const LANES: usize = 8;

/// Dot product with a fixed lane-wise summation order, which lets the
/// compiler vectorise it without reassociating.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    acc.iter().fold(T::zero(), |s, &v| s + v) + tail
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

pub(crate) fn dense_forward_into<T: Scalar>(x: &[T], p: &DenseParams<T>, out: &mut [T]) {
    let rows = p.weights.data().chunks_exact(p.in_features);
    for ((o, row), &b) in out.iter_mut().zip(rows).zip(p.bias.data()) {
        *o = b + dot(row, x);
    }
}

pub(crate) fn dense_backward_accumulate<T: Scalar>(
    x: &[T],
    p: &DenseParams<T>,
    grad_out: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    for (row, &g) in dw.chunks_exact_mut(p.in_features).zip(grad_out) {
        axpy(g, x, row);
    }
    for (b, &g) in db.iter_mut().zip(grad_out) {
        *b += g;
    }
    if let Some(dx) = dx {
        let rows = p.weights.data().chunks_exact(p.in_features);
        for (row, &g) in rows.zip(grad_out) {
            axpy(g, row, dx);
        }
    }
}

fn check_dense<T: Scalar>(x: &Tensor<T>, p: &DenseParams<T>) -> Result<()> {
    p.validate()?;
    if x.len() != p.in_features {
        return Err(Error::shape(
            "dense",
            format!("input has {} values, layer expects {}", x.len(), p.in_features),
        ));
    }
    Ok(())
}

pub fn dense_forward<T: Scalar>(x: &Tensor<T>, p: &DenseParams<T>) -> Result<Tensor<T>> {
    check_dense(x, p)?;
    let mut out = vec![T::zero(); p.out_features];
    dense_forward_into(x.data(), p, &mut out);
    Tensor::new(vec![p.out_features], out)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &DenseParams<T>,
    grad_out: &Tensor<T>,
) -> Result<GradBundle<T>> {
    check_dense(x, p)?;
    if grad_out.len() != p.out_features {
        return Err(Error::shape(
            "dense_backward",
            format!(
                "grad has {} values, layer has {} outputs",
                grad_out.len(),
                p.out_features
            ),
        ));
    }
    let mut dw = Tensor::zeros(p.weights.shape().to_vec());
    let mut db = Tensor::zeros(vec![p.out_features]);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    dense_backward_accumulate(
        x.data(),
        p,
        grad_out.data(),
        dw.data_mut(),
        db.data_mut(),
        Some(dx.data_mut()),
    );
    Ok(GradBundle {
        input: dx,
        weights: dw,
        bias: db,
    })
}

/// Stacks `first` then `second` along the channel axis.
pub fn concat_channels_forward<T: Scalar>(first: &Tensor<T>, second: &Tensor<T>) -> Result<Tensor<T>> {
    let (c1, h1, w1) = first.dims3()?;
    let (c2, h2, w2) = second.dims3()?;
    if (h1, w1) != (h2, w2) {
        return Err(Error::shape(
            "concat_channels",
            format!("spatial extents differ: {h1}x{w1} vs {h2}x{w2}"),
        ));
    }
    let mut data = Vec::with_capacity(first.len() + second.len());
    data.extend_from_slice(first.data());
    data.extend_from_slice(second.data());
    Tensor::new(vec![c1 + c2, h1, w1], data)
}

/// Splits a concatenated gradient back into the two branch gradients.
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    first_channels: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = grad_out.dims3()?;
    if first_channels == 0 || first_channels >= c {
        return Err(Error::shape(
            "concat_channels_backward",
            format!("cannot split {c} channels at {first_channels}"),
        ));
    }
    let split = first_channels * h * w;
    let (a, b) = grad_out.data().split_at(split);
    Ok((
        Tensor::new(vec![first_channels, h, w], a.to_vec())?,
        Tensor::new(vec![c - first_channels, h, w], b.to_vec())?,
    ))
}

pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.clone().reshape(vec![x.len()]).expect("flatten keeps length")
}

/// Per-element multipliers applied by inverted dropout: `0` for dropped
/// units, `1 / (1 - rate)` for kept ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T = f32> {
    scale: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn identity(len: usize) -> Self {
        Self {
            scale: vec![T::one(); len],
        }
    }

    pub fn from_scale(scale: Vec<T>) -> Self {
        Self { scale }
    }

    /// Draws a keep/drop decision per element from a ChaCha8 stream.
    pub fn sample(len: usize, rate: f64, seed: u64) -> Result<Self> {
        let mut m = Self::identity(len);
        m.resample(rate, seed)?;
        Ok(m)
    }

    pub(crate) fn resample(&mut self, rate: f64, seed: u64) -> Result<()> {
        check_rate(rate)?;
        let keep = T::lit(1.0 / (1.0 - rate));
        // a unit is dropped when a uniform 32-bit draw falls below rate * 2^32
        let threshold = (rate * 4_294_967_296.0).ceil() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut self.scale {
            *s = if u64::from(rng.next_u32()) >= threshold {
                keep
            } else {
                T::zero()
            };
        }
        Ok(())
    }

    pub(crate) fn resize_identity(&mut self, len: usize) {
        self.scale.clear();
        self.scale.resize(len, T::one());
    }

    pub fn scale(&self) -> &[T] {
        &self.scale
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted dropout. Evaluation mode (`training == false`) is the identity.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    seed: u64,
    training: bool,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    check_rate(rate)?;
    if !training {
        return Ok((x.clone(), DropoutMask::identity(x.len())));
    }
    let mask = DropoutMask::sample(x.len(), rate, seed)?;
    let data = x.data().iter().zip(mask.scale()).map(|(&v, &s)| v * s).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, mask))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: &DropoutMask<T>) -> Result<Tensor<T>> {
    if grad_out.len() != mask.scale().len() {
        return Err(Error::shape(
            "dropout_backward",
            format!(
                "grad has {} values, mask has {}",
                grad_out.len(),
                mask.scale().len()
            ),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(mask.scale())
        .map(|(&g, &s)| g * s)
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}
