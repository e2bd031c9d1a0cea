//! Dense row-major `f64` arrays and the pure forward kernels the model is
//! built from.
//!
//! Everything here is a plain function of its inputs. The recording
//! versions that support reverse-mode differentiation live in
//! [`crate::tape`] and call into these kernels.

use std::fmt;

use crate::error::{Error, Result};

/// A dense row-major array of `f64` values.
///
/// The shape is never empty and every dimension is at least 1; a scalar has
/// shape `[1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "tensor dimensions must all be >= 1, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "empty vector");
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape("elementwise op", self, other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with [`Error::NonFinite`] naming `what` if any value is NaN or
    /// infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} of shape {:?} is {}",
                self.shape, self.data[i]
            ))),
        }
    }

    /// Slice `index` along the first axis, as an owned tensor.
    pub fn index_first(&self, index: usize) -> Tensor {
        assert!(self.rank() >= 2 && index < self.shape[0]);
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            same_shape("stack", first, p)?;
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Config(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

fn chw(what: &str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Config(format!(
            "{what}: expected a [C,H,W] tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Checked geometry of a stride-1 same-padded convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn check(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Self> {
        let (c_in, h, w) = chw("conv2d input", input)?;
        let (c_out, kc, k) = match *kernel.shape() {
            [o, i, kh, kw] if kh == kw => (o, i, kh),
            _ => {
                return Err(Error::Config(format!(
                    "conv2d kernel must be [C_out,C_in,k,k], got {:?}",
                    kernel.shape()
                )))
            }
        };
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel size {k} must be odd")));
        }
        if kc != c_in {
            return Err(Error::Config(format!(
                "conv2d kernel {:?} expects {kc} input channels but input is {:?}",
                kernel.shape(),
                input.shape()
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::Config(format!(
                "conv2d bias {:?} does not match kernel {:?}",
                bias.shape(),
                kernel.shape()
            )));
        }
        Ok(ConvGeom { c_in, c_out, h, w, k })
    }

    /// Valid output range along one axis for kernel offset `d`.
    #[inline]
    fn range(&self, d: usize, len: usize) -> (usize, usize) {
        let p = self.k / 2;
        let lo = p.saturating_sub(d);
        let hi = (len + p).saturating_sub(d).min(len);
        (lo, hi)
    }
}

/// Stride-1 convolution with zero "same" padding of `(k-1)/2`.
///
/// `out[o,y,x] = bias[o] + Σ input[i, y+dy-p, x+dx-p] · kernel[o,i,dy,dx]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = ConvGeom::check(input, kernel, bias)?;
    Ok(conv2d_unchecked(g, input.data(), kernel.data(), bias.data()))
}

pub(crate) fn conv2d_unchecked(g: ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Tensor {
    let hw = g.h * g.w;
    let ckk = g.c_in * g.k * g.k;
    let col = im2col(g, input);
    let mut out = vec![0.0; g.c_out * hw];
    for o in 0..g.c_out {
        let plane = &mut out[o * hw..(o + 1) * hw];
        plane.fill(bias[o]);
        for (j, &wgt) in kernel[o * ckk..(o + 1) * ckk].iter().enumerate() {
            for (ov, iv) in plane.iter_mut().zip(&col[j * hw..(j + 1) * hw]) {
                *ov += wgt * iv;
            }
        }
    }
    Tensor {
        shape: vec![g.c_out, g.h, g.w],
        data: out,
    }
}

/// Patch matrix `[c_in·k·k, h·w]`: row `(i, dy, dx)` holds input channel `i`
/// shifted by `(dy − p, dx − p)`, zero outside the image.
fn im2col(g: ConvGeom, input: &[f64]) -> Vec<f64> {
    let ConvGeom { c_in, h, w, k, .. } = g;
    let hw = h * w;
    let p = k / 2;
    let mut col = vec![0.0; c_in * k * k * hw];
    for i in 0..c_in {
        let src = &input[i * hw..(i + 1) * hw];
        for dy in 0..k {
            let (y0, y1) = g.range(dy, h);
            for dx in 0..k {
                let (x0, x1) = g.range(dx, w);
                let row = &mut col[((i * k + dy) * k + dx) * hw..][..hw];
                for y in y0..y1 {
                    let iy = y + dy - p;
                    row[y * w + x0..y * w + x1]
                        .copy_from_slice(&src[iy * w + x0 + dx - p..iy * w + x1 + dx - p]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates patch-matrix gradients into `dst`.
fn col2im_add(g: ConvGeom, col: &[f64], dst: &mut [f64]) {
    let ConvGeom { c_in, h, w, k, .. } = g;
    let hw = h * w;
    let p = k / 2;
    for i in 0..c_in {
        let plane = &mut dst[i * hw..(i + 1) * hw];
        for dy in 0..k {
            let (y0, y1) = g.range(dy, h);
            for dx in 0..k {
                let (x0, x1) = g.range(dx, w);
                let row = &col[((i * k + dy) * k + dx) * hw..][..hw];
                for y in y0..y1 {
                    let iy = y + dy - p;
                    let d = &mut plane[iy * w + x0 + dx - p..iy * w + x1 + dx - p];
                    for (dv, cv) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *dv += cv;
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to (input, kernel, bias).
///
/// Each output is computed only when requested.
pub(crate) fn conv2d_backward(
    g: ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let hw = g.h * g.w;
    let ckk = g.c_in * g.k * g.k;
    if let Some(gb) = grad_bias {
        for o in 0..g.c_out {
            gb[o] += grad_out[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
    }
    if let Some(gk) = grad_kernel {
        let col = im2col(g, input);
        for o in 0..g.c_out {
            let go = &grad_out[o * hw..(o + 1) * hw];
            for (j, gv) in gk[o * ckk..(o + 1) * ckk].iter_mut().enumerate() {
                *gv += go.iter().zip(&col[j * hw..(j + 1) * hw]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    if let Some(gi) = grad_input {
        let mut gcol = vec![0.0; ckk * hw];
        for o in 0..g.c_out {
            let go = &grad_out[o * hw..(o + 1) * hw];
            for (j, &wgt) in kernel[o * ckk..(o + 1) * ckk].iter().enumerate() {
                for (cv, ov) in gcol[j * hw..(j + 1) * hw].iter_mut().zip(go) {
                    *cv += wgt * ov;
                }
            }
        }
        col2im_add(g, &gcol, gi);
    }
}

/// Per-channel maximum over all spatial positions, plus the flat index of
/// the first (row-major) maximum in each channel.
pub(crate) fn global_max_pool_with_argmax(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = chw("global_max_pool", input)?;
    let hw = h * w;
    let mut out = Vec::with_capacity(c);
    let mut arg = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = &input.data()[ch * hw..(ch + 1) * hw];
        let mut best = 0;
        for (j, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = j;
            }
        }
        out.push(plane[best]);
        arg.push(ch * hw + best);
    }
    Ok((Tensor::vector(out), arg))
}

pub fn global_max_pool(input: &Tensor) -> Result<Tensor> {
    global_max_pool_with_argmax(input).map(|(t, _)| t)
}

/// Non-overlapping 2×2 max pooling; odd trailing rows/columns are dropped.
pub(crate) fn max_pool2_with_argmax(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = chw("max_pool2", input)?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Config(format!(
            "max_pool2 needs at least 2x2 spatial input, got {:?}",
            input.shape()
        )));
    }
    let d = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if d[cand] > d[best] {
                        best = cand;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((
        Tensor {
            shape: vec![c, oh, ow],
            data: out,
        },
        arg,
    ))
}

pub fn max_pool2(input: &Tensor) -> Result<Tensor> {
    max_pool2_with_argmax(input).map(|(t, _)| t)
}

pub(crate) fn check_linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let d = match *input.shape() {
        [d] => d,
        _ => {
            return Err(Error::Config(format!(
                "linear input must be a vector, got {:?}",
                input.shape()
            )))
        }
    };
    match *weight.shape() {
        [k, wd] if wd == d && bias.shape() == [k] => Ok((k, d)),
        _ => Err(Error::Config(format!(
            "linear weight {:?} / bias {:?} incompatible with input of length {d}",
            weight.shape(),
            bias.shape()
        ))),
    }
}

/// `weight · input + bias`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (k, d) = check_linear(input, weight, bias)?;
    let x = input.data();
    let out = (0..k)
        .map(|r| {
            let row = &weight.data()[r * d..(r + 1) * d];
            bias.data()[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok(Tensor::vector(out))
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn abs(x: &Tensor) -> Tensor {
    x.map(f64::abs)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_with(b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_with(b, |x, y| x - y)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_with(b, |x, y| x * y)
}

/// Concatenates along the leading (channel) axis; trailing dimensions must
/// agree.
pub fn channel_concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("channel_concat of zero tensors".into()))?;
    let tail = &first.shape()[1..];
    let mut channels = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        if &p.shape()[1..] != tail {
            return Err(Error::Config(format!(
                "channel_concat: trailing dims differ, {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
        channels += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![channels];
    shape.extend_from_slice(tail);
    Ok(Tensor { shape, data })
}

/// Log-sum-exp stabilized softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `-log softmax(logits)[label]`, computed with max subtraction.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let k = logits.len();
    if label >= k {
        return Err(Error::Input(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let d = logits.data();
    let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + d.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - d[label])
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
