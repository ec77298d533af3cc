//! Differentiable layers on [`FeatureField`]s.

use serde::{Deserialize, Serialize};

use crate::field::FeatureField;
use crate::{Error, Result};

/// A layer with a forward map, a vector-Jacobian product and a flat
/// parameter vector.
pub trait Differentiable {
    fn forward(&self, x: &FeatureField) -> Result<FeatureField>;

    /// Returns `∂L/∂x` given `y = forward(x)` and `gy = ∂L/∂y`, adding
    /// `∂L/∂θ` into `grad_params`.
    fn backward(
        &self,
        x: &FeatureField,
        y: &FeatureField,
        gy: &FeatureField,
        grad_params: &mut [f64],
    ) -> Result<FeatureField>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Shape of a dense `k×k` filter bank; weights are laid out as
/// `((o·k + du)·k + dv)·d_in + t_in`, followed by `d_out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn num_weights(&self) -> usize {
        self.out_channels * self.kernel * self.kernel * self.in_channels
    }

    pub fn num_params(&self) -> usize {
        self.num_weights() + self.out_channels
    }

    #[inline]
    pub fn weight_index(&self, o: usize, du: usize, dv: usize, t: usize) -> usize {
        ((o * self.kernel + du) * self.kernel + dv) * self.in_channels + t
    }

    pub fn out_size(&self, w: usize, h: usize) -> Option<(usize, usize)> {
        let span = |n: usize| {
            let padded = n + 2 * self.pad;
            (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
        };
        Some((span(w)?, span(h)?))
    }

    fn check(&self, x: &FeatureField) -> Result<(usize, usize)> {
        if x.depth() != self.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "filter bank expects {} channels, got {}",
                self.in_channels,
                x.depth()
            )));
        }
        self.out_size(x.width(), x.height()).ok_or_else(|| {
            Error::DimensionMismatch(format!(
                "{}x{} input too small for kernel {}",
                x.width(),
                x.height(),
                self.kernel
            ))
        })
    }

    #[inline]
    fn source(&self, o: usize, d: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + d) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }

    pub fn forward(&self, x: &FeatureField, params: &[f64]) -> Result<FeatureField> {
        let (ow, oh) = self.check(x)?;
        let (iw, ih, di) = x.dims();
        let dout = self.out_channels;
        let k = self.kernel;
        let (weights, bias) = params.split_at(self.num_weights());
        let mut y = FeatureField::zeros(ow, oh, dout, x.geometry.then_window(k, self.stride, self.pad));
        let xd = x.data();
        let yd = y.data_mut();
        for u in 0..ow {
            for v in 0..oh {
                let out = &mut yd[(u * oh + v) * dout..][..dout];
                out.copy_from_slice(bias);
                for du in 0..k {
                    let Some(iu) = self.source(u, du, iw) else { continue };
                    for dv in 0..k {
                        let Some(iv) = self.source(v, dv, ih) else { continue };
                        let cell = &xd[(iu * ih + iv) * di..][..di];
                        for (o, acc) in out.iter_mut().enumerate() {
                            let wrow = &weights[self.weight_index(o, du, dv, 0)..][..di];
                            *acc += dot(wrow, cell);
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &FeatureField,
        gy: &FeatureField,
        params: &[f64],
        grad_params: &mut [f64],
    ) -> Result<FeatureField> {
        let (ow, oh) = self.check(x)?;
        if gy.dims() != (ow, oh, self.out_channels) {
            return Err(Error::DimensionMismatch("output gradient shape".into()));
        }
        let (iw, ih, di) = x.dims();
        let dout = self.out_channels;
        let k = self.kernel;
        let nw = self.num_weights();
        let weights = &params[..nw];
        let (gw, gb) = grad_params.split_at_mut(nw);
        let mut gx = FeatureField::zeros(iw, ih, di, x.geometry);
        let xd = x.data();
        let gyd = gy.data();
        let gxd = gx.data_mut();
        for u in 0..ow {
            for v in 0..oh {
                let g = &gyd[(u * oh + v) * dout..][..dout];
                for (b, gv) in gb.iter_mut().zip(g) {
                    *b += gv;
                }
                for du in 0..k {
                    let Some(iu) = self.source(u, du, iw) else { continue };
                    for dv in 0..k {
                        let Some(iv) = self.source(v, dv, ih) else { continue };
                        let base = (iu * ih + iv) * di;
                        for (o, &go) in g.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wi = self.weight_index(o, du, dv, 0);
                            for t in 0..di {
                                gw[wi + t] += go * xd[base + t];
                                gxd[base + t] += go * weights[wi + t];
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Convolution with weights and bias in one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub shape: ConvShape,
    #[serde(skip)]
    pub params: Vec<f64>,
}

impl Conv {
    pub fn zeros(shape: ConvShape) -> Self {
        Self {
            params: vec![0.0; shape.num_params()],
            shape,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.shape.num_weights()]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.shape.num_weights()..]
    }
}

/// Fully-connected layer over the flattened input, producing a `1×1×out` field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fc {
    pub in_dims: (usize, usize, usize),
    pub out: usize,
    #[serde(skip)]
    pub params: Vec<f64>,
}

impl Fc {
    pub fn zeros(in_dims: (usize, usize, usize), out: usize) -> Self {
        let n = in_dims.0 * in_dims.1 * in_dims.2;
        Self {
            in_dims,
            out,
            params: vec![0.0; n * out + out],
        }
    }

    fn in_len(&self) -> usize {
        self.in_dims.0 * self.in_dims.1 * self.in_dims.2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv(Conv),
    Relu,
    MaxPool { size: usize, stride: usize },
    Fc(Fc),
    Softmax,
}

impl Layer {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Layer::Conv(Conv::zeros(ConvShape {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Fc(_) => "fc",
            Layer::Softmax => "softmax",
        }
    }

    /// Output dims for the given input dims.
    pub fn output_dims(&self, d: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match self {
            Layer::Conv(c) => {
                if d.2 != c.shape.in_channels {
                    return Err(Error::DimensionMismatch(format!(
                        "conv expects {} channels, got {}",
                        c.shape.in_channels, d.2
                    )));
                }
                let (w, h) = c
                    .shape
                    .out_size(d.0, d.1)
                    .ok_or_else(|| Error::DimensionMismatch("conv input too small".into()))?;
                Ok((w, h, c.shape.out_channels))
            }
            Layer::Relu | Layer::Softmax => Ok(d),
            Layer::MaxPool { size, stride } => {
                if *size == 0 || *stride == 0 || d.0 < *size || d.1 < *size {
                    return Err(Error::DimensionMismatch("maxpool window".into()));
                }
                Ok(((d.0 - size) / stride + 1, (d.1 - size) / stride + 1, d.2))
            }
            Layer::Fc(f) => {
                if d != f.in_dims {
                    return Err(Error::DimensionMismatch(format!("fc expects {:?}, got {:?}", f.in_dims, d)));
                }
                Ok((1, 1, f.out))
            }
        }
    }

    fn maxpool_argmax(x: &FeatureField, size: usize, stride: usize, u: usize, v: usize, t: usize) -> usize {
        let mut best = x.index(u * stride, v * stride, t);
        for du in 0..size {
            for dv in 0..size {
                let i = x.index(u * stride + du, v * stride + dv, t);
                if x.data()[i] > x.data()[best] {
                    best = i;
                }
            }
        }
        best
    }
}

impl Differentiable for Layer {
    fn forward(&self, x: &FeatureField) -> Result<FeatureField> {
        let (ow, oh, od) = self.output_dims(x.dims())?;
        match self {
            Layer::Conv(c) => c.shape.forward(x, &c.params),
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                FeatureField::from_data(ow, oh, od, data, x.geometry)
            }
            Layer::MaxPool { size, stride } => {
                let mut y = FeatureField::zeros(ow, oh, od, x.geometry.then_window(*size, *stride, 0));
                for u in 0..ow {
                    for v in 0..oh {
                        for t in 0..od {
                            let i = Self::maxpool_argmax(x, *size, *stride, u, v, t);
                            y.set(u, v, t, x.data()[i]);
                        }
                    }
                }
                Ok(y)
            }
            Layer::Fc(f) => {
                let n = f.in_len();
                let (w, b) = f.params.split_at(n * f.out);
                let data = (0..f.out).map(|o| b[o] + dot(&w[o * n..][..n], x.data())).collect();
                let geometry = x.geometry.then_window(x.width().max(x.height()), 1, 0);
                FeatureField::from_data(1, 1, f.out, data, geometry)
            }
            Layer::Softmax => {
                let mut y = x.clone();
                let d = x.depth();
                for cell in y.data_mut().chunks_exact_mut(d) {
                    softmax_in_place(cell);
                }
                Ok(y)
            }
        }
    }

    fn backward(
        &self,
        x: &FeatureField,
        y: &FeatureField,
        gy: &FeatureField,
        grad_params: &mut [f64],
    ) -> Result<FeatureField> {
        if gy.dims() != y.dims() {
            return Err(Error::DimensionMismatch("output gradient shape".into()));
        }
        match self {
            Layer::Conv(c) => c.shape.backward(x, gy, &c.params, grad_params),
            Layer::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect();
                FeatureField::from_data(x.width(), x.height(), x.depth(), data, x.geometry)
            }
            Layer::MaxPool { size, stride } => {
                let mut gx = FeatureField::zeros(x.width(), x.height(), x.depth(), x.geometry);
                let (ow, oh, od) = y.dims();
                for u in 0..ow {
                    for v in 0..oh {
                        for t in 0..od {
                            let i = Self::maxpool_argmax(x, *size, *stride, u, v, t);
                            gx.data_mut()[i] += gy.get(u, v, t);
                        }
                    }
                }
                Ok(gx)
            }
            Layer::Fc(f) => {
                let n = f.in_len();
                let (w, _) = f.params.split_at(n * f.out);
                let (gw, gb) = grad_params.split_at_mut(n * f.out);
                let mut gx = vec![0.0; n];
                for o in 0..f.out {
                    let g = gy.data()[o];
                    gb[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let row = &w[o * n..][..n];
                    let grow = &mut gw[o * n..][..n];
                    for j in 0..n {
                        grow[j] += g * x.data()[j];
                        gx[j] += g * row[j];
                    }
                }
                FeatureField::from_data(x.width(), x.height(), x.depth(), gx, x.geometry)
            }
            Layer::Softmax => {
                let d = y.depth();
                let mut gx = gy.clone();
                for (g, p) in gx.data_mut().chunks_exact_mut(d).zip(y.data().chunks_exact(d)) {
                    let s = dot(g, p);
                    for (gi, pi) in g.iter_mut().zip(p) {
                        *gi = pi * (*gi - s);
                    }
                }
                Ok(gx)
            }
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            Layer::Conv(c) => &c.params,
            Layer::Fc(f) => &f.params,
            _ => &[],
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::Conv(c) => &mut c.params,
            Layer::Fc(f) => &mut f.params,
            _ => &mut [],
        }
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Cross-entropy of `softmax(logits)` against `label` and its gradient with
/// respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    p[label] -= 1.0;
    (loss, p)
}
