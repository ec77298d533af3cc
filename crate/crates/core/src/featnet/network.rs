//! Sequential networks, the reference architecture and network splits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{softmax_xent, ConvShape, Differentiable, Fc, Layer};
use crate::equilearn::FeatureExtractor;
use crate::field::FeatureField;
use crate::imaging::{Image, LabeledDataset};
use crate::{Error, Result};

/// Split points of the reference architecture: right after each convolution.
pub const T3_PROBES: [usize; 3] = [1, 4, 6];

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// `(width, height, channels)` of the input field.
    pub input_dims: (usize, usize, usize),
    pub seed: u64,
}

impl Network {
    /// Validates shapes; the last layer must be a softmax.
    pub fn new(layers: Vec<Layer>, input_dims: (usize, usize, usize), seed: u64) -> Result<Self> {
        let net = Self {
            layers,
            input_dims,
            seed,
        };
        net.shapes()?;
        if !matches!(net.layers.last(), Some(Layer::Softmax)) {
            return Err(Error::InvalidInput("network must end with a softmax layer".into()));
        }
        for (i, l) in net.layers.iter().enumerate() {
            if l.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(net)
    }

    /// conv5×5(1→16, stride 2, pad 2), relu, maxpool 2, conv3×3(16→32, pad 1),
    /// relu, conv3×3(32→32, pad 1), relu, fc, softmax on 32×32 grey input,
    /// He-initialised from `seed`.
    pub fn t3(num_classes: usize, seed: u64) -> Result<Self> {
        let layers = vec![
            Layer::conv(1, 16, 5, 2, 2),
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 2 },
            Layer::conv(16, 32, 3, 1, 1),
            Layer::Relu,
            Layer::conv(32, 32, 3, 1, 1),
            Layer::Relu,
            Layer::Fc(Fc::zeros((8, 8, 32), num_classes)),
            Layer::Softmax,
        ];
        let mut net = Self::new(layers, (32, 32, 1), seed)?;
        net.init_he(seed);
        Ok(net)
    }

    /// Gaussian weights with variance `2 / fan_in`, zero biases.
    pub fn init_he(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let (nw, fan_in) = match layer {
                Layer::Conv(c) => (c.shape.num_weights(), c.shape.kernel * c.shape.kernel * c.shape.in_channels),
                Layer::Fc(f) => (f.out * f.in_dims.0 * f.in_dims.1 * f.in_dims.2, f.in_dims.0 * f.in_dims.1 * f.in_dims.2),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let p = layer.params_mut();
            for w in &mut p[..nw] {
                *w = normal.sample(&mut rng);
            }
            p[nw..].iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn num_classes(&self) -> usize {
        self.shapes().map(|s| s.last().map_or(0, |d| d.2)).unwrap_or(0)
    }

    /// Output dims of every layer.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut d = self.input_dims;
        self.layers
            .iter()
            .map(|l| {
                d = l.output_dims(d)?;
                Ok(d)
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    /// Input field for an image (grey conversion for single-channel nets).
    pub fn input_field(&self, x: &Image) -> Result<FeatureField> {
        let img = if self.input_dims.2 == 1 && x.channels() != 1 { x.to_gray() } else { x.clone() };
        let f = FeatureField::from_image(&img);
        if f.dims() != self.input_dims {
            return Err(Error::DimensionMismatch(format!(
                "network expects {:?}, image gives {:?}",
                self.input_dims,
                f.dims()
            )));
        }
        Ok(f)
    }

    /// Activations of every layer for image `x`.
    pub fn forward(&self, x: &Image) -> Result<Vec<FeatureField>> {
        let f = self.input_field(x)?;
        self.forward_all(&f, 0, self.layers.len())
    }

    /// Activations of layers `from..to` applied to `f`.
    pub fn forward_all(&self, f: &FeatureField, from: usize, to: usize) -> Result<Vec<FeatureField>> {
        self.check_range(from, to)?;
        let mut acts: Vec<FeatureField> = Vec::with_capacity(to - from);
        for l in &self.layers[from..to] {
            let next = l.forward(acts.last().unwrap_or(f))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Output of layers `from..to` applied to `f`.
    pub fn forward_range(&self, f: &FeatureField, from: usize, to: usize) -> Result<FeatureField> {
        self.check_range(from, to)?;
        let mut cur = f.clone();
        for l in &self.layers[from..to] {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    fn check_range(&self, from: usize, to: usize) -> Result<()> {
        if from > to || to > self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "layer range {from}..{to} outside 0..{}",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Cross-entropy loss of the network tail `from..` applied to `f`, and the
    /// gradient with respect to `f`. Parameter gradients of every traversed
    /// layer are added to `grads[layer]` when given.
    pub fn loss_grad(
        &self,
        f: &FeatureField,
        from: usize,
        label: usize,
        mut grads: Option<&mut [Vec<f64>]>,
    ) -> Result<(f64, FeatureField)> {
        let end = self.layers.len() - 1;
        let acts = self.forward_all(f, from, end)?;
        let logits = acts.last().unwrap_or(f);
        if label >= logits.len() {
            return Err(Error::InvalidInput(format!("label {label} out of range")));
        }
        let (loss, g) = softmax_xent(logits.data(), label);
        let mut gy = FeatureField::from_data(logits.width(), logits.height(), logits.depth(), g, logits.geometry)?;
        let mut scratch = Vec::new();
        for i in (from..end).rev() {
            let layer = &self.layers[i];
            let x = if i == from { f } else { &acts[i - from - 1] };
            let y = &acts[i - from];
            let gp: &mut [f64] = match grads.as_deref_mut() {
                Some(gs) => &mut gs[i],
                None => {
                    scratch.clear();
                    scratch.resize(layer.num_params(), 0.0);
                    &mut scratch
                }
            };
            gy = layer.backward(x, y, &gy, gp)?;
        }
        Ok((loss, gy))
    }

    /// Class probabilities of the tail `from..` applied to `f`.
    pub fn probabilities_from(&self, f: &FeatureField, from: usize) -> Result<Vec<f64>> {
        Ok(self.forward_range(f, from, self.layers.len())?.into_data())
    }

    pub fn predict(&self, x: &Image) -> Result<usize> {
        let f = self.input_field(x)?;
        self.predict_from(&f, 0)
    }

    /// Arg-max class of the tail `from..` applied to `f` (lowest index on ties).
    pub fn predict_from(&self, f: &FeatureField, from: usize) -> Result<usize> {
        Ok(argmax_lowest(&self.probabilities_from(f, from)?))
    }

    /// Top-1 error rate on a classification dataset.
    pub fn error_rate(&self, data: &LabeledDataset) -> Result<f64> {
        let labels = data.class_labels()?;
        let wrong: usize = data
            .items
            .par_iter()
            .zip(&labels)
            .map(|(item, &y)| Ok(usize::from(self.predict(&item.image)? != y)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        Ok(wrong as f64 / labels.len().max(1) as f64)
    }

    pub fn conv_shapes(&self) -> Vec<ConvShape> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c.shape),
                _ => None,
            })
            .collect()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `φ = φ2 ∘ φ1` with `φ1 = layers[0..s)` and `φ2 = layers[s..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSplit {
    pub net: Network,
    pub s: usize,
}

impl NetworkSplit {
    pub fn new(net: Network, s: usize) -> Result<Self> {
        if s == 0 || s >= net.layers.len() {
            return Err(Error::InvalidInput(format!(
                "split index {s} outside 1..{}",
                net.layers.len()
            )));
        }
        Ok(Self { net, s })
    }

    pub fn phi1(&self, x: &Image) -> Result<FeatureField> {
        let f = self.net.input_field(x)?;
        self.net.forward_range(&f, 0, self.s)
    }

    /// Class probabilities from a `φ1` field.
    pub fn phi2(&self, f: &FeatureField) -> Result<FeatureField> {
        self.net.forward_range(f, self.s, self.net.layers.len())
    }

    pub fn phi1_dims(&self) -> Result<(usize, usize, usize)> {
        Ok(self.net.shapes()?[self.s - 1])
    }

    pub fn predict_from(&self, f: &FeatureField) -> Result<usize> {
        self.net.predict_from(f, self.s)
    }
}

impl FeatureExtractor for NetworkSplit {
    fn extract(&self, img: &Image) -> Result<FeatureField> {
        self.phi1(img)
    }

    fn name(&self) -> String {
        format!("net{}@{}", self.net.seed, self.s)
    }
}
