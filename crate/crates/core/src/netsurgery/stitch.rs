//! Stitching layers `E` splicing `φ1` of one network into `φ2′` of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featnet::{inserted_error, train_inserted, ConvShape, CurvePoint, Differentiable, NetworkSplit, TrainConfig};
use crate::field::{FeatureField, Geometry};
use crate::imaging::LabeledDataset;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StitchInit {
    /// Channel-matched one-hot filters when depths agree, random otherwise.
    #[default]
    Identity,
    /// Gaussian filters with variance `1 / fan_in`.
    Random,
}

/// Nearest-neighbour resampling to the target grid followed by a `k×k`
/// filter bank (padding `(k−1)/2`).
#[derive(Clone, Debug, PartialEq)]
pub struct StitchingLayer {
    pub in_dims: (usize, usize, usize),
    pub out_dims: (usize, usize, usize),
    pub kernel: usize,
    pub params: Vec<f64>,
}

impl StitchingLayer {
    pub fn new(
        in_dims: (usize, usize, usize),
        out_dims: (usize, usize, usize),
        kernel: usize,
        init: StitchInit,
        seed: u64,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidInput(format!("stitch kernel must be odd, got {kernel}")));
        }
        let resamplable = |a: usize, b: usize| a % b == 0 || b % a == 0;
        if in_dims.0 * out_dims.1 != in_dims.1 * out_dims.0
            || !resamplable(in_dims.0, out_dims.0)
            || !resamplable(in_dims.1, out_dims.1)
        {
            return Err(Error::DimensionMismatch(format!(
                "cannot reconcile {in_dims:?} with {out_dims:?} by integer resampling"
            )));
        }
        let mut layer = Self {
            in_dims,
            out_dims,
            kernel,
            params: Vec::new(),
        };
        let shape = layer.shape();
        layer.params = vec![0.0; shape.num_params()];
        let c = kernel / 2;
        if init == StitchInit::Identity && in_dims.2 == out_dims.2 {
            for t in 0..in_dims.2 {
                layer.params[shape.weight_index(t, c, c, t)] = 1.0;
            }
        } else {
            let fan_in = (kernel * kernel * in_dims.2) as f64;
            let normal = Normal::new(0.0, (1.0 / fan_in).sqrt()).expect("valid std");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for w in &mut layer.params[..shape.num_weights()] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(layer)
    }

    pub fn shape(&self) -> ConvShape {
        ConvShape {
            in_channels: self.in_dims.2,
            out_channels: self.out_dims.2,
            kernel: self.kernel,
            stride: 1,
            pad: self.kernel / 2,
        }
    }

    #[inline]
    fn source(&self, u: usize, v: usize) -> (usize, usize) {
        let (iw, ih, _) = self.in_dims;
        let (ow, oh, _) = self.out_dims;
        ((2 * u + 1) * iw / (2 * ow), (2 * v + 1) * ih / (2 * oh))
    }

    fn resampled_geometry(&self, g: Geometry) -> Geometry {
        let r = self.in_dims.0 as f64 / self.out_dims.0 as f64;
        Geometry::new(g.stride * r, g.offset + g.stride * (0.5 * r - 0.5))
    }

    pub fn resample(&self, x: &FeatureField) -> Result<FeatureField> {
        if x.dims() != self.in_dims {
            return Err(Error::DimensionMismatch(format!(
                "stitch expects {:?}, got {:?}",
                self.in_dims,
                x.dims()
            )));
        }
        if (self.in_dims.0, self.in_dims.1) == (self.out_dims.0, self.out_dims.1) {
            return Ok(x.clone());
        }
        let (ow, oh, _) = self.out_dims;
        let d = self.in_dims.2;
        let mut r = FeatureField::zeros(ow, oh, d, self.resampled_geometry(x.geometry));
        for u in 0..ow {
            for v in 0..oh {
                let (su, sv) = self.source(u, v);
                r.cell_mut(u, v).copy_from_slice(x.cell(su, sv));
            }
        }
        Ok(r)
    }
}

impl Differentiable for StitchingLayer {
    fn forward(&self, x: &FeatureField) -> Result<FeatureField> {
        self.shape().forward(&self.resample(x)?, &self.params)
    }

    fn backward(
        &self,
        x: &FeatureField,
        _y: &FeatureField,
        gy: &FeatureField,
        grad_params: &mut [f64],
    ) -> Result<FeatureField> {
        let r = self.resample(x)?;
        let gr = self.shape().backward(&r, gy, &self.params, grad_params)?;
        if (self.in_dims.0, self.in_dims.1) == (self.out_dims.0, self.out_dims.1) {
            return Ok(gr);
        }
        let (ow, oh, _) = self.out_dims;
        let mut gx = FeatureField::zeros(x.width(), x.height(), x.depth(), x.geometry);
        for u in 0..ow {
            for v in 0..oh {
                let (su, sv) = self.source(u, v);
                let src = gr.cell(u, v).to_vec();
                gx.cell_mut(su, sv).iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        Ok(gx)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchConfig {
    pub kernel: usize,
    pub init: StitchInit,
    pub train: TrainConfig,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            kernel: 1,
            init: StitchInit::Identity,
            train: TrainConfig {
                epochs: 5,
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct StitchResult {
    pub layer: StitchingLayer,
    pub curve: Vec<CurvePoint>,
}

fn phi1_all(split: &NetworkSplit, data: &LabeledDataset) -> Result<Vec<FeatureField>> {
    data.items.par_iter().map(|it| split.phi1(&it.image)).collect()
}

/// Trains `E` so that `φ2′ ∘ E ∘ φ1` classifies `train`; only `E` changes.
pub fn learn_stitch(
    phi1: &NetworkSplit,
    phi2: &NetworkSplit,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &StitchConfig,
) -> Result<StitchResult> {
    let in_dims = phi1.phi1_dims()?;
    let out_dims = phi2.phi1_dims()?;
    let mut layer = StitchingLayer::new(in_dims, out_dims, cfg.kernel, cfg.init, cfg.train.seed)?;
    let inputs = phi1_all(phi1, train)?;
    let labels = train.class_labels()?;
    let val_data = match val {
        Some(v) => Some((phi1_all(phi1, v)?, v.class_labels()?)),
        None => None,
    };
    let curve = train_inserted(
        &mut layer,
        &phi2.net,
        phi2.s,
        &inputs,
        &labels,
        &cfg.train,
        val_data.as_ref().map(|(f, y)| (f.as_slice(), y.as_slice())),
    )?;
    Ok(StitchResult { layer, curve })
}

/// Top-1 error of `φ2′ ∘ E ∘ φ1`.
pub fn evaluate_franken(
    phi1: &NetworkSplit,
    stitch: &StitchingLayer,
    phi2: &NetworkSplit,
    test: &LabeledDataset,
) -> Result<f64> {
    let inputs = phi1_all(phi1, test)?;
    inserted_error(stitch, &phi2.net, phi2.s, &inputs, &test.class_labels()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::{grad_check, random_input, Network};
    use crate::imaging::synth::synth_classification_set;

    #[test]
    fn gradients() {
        for (i, o, k) in [((4, 4, 3), (4, 4, 5), 1), ((4, 4, 3), (2, 2, 2), 3), ((2, 2, 3), (4, 4, 3), 1)] {
            let l = StitchingLayer::new(i, o, k, StitchInit::Random, 7).unwrap();
            let r = grad_check(&l, &random_input(i, 0.0, 1), 200, 2).unwrap();
            assert!(r.max_rel_err() < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn irreconcilable_dims() {
        assert!(StitchingLayer::new((4, 4, 3), (3, 3, 3), 1, StitchInit::Identity, 0).is_err());
        assert!(StitchingLayer::new((4, 4, 3), (4, 2, 3), 1, StitchInit::Identity, 0).is_err());
    }

    #[test]
    fn self_stitch_matches_network() {
        let net = Network::t3(2, 3).unwrap();
        let data = synth_classification_set(5, 12, 2).unwrap();
        for s in [1, 4, 6] {
            let split = NetworkSplit::new(net.clone(), s).unwrap();
            let e = StitchingLayer::new(split.phi1_dims().unwrap(), split.phi1_dims().unwrap(), 1, StitchInit::Identity, 0).unwrap();
            let franken = evaluate_franken(&split, &e, &split, &data).unwrap();
            assert_eq!(franken, net.error_rate(&data).unwrap());
        }
    }
}
