//! Mini-batch SGD with momentum and weight decay.
//!
//! Per-example gradients of a batch are computed concurrently and reduced in
//! example order, so results do not depend on the number of threads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::Differentiable;
use super::network::Network;
use crate::field::FeatureField;
use crate::imaging::{warp, GeometricTransform, Interpolation, LabeledDataset, Padding};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Mirror each training image horizontally with probability ½.
    pub augment_hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            lr_decay: 0.95,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            augment_hflip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.lr_decay > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Momentum SGD state for one parameter vector.
#[derive(Clone, Debug)]
pub struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Self {
            velocity: vec![0.0; len],
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        }
    }

    /// `v ← μv − η(g + λθ)`, `θ ← θ + v`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v - lr * (g + self.weight_decay * *p);
            *p += *v;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

fn epoch_order(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss })
    }
}

/// Trains every parameter of `net` on a classification dataset.
pub fn train(net: &mut Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let labels = data.class_labels()?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let inputs: Vec<FeatureField> = data
        .items
        .par_iter()
        .map(|it| net.input_field(&it.image))
        .collect::<Result<_>>()?;
    let flipped: Vec<FeatureField> = if cfg.augment_hflip {
        data.items
            .par_iter()
            .map(|it| {
                let g = GeometricTransform::hflip(it.image.width());
                net.input_field(&warp(&it.image, &g, Interpolation::Nearest, Padding::Zero)?)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mean_loss = |net: &Network| -> Result<f64> {
        let losses: Vec<f64> = inputs
            .par_iter()
            .zip(&labels)
            .map(|(f, &y)| Ok(net.loss_grad(f, 0, y, None)?.0))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };
    let initial_loss = mean_loss(net)?;
    check_loss(initial_loss, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt: Vec<Sgd> = net.layers.iter().map(|l| Sgd::new(l.num_params(), cfg)).collect();
    let mut lr = cfg.learning_rate;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(&mut rng, labels.len());
        let flips: Vec<bool> = order.iter().map(|_| cfg.augment_hflip && rng.gen_bool(0.5)).collect();
        let mut total = 0.0;
        for (batch, bflips) in order.chunks(cfg.batch_size).zip(flips.chunks(cfg.batch_size)) {
            let frozen: &Network = net;
            let per_example: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .zip(bflips)
                .map(|(&i, &flip)| {
                    let mut grads: Vec<Vec<f64>> =
                        frozen.layers.iter().map(|l| vec![0.0; l.num_params()]).collect();
                    let f = if flip { &flipped[i] } else { &inputs[i] };
                    let (loss, _) = frozen.loss_grad(f, 0, labels[i], Some(&mut grads))?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;
            let mut sum: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.num_params()]).collect();
            for (loss, grads) in &per_example {
                check_loss(*loss, epoch)?;
                total += loss;
                for (s, g) in sum.iter_mut().zip(grads) {
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, s), o) in net.layers.iter_mut().zip(&mut sum).zip(&mut opt) {
                s.iter_mut().for_each(|v| *v *= scale);
                o.step(layer.params_mut(), s, lr);
            }
        }
        let epoch_loss = total / labels.len() as f64;
        check_loss(epoch_loss, epoch)?;
        if net.layers.iter().any(|l| l.params().iter().any(|p| !p.is_finite())) {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.5}");
        epoch_losses.push(epoch_loss);
        lr *= cfg.lr_decay;
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Training samples consumed so far.
    pub samples: usize,
    pub train_loss: f64,
    pub val_error: Option<f64>,
}

/// Top-1 error of `net[from..] ∘ layer` on cached fields.
pub fn inserted_error<L: Differentiable + Sync + ?Sized>(
    layer: &L,
    net: &Network,
    from: usize,
    inputs: &[FeatureField],
    labels: &[usize],
) -> Result<f64> {
    let wrong: Vec<usize> = inputs
        .par_iter()
        .zip(labels)
        .map(|(f, &y)| Ok(usize::from(net.predict_from(&layer.forward(f)?, from)? != y)))
        .collect::<Result<_>>()?;
    Ok(wrong.iter().sum::<usize>() as f64 / labels.len().max(1) as f64)
}

fn inserted_loss<L: Differentiable + Sync + ?Sized>(
    layer: &L,
    net: &Network,
    from: usize,
    inputs: &[FeatureField],
    labels: &[usize],
) -> Result<f64> {
    let losses: Vec<f64> = inputs
        .par_iter()
        .zip(labels)
        .map(|(f, &y)| Ok(net.loss_grad(&layer.forward(f)?, from, y, None)?.0))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trains only `layer`, inserted in front of the frozen tail `net[from..]`,
/// on cached input fields. The curve has one point before training and one
/// per epoch.
pub fn train_inserted<L: Differentiable + Sync + ?Sized>(
    layer: &mut L,
    net: &Network,
    from: usize,
    inputs: &[FeatureField],
    labels: &[usize],
    cfg: &TrainConfig,
    val: Option<(&[FeatureField], &[usize])>,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::InvalidInput("inputs and labels must be non-empty and aligned".into()));
    }
    let val_err = |layer: &L| -> Result<Option<f64>> {
        val.map(|(f, y)| inserted_error(layer, net, from, f, y)).transpose()
    };
    let initial = inserted_loss(layer, net, from, inputs, labels)?;
    check_loss(initial, 0)?;
    let mut curve = vec![CurvePoint {
        epoch: 0,
        samples: 0,
        train_loss: initial,
        val_error: val_err(layer)?,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(layer.num_params(), cfg);
    let mut lr = cfg.learning_rate;
    let mut samples = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(&mut rng, inputs.len());
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let frozen: &L = layer;
            let per_example: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let z = frozen.forward(&inputs[i])?;
                    let (loss, gz) = net.loss_grad(&z, from, labels[i], None)?;
                    let mut g = vec![0.0; frozen.num_params()];
                    frozen.backward(&inputs[i], &z, &gz, &mut g)?;
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            let mut sum = vec![0.0; layer.num_params()];
            for (loss, g) in &per_example {
                check_loss(*loss, epoch)?;
                total += loss;
                sum.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            sum.iter_mut().for_each(|v| *v *= scale);
            opt.step(layer.params_mut(), &sum, lr);
            samples += batch.len();
        }
        let train_loss = total / inputs.len() as f64;
        check_loss(train_loss, epoch)?;
        curve.push(CurvePoint {
            epoch: epoch + 1,
            samples,
            train_loss,
            val_error: val_err(layer)?,
        });
        lr *= cfg.lr_decay;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth::synth_classification_set;

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = synth_classification_set(1, 16, 2).unwrap();
        let mut net = Network::t3(2, 1).unwrap();
        let before = net.clone();
        train(&mut net, &data, &TrainConfig { learning_rate: 0.0, ..quick() }).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn deterministic() {
        let data = synth_classification_set(1, 24, 2).unwrap();
        let mut a = Network::t3(2, 1).unwrap();
        let mut b = a.clone();
        let cfg = TrainConfig { augment_hflip: true, ..quick() };
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn loss_decreases() {
        let data = synth_classification_set(4, 64, 2).unwrap();
        let mut net = Network::t3(2, 2).unwrap();
        let r = train(&mut net, &data, &TrainConfig { epochs: 4, ..quick() }).unwrap();
        assert!(r.final_loss() < r.initial_loss);
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = synth_classification_set(1, 16, 2).unwrap();
        let mut net = Network::t3(2, 1).unwrap();
        let cfg = TrainConfig { learning_rate: 1e300, momentum: 0.0, ..quick() };
        match train(&mut net, &data, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch < 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
