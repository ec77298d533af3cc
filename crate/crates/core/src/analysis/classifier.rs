//! Linear hinge-loss classifiers trained by Pegasos-style SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 30,
            seed: 0,
        }
    }
}

/// One-vs-rest linear scores `⟨w_c, x⟩ + b_c`; two classes use a single
/// discriminant whose positive side is class 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub num_classes: usize,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pegasos on `(x, 1)` with labels `±1`; the bias is the last coordinate.
fn pegasos(xs: &[&[f64]], ys: &[f64], cfg: &LinearConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let p = xs[0].len();
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut t = 0usize;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let margin = ys[i] * (dot(&w, xs[i]) + b);
            let shrink = 1.0 - eta * cfg.lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if margin < 1.0 {
                let s = eta * ys[i];
                w.iter_mut().zip(xs[i]).for_each(|(v, x)| *v += s * x);
                b += s;
            }
        }
    }
    (w, b)
}

impl LinearClassifier {
    pub fn train(features: &[Vec<f64>], labels: &[usize], num_classes: usize, cfg: &LinearConfig) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::InvalidInput("features and labels must be non-empty and aligned".into()));
        }
        if num_classes < 2 || labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::InvalidInput("labels out of range".into()));
        }
        if !(cfg.lambda > 0.0) {
            return Err(Error::InvalidInput("lambda must be positive".into()));
        }
        let xs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let targets: Vec<usize> = if num_classes == 2 { vec![1] } else { (0..num_classes).collect() };
        let mut weights = Vec::new();
        let mut bias = Vec::new();
        for c in targets {
            let ys: Vec<f64> = labels.iter().map(|&y| if y == c { 1.0 } else { -1.0 }).collect();
            let (w, b) = pegasos(&xs, &ys, cfg, &mut rng);
            weights.push(w);
            bias.push(b);
        }
        Ok(Self {
            num_classes,
            weights,
            bias,
        })
    }

    /// Raw scores, one per discriminant.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, x) + b).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        if self.num_classes == 2 {
            usize::from(s[0] > 0.0)
        } else {
            crate::featnet::argmax_lowest(&s)
        }
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let right = features.iter().zip(labels).filter(|(x, &y)| self.predict(x) == y).count();
        right as f64 / labels.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..200 {
            let y = i % 2;
            let c = if y == 1 { 1.0 } else { -1.0 };
            xs.push(vec![c + rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)]);
            ys.push(y);
        }
        let clf = LinearClassifier::train(&xs, &ys, 2, &LinearConfig::default()).unwrap();
        assert_eq!(clf.accuracy(&xs, &ys), 1.0);
    }

    #[test]
    fn multiclass() {
        let xs: Vec<Vec<f64>> = (0..90).map(|i| {
            let mut v = vec![0.0; 3];
            v[i % 3] = 1.0;
            v
        }).collect();
        let ys: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let clf = LinearClassifier::train(&xs, &ys, 3, &LinearConfig::default()).unwrap();
        assert_eq!(clf.accuracy(&xs, &ys), 1.0);
    }
}
