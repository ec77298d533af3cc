//! Task-oriented learning of `M_g` as a transformation layer inserted between
//! `φ1` and `φ2`, trained on `ℓ(y, φ2 ∘ M_g ∘ φ1(g⁻¹x))` with `φ` frozen.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featnet::{inserted_error, train_inserted, CurvePoint, NetworkSplit, TrainConfig};
use crate::field::FeatureField;
use crate::imaging::{warp, GeometricTransform, Interpolation, LabeledDataset, Padding};
use crate::netsurgery::{build_permutation_table, TableMode, TransformationLayer};
use crate::Result;

pub type TaskCurvePoint = CurvePoint;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLayerConfig {
    /// Odd filter side.
    pub m: usize,
    pub mode: TableMode,
    pub interp: Interpolation,
    pub pad: Padding,
}

impl Default for TaskLayerConfig {
    fn default() -> Self {
        Self {
            m: 3,
            mode: TableMode::Round,
            interp: Interpolation::Bilinear,
            pad: Padding::Zero,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskResult {
    pub layer: TransformationLayer,
    pub curve: Vec<TaskCurvePoint>,
    /// `φ2 ∘ φ1 (x)` on the validation set.
    pub original_error: f64,
    /// `φ2 ∘ φ1 (g⁻¹x)`.
    pub uncompensated_error: f64,
    /// `φ2 ∘ M_g ∘ φ1 (g⁻¹x)` after training.
    pub compensated_error: f64,
}

impl TaskResult {
    /// Fraction of the uncompensated error gap closed by the layer.
    pub fn recovery(&self) -> f64 {
        let gap = self.uncompensated_error - self.original_error;
        if gap <= 0.0 {
            return 1.0;
        }
        (self.uncompensated_error - self.compensated_error) / gap
    }
}

/// `φ1(g⁻¹ x)` for every item.
pub fn transformed_features(
    split: &NetworkSplit,
    g: &GeometricTransform,
    data: &LabeledDataset,
    interp: Interpolation,
    pad: Padding,
) -> Result<Vec<FeatureField>> {
    let g_inv = g.inverse()?;
    data.items
        .par_iter()
        .map(|it| split.phi1(&warp(&it.image, &g_inv, interp, pad)?))
        .collect()
}

/// Trains a transformation layer for `g` at the split of `split`.
pub fn learn_map_task(
    split: &NetworkSplit,
    g: &GeometricTransform,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
    layer_cfg: &TaskLayerConfig,
) -> Result<TaskResult> {
    let (w, h, d) = split.phi1_dims()?;
    let train_f = transformed_features(split, g, train, layer_cfg.interp, layer_cfg.pad)?;
    let val_f = transformed_features(split, g, val, layer_cfg.interp, layer_cfg.pad)?;
    let train_y = train.class_labels()?;
    let val_y = val.class_labels()?;
    let geometry = train_f[0].geometry;
    let table = build_permutation_table((w, h), &geometry, g, layer_cfg.mode)?;
    let mut layer = TransformationLayer::identity_init(table, d, layer_cfg.m)?;

    let original_error = split.net.error_rate(val)?;
    let wrong: usize = val_f
        .par_iter()
        .zip(&val_y)
        .map(|(f, &y)| Ok(usize::from(split.predict_from(f)? != y)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let uncompensated_error = wrong as f64 / val_y.len().max(1) as f64;
    let curve = train_inserted(
        &mut layer,
        &split.net,
        split.s,
        &train_f,
        &train_y,
        cfg,
        Some((&val_f, &val_y)),
    )?;
    let compensated_error = match curve.last().and_then(|p| p.val_error) {
        Some(e) => e,
        None => inserted_error(&layer, &split.net, split.s, &val_f, &val_y)?,
    };
    Ok(TaskResult {
        layer,
        curve,
        original_error,
        uncompensated_error,
        compensated_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::Network;
    use crate::imaging::synth::synth_classification_set;

    #[test]
    fn identity_starts_at_base_error() {
        let net = Network::t3(2, 2).unwrap();
        let data = synth_classification_set(7, 16, 2).unwrap();
        let split = NetworkSplit::new(net, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = learn_map_task(&split, &GeometricTransform::identity(), &data, &data, &cfg, &TaskLayerConfig::default()).unwrap();
        assert_eq!(r.curve[0].val_error, Some(r.original_error));
        assert_eq!(r.uncompensated_error, r.original_error);
    }
}
