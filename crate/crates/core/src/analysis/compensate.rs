//! Classification of transformed images with and without equivariant
//! compensation `⟨w, M_g φ(g⁻¹x)⟩`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::LinearClassifier;
use crate::equilearn::{EquivariantMap, FeatureExtractor};
use crate::imaging::{warp, GeometricTransform, Interpolation, LabeledDataset, Padding};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensationPoint {
    pub label: String,
    /// Accuracy of `⟨w, φ(x)⟩` on untransformed images.
    pub original: f64,
    /// Accuracy of `⟨w, φ(g⁻¹x)⟩`.
    pub uncompensated: f64,
    /// Accuracy of `⟨w, M_g φ(g⁻¹x)⟩`.
    pub compensated: f64,
}

/// One point per grid entry `(label, g)`; `maps[label]` must hold `M_g`.
pub fn compensated_classification<E: FeatureExtractor + ?Sized>(
    clf: &LinearClassifier,
    extractor: &E,
    grid: &[(String, GeometricTransform)],
    maps: &HashMap<String, EquivariantMap>,
    test: &LabeledDataset,
    interp: Interpolation,
    pad: Padding,
) -> Result<Vec<CompensationPoint>> {
    if let Some((label, _)) = grid.iter().find(|(l, _)| !maps.contains_key(l)) {
        return Err(Error::MissingMap(label.clone()));
    }
    let labels = test.class_labels()?;
    let n = labels.len().max(1) as f64;
    let base: Vec<_> = test.items.par_iter().map(|it| extractor.extract(&it.image)).collect::<Result<_>>()?;
    let original = base
        .iter()
        .zip(&labels)
        .filter(|(f, &y)| clf.predict(f.data()) == y)
        .count() as f64
        / n;
    grid.iter()
        .map(|(label, g)| {
            let map = &maps[label];
            let g_inv = g.inverse()?;
            let hits: Vec<(bool, bool)> = test
                .items
                .par_iter()
                .zip(&labels)
                .map(|(it, &y)| {
                    let f = extractor.extract(&warp(&it.image, &g_inv, interp, pad)?)?;
                    let comp = map.apply(&f)?;
                    Ok((clf.predict(f.data()) == y, clf.predict(comp.data()) == y))
                })
                .collect::<Result<_>>()?;
            Ok(CompensationPoint {
                label: label.clone(),
                original,
                uncompensated: hits.iter().filter(|h| h.0).count() as f64 / n,
                compensated: hits.iter().filter(|h| h.1).count() as f64 / n,
            })
        })
        .collect()
}
