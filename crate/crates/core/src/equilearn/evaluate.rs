//! Held-out reconstruction error of a map against the "None" baseline
//! (`M = 1`) and the distance of the target to the zero vector.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::map::EquivariantMap;
use super::pairs::{assemble_pairs, PairOptions, PairSet};
use super::FeatureExtractor;
use crate::hog::Metric;
use crate::imaging::{GeometricTransform, Image};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub count: usize,
}

impl DistanceStats {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 {
            sorted[count / 2]
        } else {
            0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
        };
        Self {
            mean,
            median,
            std: var.sqrt(),
            count,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEvaluation {
    pub metric: Metric,
    /// `d(φ(gx), M φ(x))` per supervised cell.
    pub error: DistanceStats,
    /// `d(φ(gx), φ(x))` per supervised cell.
    pub baseline: DistanceStats,
    /// `‖φ(gx)‖₂` per supervised cell.
    pub reference: DistanceStats,
}

/// Evaluates `map` over the supervised sites of `pairs`. Predictions are
/// clamped at zero for metrics defined on histograms.
pub fn evaluate_map_on_pairs(map: &EquivariantMap, pairs: &PairSet, metric: Metric) -> Result<MapEvaluation> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty pair set".into()));
    }
    if map.out_dims != pairs.out_dims() {
        return Err(Error::DimensionMismatch(format!(
            "map outputs {:?}, targets are {:?}",
            map.out_dims,
            pairs.out_dims()
        )));
    }
    let same = pairs.in_dims() == pairs.out_dims();
    let clamp = metric != Metric::L2;
    let per_pair: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = pairs
        .inputs
        .par_iter()
        .zip(&pairs.targets)
        .map(|(x, y)| {
            let mut pred = map.apply(x)?;
            if clamp {
                pred.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let mut e = Vec::with_capacity(pairs.valid_sites.len());
            let mut b = Vec::with_capacity(pairs.valid_sites.len());
            let mut r = Vec::with_capacity(pairs.valid_sites.len());
            for &(u, v) in &pairs.valid_sites {
                let target = y.cell(u, v);
                e.push(metric.cell(target, pred.cell(u, v)));
                if same {
                    b.push(metric.cell(target, x.cell(u, v)));
                }
                r.push(target.iter().map(|t| t * t).sum::<f64>().sqrt());
            }
            Ok((e, b, r))
        })
        .collect::<Result<_>>()?;
    let mut e = Vec::new();
    let mut b = Vec::new();
    let mut r = Vec::new();
    for (pe, pb, pr) in per_pair {
        e.extend(pe);
        b.extend(pb);
        r.extend(pr);
    }
    Ok(MapEvaluation {
        metric,
        error: DistanceStats::from_values(&e),
        baseline: DistanceStats::from_values(&b),
        reference: DistanceStats::from_values(&r),
    })
}

/// Extracts held-out pairs for `g` and evaluates `map` on them.
pub fn evaluate_map<E: FeatureExtractor + ?Sized>(
    map: &EquivariantMap,
    extractor: &E,
    g: &GeometricTransform,
    images: &[Image],
    metric: Metric,
    opts: &PairOptions,
) -> Result<MapEvaluation> {
    let pairs = assemble_pairs(images, g, extractor, opts)?;
    evaluate_map_on_pairs(map, &pairs, metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilearn::CropPolicy;
    use crate::hog::{analytic_permutation, HogConfig, HogExtractor};
    use crate::imaging::synth::synth_generic_set;
    use crate::imaging::{Split, TransformSpec};

    #[test]
    fn stats() {
        let s = DistanceStats::from_values(&[1.0, 3.0, 2.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.count, 4);
        assert!((s.std - (12.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_hflip_is_zero_error() {
        let cfg = HogConfig::default();
        let ex = HogExtractor::new(cfg);
        let imgs = synth_generic_set(5, Split::Test, 3, 64);
        let map = analytic_permutation((8, 8), TransformSpec::HFlip, &cfg).unwrap();
        let g = TransformSpec::HFlip.resolve(64, 64).unwrap();
        let opts = PairOptions { crop: CropPolicy::All, ..PairOptions::default() };
        let ev = evaluate_map(&map, &ex, &g, &imgs, Metric::Hellinger, &opts).unwrap();
        assert!(ev.error.mean <= 1e-10, "{}", ev.error.mean);
        assert!(ev.baseline.mean > 0.01);
    }

    #[test]
    fn identity_is_zero() {
        let cfg = HogConfig::default();
        let ex = HogExtractor::new(cfg);
        let imgs = synth_generic_set(6, Split::Test, 2, 48);
        let map = EquivariantMap::identity((6, 6, 31), cfg.geometry());
        let ev = evaluate_map(&map, &ex, &GeometricTransform::identity(), &imgs, Metric::L2, &PairOptions::default()).unwrap();
        assert_eq!(ev.error.mean, 0.0);
        assert_eq!(ev.baseline.mean, 0.0);
        assert!(ev.reference.mean > 0.0);
    }
}
