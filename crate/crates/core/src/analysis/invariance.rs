//! Invariance scores of transformation-layer channels and the largest set of
//! channels that can be made invariant without hurting classification.

use serde::{Deserialize, Serialize};

use crate::equilearn::transformed_features;
use crate::featnet::{inserted_error, NetworkSplit};
use crate::field::FeatureField;
use crate::imaging::{GeometricTransform, Interpolation, LabeledDataset, Padding};
use crate::netsurgery::TransformationLayer;
use crate::Result;

/// Score assigned to rows whose off-diagonal part vanishes.
pub const INVARIANCE_SENTINEL: f64 = 1e12;

/// Per output channel `t`: `‖row_t‖₂ / ‖row_t with the centre-tap channel-t
/// coefficient zeroed‖₂`. All-zero rows score 1.
pub fn invariance_scores(layer: &TransformationLayer) -> Vec<f64> {
    let d = layer.channels;
    let m = layer.m;
    let c = m / 2;
    (0..d)
        .map(|t| {
            let mut total = 0.0;
            for du in 0..m {
                for dv in 0..m {
                    for ti in 0..d {
                        total += layer.weight(t, du, dv, ti).powi(2);
                    }
                }
            }
            let diag = layer.weight(t, c, c, t).powi(2);
            let off = (total - diag).max(0.0);
            if total == 0.0 {
                1.0
            } else if off == 0.0 {
                INVARIANCE_SENTINEL
            } else {
                (total / off).sqrt()
            }
        })
        .collect()
}

/// Channels by decreasing score, lower index first on ties.
pub fn ranked_channels(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Replaces the filters of `channels` by `α·δ`, `α` the original diagonal
/// coefficient; biases are kept.
pub fn invariant_replacement(layer: &TransformationLayer, channels: &[usize]) -> TransformationLayer {
    let mut out = layer.clone();
    let shape = layer.shape();
    let (m, d) = (layer.m, layer.channels);
    let c = m / 2;
    for &t in channels {
        let alpha = layer.weight(t, c, c, t);
        for du in 0..m {
            for dv in 0..m {
                for ti in 0..d {
                    out.params[shape.weight_index(t, du, dv, ti)] = 0.0;
                }
            }
        }
        out.params[shape.weight_index(t, c, c, t)] = alpha;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceEvaluation {
    pub p: usize,
    pub error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub scores: Vec<f64>,
    /// Largest accepted number of invariant channels.
    pub accepted_p: usize,
    /// The `accepted_p` top-scoring channels.
    pub channels: Vec<usize>,
    /// Error with the unmodified layer.
    pub base_error: f64,
    /// Error with the accepted replacement.
    pub accepted_error: f64,
    pub rel_tol: f64,
    pub evaluations: Vec<InvarianceEvaluation>,
    /// `false` when a smaller `p` failed while a larger one passed.
    pub monotone: bool,
}

/// Binary search for the largest `p` such that replacing the top-`p`
/// channels keeps `err ≤ (1 + rel_tol)·err(M_g)` on cached `φ1(g⁻¹x)`.
pub fn max_invariant_set_cached(
    layer: &TransformationLayer,
    split: &NetworkSplit,
    inputs: &[FeatureField],
    labels: &[usize],
    rel_tol: f64,
) -> Result<InvarianceReport> {
    let scores = invariance_scores(layer);
    let order = ranked_channels(&scores);
    let d = layer.channels;
    let base_error = inserted_error(layer, &split.net, split.s, inputs, labels)?;
    let bound = (1.0 + rel_tol) * base_error;
    let mut evaluations = vec![InvarianceEvaluation { p: 0, error: base_error, pass: true }];
    let eval = |p: usize, evals: &mut Vec<InvarianceEvaluation>| -> Result<bool> {
        if let Some(e) = evals.iter().find(|e| e.p == p) {
            return Ok(e.pass);
        }
        let error = if p == 0 {
            base_error
        } else {
            inserted_error(&invariant_replacement(layer, &order[..p]), &split.net, split.s, inputs, labels)?
        };
        let pass = rel_tol == f64::INFINITY || error <= bound;
        evals.push(InvarianceEvaluation { p, error, pass });
        Ok(pass)
    };
    let accepted_p = if eval(d, &mut evaluations)? {
        d
    } else {
        let (mut lo, mut hi) = (0, d);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if eval(mid, &mut evaluations)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo >= 2 {
            eval(lo / 2, &mut evaluations)?;
        }
        lo
    };
    evaluations.sort_by_key(|e| e.p);
    let monotone = evaluations
        .iter()
        .all(|e| e.pass || evaluations.iter().all(|f| f.p <= e.p || !f.pass));
    if !monotone {
        log::warn!("invariance predicate is not monotone in p: {evaluations:?}");
    }
    let accepted_error = evaluations.iter().find(|e| e.p == accepted_p).map_or(base_error, |e| e.error);
    Ok(InvarianceReport {
        scores,
        accepted_p,
        channels: order[..accepted_p].to_vec(),
        base_error,
        accepted_error,
        rel_tol,
        evaluations,
        monotone,
    })
}

/// [`max_invariant_set_cached`] on `φ1(g⁻¹x)` for a classification set.
pub fn max_invariant_set(
    layer: &TransformationLayer,
    split: &NetworkSplit,
    g: &GeometricTransform,
    data: &LabeledDataset,
    rel_tol: f64,
) -> Result<InvarianceReport> {
    let inputs = transformed_features(split, g, data, Interpolation::Bilinear, Padding::Zero)?;
    max_invariant_set_cached(layer, split, &inputs, &data.class_labels()?, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::Network;
    use crate::imaging::synth::synth_classification_set;
    use crate::netsurgery::PermutationTable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(d: usize, seed: u64) -> TransformationLayer {
        let mut l = TransformationLayer::identity_init(PermutationTable::identity(4, 4), d, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        l.params.iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
        l
    }

    #[test]
    fn identity_scores_are_sentinel() {
        let l = TransformationLayer::identity_init(PermutationTable::identity(3, 3), 5, 3).unwrap();
        assert!(invariance_scores(&l).iter().all(|&s| s == INVARIANCE_SENTINEL));
    }

    #[test]
    fn zero_diagonal_scores_one() {
        let mut l = random_layer(4, 1);
        let shape = l.shape();
        l.params[shape.weight_index(2, 1, 1, 2)] = 0.0;
        assert!((invariance_scores(&l)[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn planted_identity_channels_rank_first() {
        let mut l = random_layer(16, 2);
        let shape = l.shape();
        for &t in &[3usize, 9, 14] {
            for du in 0..3 {
                for dv in 0..3 {
                    for ti in 0..16 {
                        l.params[shape.weight_index(t, du, dv, ti)] = if (du, dv, ti) == (1, 1, t) { 0.8 } else { 0.0 };
                    }
                }
            }
        }
        let mut top: Vec<usize> = ranked_channels(&invariance_scores(&l))[..3].to_vec();
        top.sort();
        assert_eq!(top, vec![3, 9, 14]);
    }

    #[test]
    fn scores_are_scale_covariant() {
        let l = random_layer(6, 3);
        let mut scaled = l.clone();
        let shape = l.shape();
        for du in 0..3 {
            for dv in 0..3 {
                for ti in 0..6 {
                    scaled.params[shape.weight_index(4, du, dv, ti)] *= 3.7;
                }
            }
        }
        let (a, b) = (invariance_scores(&l), invariance_scores(&scaled));
        assert!((a[4] - b[4]).abs() < 1e-12);
    }

    #[test]
    fn identity_layer_and_vacuous_tolerance_accept_all() {
        let net = Network::t3(2, 1).unwrap();
        let split = NetworkSplit::new(net, 4).unwrap();
        let data = synth_classification_set(3, 12, 2).unwrap();
        let (w, h, d) = split.phi1_dims().unwrap();
        let id = TransformationLayer::identity_init(PermutationTable::identity(w, h), d, 3).unwrap();
        let g = GeometricTransform::identity();
        assert_eq!(max_invariant_set(&id, &split, &g, &data, 0.05).unwrap().accepted_p, d);
        let mut noisy = id.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        noisy.params.iter_mut().for_each(|p| *p += rng.gen_range(-0.3..0.3));
        let r = max_invariant_set(&noisy, &split, &g, &data, f64::INFINITY).unwrap();
        assert_eq!(r.accepted_p, d);
    }
}
