//! Conversions between transformation layers and sparse equivariant maps.

use std::collections::BTreeMap;

use super::table::{build_permutation_table, TableMode};
use super::translayer::TransformationLayer;
use crate::equilearn::{EquivariantMap, MapMeta, MapMethod, MapRow};
use crate::field::Geometry;
use crate::imaging::GeometricTransform;
use crate::{Error, Result};

/// Window site of tap `(du, dv)` around `(u, v)` for a side-`m` filter.
fn tap_site(u: usize, v: usize, du: usize, dv: usize, m: usize, w: usize, h: usize) -> Option<usize> {
    let c = (m / 2) as isize;
    let su = u as isize + du as isize - c;
    let sv = v as isize + dv as isize - c;
    (su >= 0 && sv >= 0 && (su as usize) < w && (sv as usize) < h).then(|| su as usize * h + sv as usize)
}

/// The dense equivalent `(A, b)` of a transformation layer.
pub fn translayer_to_map(layer: &TransformationLayer, geometry: Geometry, transform: Option<GeometricTransform>) -> Result<EquivariantMap> {
    let (w, h, d) = layer.dims();
    let m = layer.m;
    let mut rows = Vec::with_capacity(w * h * d);
    for u in 0..w {
        for v in 0..h {
            let live = layer.table.is_live(u * h + v);
            for o in 0..d {
                if !live {
                    rows.push(MapRow::default());
                    continue;
                }
                let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
                for du in 0..m {
                    for dv in 0..m {
                        let Some(s) = tap_site(u, v, du, dv, m, w, h) else { continue };
                        for &(src, wt) in &layer.table.entries[s] {
                            for t in 0..d {
                                let c = layer.weight(o, du, dv, t) * wt;
                                if c != 0.0 {
                                    *acc.entry((src * d + t) as u32).or_insert(0.0) += c;
                                }
                            }
                        }
                    }
                }
                let (cols, coeffs) = acc.into_iter().unzip();
                rows.push(MapRow {
                    cols,
                    coeffs,
                    bias: layer.bias()[o],
                });
            }
        }
    }
    let meta = MapMeta {
        transform,
        method: MapMethod::Layer,
        m: Some(m),
        ..MapMeta::default()
    };
    EquivariantMap::new((w, h, d), (w, h, d), geometry, rows, meta)
}

fn row_participates(r: &MapRow) -> bool {
    !r.cols.is_empty() || r.bias != 0.0
}

/// Ties a map into a rounding-mode transformation layer by averaging each
/// filter coefficient over all output sites whose rows are non-empty.
/// Returns the layer and the largest deviation between a participating row
/// and the row of the tied layer.
pub fn map_to_translayer(map: &EquivariantMap, m: usize) -> Result<(TransformationLayer, f64)> {
    let g = map
        .meta
        .transform
        .ok_or_else(|| Error::InvalidInput("map carries no transformation".into()))?;
    if map.in_dims != map.out_dims {
        return Err(Error::DimensionMismatch("map input and output grids differ".into()));
    }
    let (w, h, d) = map.out_dims;
    let table = build_permutation_table((w, h), &map.geometry, &g, TableMode::Round)?;
    let mut layer = TransformationLayer::identity_init(table, d, m)?;
    let shape = layer.shape();
    let mut sum = vec![0.0; shape.num_weights()];
    let mut count = vec![0usize; shape.num_weights()];
    let mut bias_sum = vec![0.0; d];
    let mut bias_count = vec![0usize; d];
    for u in 0..w {
        for v in 0..h {
            let site = u * h + v;
            if !layer.table.is_live(site) {
                continue;
            }
            // input site -> first tap reading it
            let mut taps: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for du in 0..m {
                for dv in 0..m {
                    if let Some(s) = tap_site(u, v, du, dv, m, w, h) {
                        if let Some(&(src, _)) = layer.table.entries[s].first() {
                            taps.entry(src).or_insert((du, dv));
                        }
                    }
                }
            }
            for o in 0..d {
                let row_index = site * d + o;
                let row = &map.rows[row_index];
                if !row_participates(row) {
                    continue;
                }
                bias_sum[o] += row.bias;
                bias_count[o] += 1;
                for &(du, dv) in taps.values() {
                    for t in 0..d {
                        count[shape.weight_index(o, du, dv, t)] += 1;
                    }
                }
                for (&col, &c) in row.cols.iter().zip(&row.coeffs) {
                    let (src, t) = (col as usize / d, col as usize % d);
                    match taps.get(&src) {
                        Some(&(du, dv)) => sum[shape.weight_index(o, du, dv, t)] += c,
                        None if c != 0.0 => {
                            return Err(Error::SupportViolation {
                                row: row_index,
                                col: col as usize,
                            })
                        }
                        None => {}
                    }
                }
            }
        }
    }
    for (i, p) in layer.params[..shape.num_weights()].iter_mut().enumerate() {
        *p = if count[i] > 0 { sum[i] / count[i] as f64 } else { 0.0 };
    }
    for o in 0..d {
        layer.params[shape.num_weights() + o] = if bias_count[o] > 0 { bias_sum[o] / bias_count[o] as f64 } else { 0.0 };
    }
    let tied = translayer_to_map(&layer, map.geometry, Some(g))?;
    let mut residual: f64 = 0.0;
    for (a, b) in map.rows.iter().zip(&tied.rows) {
        if row_participates(a) {
            residual = residual.max(row_distance(a, b));
        }
    }
    Ok((layer, residual))
}

/// Max-norm distance between two sparse rows, bias included.
fn row_distance(a: &MapRow, b: &MapRow) -> f64 {
    let mut diff: BTreeMap<u32, f64> = BTreeMap::new();
    for (&c, &x) in a.cols.iter().zip(&a.coeffs) {
        *diff.entry(c).or_insert(0.0) += x;
    }
    for (&c, &x) in b.cols.iter().zip(&b.coeffs) {
        *diff.entry(c).or_insert(0.0) -= x;
    }
    diff.values().fold((a.bias - b.bias).abs(), |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::{random_input, Differentiable};
    use crate::hog::{analytic_permutation, extract_hog, HogConfig};
    use crate::imaging::synth::synth_generic_set;
    use crate::imaging::{warp, Interpolation, Padding, Split, TransformSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(g: &GeometricTransform, geo: &Geometry, mode: TableMode, seed: u64) -> TransformationLayer {
        let table = build_permutation_table((6, 6), geo, g, mode).unwrap();
        let mut l = TransformationLayer::identity_init(table, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        l.params.iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
        l
    }

    #[test]
    fn layer_and_map_agree() {
        let geo = Geometry::new(8.0, 3.5);
        for (deg, mode) in [(90.0, TableMode::Round), (25.0, TableMode::Round), (25.0, TableMode::Bilinear)] {
            let g = GeometricTransform::rotation_centered(deg, 48, 48);
            let l = random_layer(&g, &geo, mode, 3);
            let map = translayer_to_map(&l, geo, Some(g)).unwrap();
            let mut x = random_input((6, 6, 4), 0.0, 9);
            x.geometry = geo;
            let a = l.forward(&x).unwrap();
            let b = map.apply(&x).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-10);
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let geo = Geometry::new(8.0, 3.5);
        let g = GeometricTransform::rotation_centered(180.0, 48, 48);
        let l = random_layer(&g, &geo, TableMode::Round, 5);
        let map = translayer_to_map(&l, geo, Some(g)).unwrap();
        let (back, residual) = map_to_translayer(&map, 3).unwrap();
        assert!(residual <= 1e-12, "{residual}");
        for (a, b) in back.params.iter().zip(&l.params) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn analytic_hflip_is_one_hot() {
        let cfg = HogConfig::default();
        let map = analytic_permutation((6, 6), TransformSpec::HFlip, &cfg).unwrap();
        let (layer, residual) = map_to_translayer(&map, 1).unwrap();
        assert_eq!(residual, 0.0);
        for o in 0..cfg.depth() {
            let row: Vec<f64> = (0..cfg.depth()).map(|t| layer.weight(o, 0, 0, t)).collect();
            assert_eq!(row.iter().filter(|&&c| c == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&c| c == 0.0).count(), cfg.depth() - 1);
        }
        // The layer reproduces the exact permutation on real HOG fields.
        let img = &synth_generic_set(2, Split::Test, 1, 48)[0];
        let g = TransformSpec::HFlip.resolve(48, 48).unwrap();
        let f = extract_hog(img, &cfg).unwrap();
        let fg = extract_hog(&warp(img, &g, Interpolation::Bilinear, Padding::Replicate).unwrap(), &cfg).unwrap();
        assert!(layer.forward(&f).unwrap().max_abs_diff(&fg) <= 1e-10);
        assert!(map.apply(&f).unwrap().max_abs_diff(&fg) <= 1e-10);
    }

    #[test]
    fn support_violation() {
        let geo = Geometry::new(8.0, 3.5);
        let g = GeometricTransform::identity();
        let l = random_layer(&g, &geo, TableMode::Round, 1);
        let mut map = translayer_to_map(&l, geo, Some(g)).unwrap();
        map.rows[0].cols.push(35 * 4);
        map.rows[0].coeffs.push(1.0);
        assert!(matches!(map_to_translayer(&map, 3), Err(Error::SupportViolation { .. })));
    }
}
