//! Site permutation tables `output site → [(input site, weight)]`.

use serde::{Deserialize, Serialize};

use crate::equilearn::back_project;
use crate::field::Geometry;
use crate::imaging::GeometricTransform;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TableMode {
    /// Nearest site, halves rounded toward the lower coordinate.
    #[default]
    Round,
    /// Bilinear weights over the surrounding 2×2 sites.
    Bilinear,
}

impl std::str::FromStr for TableMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round" => Ok(TableMode::Round),
            "bilinear" => Ok(TableMode::Bilinear),
            _ => Err(crate::Error::InvalidInput(format!("unknown table mode '{s}'"))),
        }
    }
}

/// Sources of every output site of a `width × height` grid, indexed by
/// `u·height + v`. An empty list marks a dead site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTable {
    pub width: usize,
    pub height: usize,
    pub mode: TableMode,
    pub entries: Vec<Vec<(usize, f64)>>,
}

/// Back-projections closer than this to a lattice site snap onto it.
const SNAP: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

#[inline]
fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil()
}

impl PermutationTable {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            mode: TableMode::Round,
            entries: (0..width * height).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn num_sites(&self) -> usize {
        self.width * self.height
    }

    pub fn is_live(&self, site: usize) -> bool {
        !self.entries[site].is_empty()
    }

    pub fn live_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_empty()).count()
    }

    /// Explicit `(output site, input site, weight)` triplets.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(o, e)| e.iter().map(move |&(i, w)| (o, i, w)))
            .collect()
    }

    pub fn from_triplets(width: usize, height: usize, mode: TableMode, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries = vec![Vec::new(); width * height];
        for &(o, i, w) in triplets {
            if o >= entries.len() || i >= width * height {
                return Err(crate::Error::Format(format!("table triplet ({o}, {i}) out of range")));
            }
            entries[o].push((i, w));
        }
        Ok(Self {
            width,
            height,
            mode,
            entries,
        })
    }
}

/// Table realising `(u,v,t) ↦ (g(u,v),t)`: output site `(u,v)` reads from
/// the input sites nearest `p⁻¹∘g⁻¹∘p(u,v)`. Sites whose rounded
/// back-projection leaves the grid are dead; bilinear corners are clamped
/// into the grid.
pub fn build_permutation_table(
    dims: (usize, usize),
    geometry: &Geometry,
    g: &GeometricTransform,
    mode: TableMode,
) -> Result<PermutationTable> {
    let (w, h) = dims;
    let g_inv = g.inverse()?;
    let mut entries = Vec::with_capacity(w * h);
    let inside = |a: f64, n: usize| a >= 0.0 && a <= n as f64 - 1.0;
    for u in 0..w {
        for v in 0..h {
            let (qu, qv) = back_project(geometry, geometry, &g_inv, (u, v));
            let (qu, qv) = (snap(qu), snap(qv));
            let (ru, rv) = (round_half_down(qu), round_half_down(qv));
            if !(inside(ru, w) && inside(rv, h)) {
                entries.push(Vec::new());
                continue;
            }
            let entry = match mode {
                TableMode::Round => vec![(ru as usize * h + rv as usize, 1.0)],
                TableMode::Bilinear => {
                    let (u0, v0) = (qu.floor(), qv.floor());
                    let (fu, fv) = (qu - u0, qv - v0);
                    let mut e: Vec<(usize, f64)> = Vec::with_capacity(4);
                    for (du, wu) in [(0.0, 1.0 - fu), (1.0, fu)] {
                        for (dv, wv) in [(0.0, 1.0 - fv), (1.0, fv)] {
                            let wt = wu * wv;
                            if wt == 0.0 {
                                continue;
                            }
                            let cu = (u0 + du).clamp(0.0, w as f64 - 1.0) as usize;
                            let cv = (v0 + dv).clamp(0.0, h as f64 - 1.0) as usize;
                            let site = cu * h + cv;
                            match e.iter_mut().find(|(s, _)| *s == site) {
                                Some(slot) => slot.1 += wt,
                                None => e.push((site, wt)),
                            }
                        }
                    }
                    e
                }
            };
            entries.push(entry);
        }
    }
    Ok(PermutationTable {
        width: w,
        height: h,
        mode,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::transform_point;

    fn hog_geo() -> Geometry {
        Geometry::new(8.0, 3.5)
    }

    #[test]
    fn identity_table() {
        let t = build_permutation_table((5, 4), &hog_geo(), &GeometricTransform::identity(), TableMode::Round).unwrap();
        assert_eq!(t, PermutationTable::identity(5, 4));
        let b = build_permutation_table((5, 4), &hog_geo(), &GeometricTransform::identity(), TableMode::Bilinear).unwrap();
        assert_eq!(b.entries, t.entries);
    }

    #[test]
    fn hflip_table() {
        let (w, h) = (7, 3);
        let t = build_permutation_table((w, h), &hog_geo(), &GeometricTransform::hflip(w * 8), TableMode::Round).unwrap();
        for u in 0..w {
            for v in 0..h {
                assert_eq!(t.entries[u * h + v], vec![((w - 1 - u) * h + v, 1.0)]);
            }
        }
    }

    #[test]
    fn rot90_table_matches_transform_point() {
        let w = 9;
        let g = GeometricTransform::rotation_centered(90.0, w * 8, w * 8);
        let t = build_permutation_table((w, w), &hog_geo(), &g, TableMode::Round).unwrap();
        let geo = hog_geo();
        for u in 0..w {
            for v in 0..w {
                let src = (v, w - 1 - u);
                assert_eq!(t.entries[u * w + v], vec![(src.0 * w + src.1, 1.0)]);
                // The source site is carried onto the output site by g.
                let (x, y) = transform_point(&g, geo.to_image(src.0 as f64, src.1 as f64));
                let (gu, gv) = geo.to_grid(x, y);
                assert!((gu - u as f64).abs() < 1e-9 && (gv - v as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bilinear_weights_sum_to_one() {
        let g = GeometricTransform::rotation_centered(33.0, 80, 80);
        let t = build_permutation_table((10, 10), &hog_geo(), &g, TableMode::Bilinear).unwrap();
        assert!(t.live_count() > 0 && t.live_count() < 100);
        for e in t.entries.iter().filter(|e| !e.is_empty()) {
            assert!(e.len() <= 4);
            assert!((e.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let r = build_permutation_table((10, 10), &hog_geo(), &g, TableMode::Round).unwrap();
        for (a, b) in r.entries.iter().zip(&t.entries) {
            assert_eq!(a.is_empty(), b.is_empty());
        }
    }

    #[test]
    fn ties_round_down() {
        assert_eq!(round_half_down(2.5), 2.0);
        assert_eq!(round_half_down(-0.5), -1.0);
        assert_eq!(round_half_down(2.5000001), 3.0);
    }

    #[test]
    fn triplets_round_trip() {
        let g = GeometricTransform::rotation_centered(20.0, 64, 64);
        let t = build_permutation_table((8, 8), &hog_geo(), &g, TableMode::Bilinear).unwrap();
        let back = PermutationTable::from_triplets(8, 8, TableMode::Bilinear, &t.triplets()).unwrap();
        assert_eq!(back, t);
    }
}
