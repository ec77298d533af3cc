//! Structured-sparsity neighbourhoods `Ω_{g,m}(u,v)`: the `m²` input sites
//! nearest to the back-projection `p_in⁻¹ ∘ g⁻¹ ∘ p_out (u,v)`.

use crate::field::Geometry;
use crate::imaging::GeometricTransform;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub site: (usize, usize),
    /// Members in increasing `(distance², v, u)` order.
    pub members: Vec<(usize, usize)>,
}

/// Input-grid coordinates of the back-projection of output site `site`.
/// `g_inv` is the inverse of the image transformation.
pub fn back_project(
    p_out: &Geometry,
    p_in: &Geometry,
    g_inv: &GeometricTransform,
    site: (usize, usize),
) -> (f64, f64) {
    let (x, y) = p_out.to_image(site.0 as f64, site.1 as f64);
    let (x, y) = g_inv.apply((x, y));
    p_in.to_grid(x, y)
}

#[inline]
fn dist2(u: i64, v: i64, p: (f64, f64)) -> f64 {
    let du = u as f64 - p.0;
    let dv = v as f64 - p.1;
    du * du + dv * dv
}

/// The `count` lattice sites nearest to `p`, ordered by `(distance², v, u)`.
/// With `bounds = Some((w, h))` only sites in `[0,w)×[0,h)` qualify.
fn nearest_lattice(p: (f64, f64), count: usize, bounds: Option<(usize, usize)>) -> Vec<(i64, i64)> {
    if count == 0 {
        return Vec::new();
    }
    let available = bounds.map_or(usize::MAX, |(w, h)| w * h);
    let count = count.min(available);
    if count == 0 {
        return Vec::new();
    }
    let cu = p.0.round() as i64;
    let cv = p.1.round() as i64;
    let mut r: i64 = ((count as f64).sqrt() / 2.0).ceil() as i64;
    loop {
        let (mut u0, mut u1, mut v0, mut v1) = (cu - r, cu + r, cv - r, cv + r);
        let mut covers = false;
        if let Some((w, h)) = bounds {
            let (w, h) = (w as i64, h as i64);
            u0 = u0.max(0);
            v0 = v0.max(0);
            u1 = u1.min(w - 1);
            v1 = v1.min(h - 1);
            covers = cu - r <= 0 && cv - r <= 0 && cu + r >= w - 1 && cv + r >= h - 1;
        }
        let mut cand: Vec<(f64, i64, i64)> = Vec::new();
        for u in u0..=u1 {
            for v in v0..=v1 {
                cand.push((dist2(u, v, p), v, u));
            }
        }
        if cand.len() >= count {
            cand.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            // Sites outside the window are at least r + 0.5 away.
            let outside = r as f64 + 0.5;
            if covers || cand[count - 1].0 < outside * outside {
                return cand[..count].iter().map(|&(_, v, u)| (u, v)).collect();
            }
        }
        r += 1;
    }
}

/// The `m²` in-bounds sites of a `width × height` grid nearest to `p`.
pub fn nearest_sites(p: (f64, f64), m: usize, dims: (usize, usize)) -> Vec<(usize, usize)> {
    if !(p.0.is_finite() && p.1.is_finite()) {
        return Vec::new();
    }
    nearest_lattice(p, m * m, Some(dims))
        .into_iter()
        .map(|(u, v)| (u as usize, v as usize))
        .collect()
}

/// `Ω_{g,m}(site)` on an input grid of `in_dims = (width, height)`.
pub fn neighborhood(
    p_out: &Geometry,
    p_in: &Geometry,
    g: &GeometricTransform,
    m: usize,
    site: (usize, usize),
    in_dims: (usize, usize),
) -> Result<Neighborhood> {
    let g_inv = g.inverse()?;
    let p = back_project(p_out, p_in, &g_inv, site);
    Ok(Neighborhood {
        site,
        members: nearest_sites(p, m, in_dims),
    })
}

/// Whether the unclipped `m²`-nearest set of `p` lies inside the grid.
pub fn is_interior(p: (f64, f64), m: usize, dims: (usize, usize)) -> bool {
    if !(p.0.is_finite() && p.1.is_finite()) {
        return false;
    }
    let (w, h) = (dims.0 as i64, dims.1 as i64);
    nearest_lattice(p, m * m, None)
        .iter()
        .all(|&(u, v)| u >= 0 && v >= 0 && u < w && v < h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(p: (f64, f64), m: usize, dims: (usize, usize)) -> Vec<(usize, usize)> {
        let mut all: Vec<(f64, usize, usize)> = Vec::new();
        for u in 0..dims.0 {
            for v in 0..dims.1 {
                all.push((dist2(u as i64, v as i64, p), v, u));
            }
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.into_iter().take(m * m).map(|(_, v, u)| (u, v)).collect()
    }

    #[test]
    fn identity_single_site() {
        let geo = Geometry::new(8.0, 3.5);
        let n = neighborhood(&geo, &geo, &GeometricTransform::identity(), 1, (4, 7), (9, 9)).unwrap();
        assert_eq!(n.members, vec![(4, 7)]);
    }

    #[test]
    fn hflip_single_site() {
        let geo = Geometry::new(8.0, 3.5);
        let w = 11;
        let g = GeometricTransform::hflip(w * 8);
        for u in 0..w {
            let n = neighborhood(&geo, &geo, &g, 1, (u, 2), (w, 5)).unwrap();
            assert_eq!(n.members, vec![(w - 1 - u, 2)]);
        }
    }

    #[test]
    fn rot45_matches_exhaustive_sort() {
        let geo = Geometry::new(8.0, 3.5);
        let g = GeometricTransform::rotation_centered(45.0, 120, 120);
        let g_inv = g.inverse().unwrap();
        for u in 0..15 {
            for v in 0..15 {
                let p = back_project(&geo, &geo, &g_inv, (u, v));
                let n = neighborhood(&geo, &geo, &g, 3, (u, v), (15, 15)).unwrap();
                assert_eq!(n.members, brute(p, 3, (15, 15)));
                assert_eq!(n.members.len(), 9);
            }
        }
    }

    #[test]
    fn clipped_count_is_bounded_by_grid() {
        assert_eq!(nearest_sites((0.0, 0.0), 5, (3, 2)).len(), 6);
        assert_eq!(nearest_sites((50.0, -40.0), 3, (4, 4)).len(), 9);
    }

    #[test]
    fn interior_flags() {
        assert!(is_interior((5.0, 5.0), 3, (11, 11)));
        assert!(!is_interior((0.2, 5.0), 3, (11, 11)));
        assert!(is_interior((0.2, 5.0), 1, (11, 11)));
        assert!(!is_interior((-0.6, 5.0), 1, (11, 11)));
    }

    proptest! {
        #[test]
        fn matches_brute_force(x in -6.0f64..20.0, y in -6.0f64..20.0, m in 1usize..6, w in 1usize..15, h in 1usize..15) {
            prop_assert_eq!(nearest_sites((x, y), m, (w, h)), brute((x, y), m, (w, h)));
        }

        #[test]
        fn interior_sets_are_unclipped(x in -3.0f64..17.0, y in -3.0f64..17.0, m in 1usize..5) {
            let dims = (14, 14);
            if is_interior((x, y), m, dims) {
                let clipped = nearest_sites((x, y), m, dims);
                let free: Vec<(usize, usize)> = nearest_lattice((x, y), m * m, None)
                    .into_iter().map(|(u, v)| (u as usize, v as usize)).collect();
                prop_assert_eq!(clipped, free);
            }
        }
    }
}
