use super::HogConfig;
use crate::equilearn::{EquivariantMap, MapMeta, MapMethod, MapRow};
use crate::field::Geometry;
use crate::imaging::TransformSpec;
use crate::{Error, Result};

/// Channel permutation `σ` with `φ(gx)[t] = φ(x)[σ(t)]` at corresponding
/// cells, for `g ∈ {hflip, vflip, rot180}`.
pub fn channel_permutation(g: TransformSpec, cfg: &HogConfig) -> Result<Vec<usize>> {
    let k = cfg.num_orientations;
    let nb = 2 * k;
    // (sensitive bin map, insensitive bin map, texture quadrant xor)
    let (sens, insens, quad): (Box<dyn Fn(usize) -> usize>, Box<dyn Fn(usize) -> usize>, usize) =
        match g {
            TransformSpec::HFlip => (
                Box::new(move |o| (k + nb - o) % nb),
                Box::new(move |o| (k - o) % k),
                1,
            ),
            TransformSpec::VFlip => (
                Box::new(move |o| (nb - o) % nb),
                Box::new(move |o| (k - o) % k),
                2,
            ),
            TransformSpec::Rotation(d) if d.rem_euclid(360.0) == 180.0 => {
                (Box::new(move |o| (o + k) % nb), Box::new(|o| o), 3)
            }
            other => {
                return Err(Error::Unsupported(format!(
                    "no exact HOG permutation for {other} (only hflip, vflip, rot180)"
                )))
            }
        };
    let mut perm = Vec::with_capacity(cfg.depth());
    perm.extend((0..nb).map(&sens));
    perm.extend((0..k).map(|o| nb + insens(o)));
    perm.extend((0..4).map(|j| 3 * k + (j ^ quad)));
    Ok(perm)
}

/// Exact permutation map for a `width × height` HOG grid. Every row has a
/// single unit coefficient and zero bias.
pub fn analytic_permutation(
    dims: (usize, usize),
    g: TransformSpec,
    cfg: &HogConfig,
) -> Result<EquivariantMap> {
    cfg.validate()?;
    let (w, h) = dims;
    let perm = channel_permutation(g, cfg)?;
    let d = cfg.depth();
    let site = |u: usize, v: usize| -> (usize, usize) {
        match g {
            TransformSpec::HFlip => (w - 1 - u, v),
            TransformSpec::VFlip => (u, h - 1 - v),
            _ => (w - 1 - u, h - 1 - v),
        }
    };
    let mut rows = Vec::with_capacity(w * h * d);
    for u in 0..w {
        for v in 0..h {
            let (su, sv) = site(u, v);
            for &src in &perm {
                let col = (su * h + sv) * d + src;
                rows.push(MapRow {
                    cols: vec![col as u32],
                    coeffs: vec![1.0],
                    bias: 0.0,
                });
            }
        }
    }
    let geometry: Geometry = cfg.geometry();
    let image = (w * cfg.cell_size, h * cfg.cell_size);
    let meta = MapMeta {
        transform: Some(g.resolve(image.0, image.1)?),
        method: MapMethod::Analytic,
        ..MapMeta::default()
    };
    EquivariantMap::new((w, h, d), (w, h, d), geometry, rows, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hog::extract::orientation_position;

    const SPECS: [TransformSpec; 3] = [TransformSpec::HFlip, TransformSpec::VFlip, TransformSpec::Rotation(180.0)];

    #[test]
    fn permutations_are_involutions() {
        let cfg = HogConfig::default();
        for g in SPECS {
            let p = channel_permutation(g, &cfg).unwrap();
            let mut seen = vec![false; p.len()];
            for (t, &s) in p.iter().enumerate() {
                assert_eq!(p[s], t, "{g}");
                seen[s] = true;
            }
            assert!(seen.iter().all(|&x| x));
            let m = analytic_permutation((5, 4), g, &cfg).unwrap();
            let twice = m.compose(&m).unwrap();
            for (i, row) in twice.rows.iter().enumerate() {
                assert_eq!(row.cols, vec![i as u32]);
                assert_eq!(row.coeffs, vec![1.0]);
            }
        }
    }

    #[test]
    fn rot180_shifts_sensitive_bins_by_k() {
        let cfg = HogConfig::default();
        let p = channel_permutation(TransformSpec::Rotation(180.0), &cfg).unwrap();
        for o in 0..18 {
            assert_eq!(p[o], (o + 9) % 18);
        }
    }

    /// Enumerates bin-centre directions, pushes them through the linear part of
    /// `g` and reads back the bin they land in.
    #[test]
    fn bin_tables_match_bin_centre_geometry() {
        for k in [4usize, 9] {
            let cfg = HogConfig { cell_size: 8, num_orientations: k };
            for (g, lin) in [
                (TransformSpec::HFlip, [[-1.0, 0.0], [0.0, 1.0]]),
                (TransformSpec::VFlip, [[1.0, 0.0], [0.0, -1.0]]),
                (TransformSpec::Rotation(180.0), [[-1.0, 0.0], [0.0, -1.0]]),
            ] {
                let p = channel_permutation(g, &cfg).unwrap();
                for o in 0..2 * k {
                    let ang = o as f64 * std::f64::consts::PI / k as f64;
                    let (dx, dy) = (ang.cos(), ang.sin());
                    let (tx, ty) = (lin[0][0] * dx + lin[0][1] * dy, lin[1][0] * dx + lin[1][1] * dy);
                    let pos = orientation_position(tx, ty, k);
                    let landed = (pos.round() as usize) % (2 * k);
                    // the transformed image's bin `landed` reads the original bin `o`
                    assert_eq!(p[landed], o, "{g} k={k} o={o}");
                }
                for j in 0..4usize {
                    let (qx, qy) = (if j & 1 == 0 { -1.0 } else { 1.0 }, if j & 2 == 0 { -1.0 } else { 1.0 });
                    let (tx, ty) = (lin[0][0] * qx + lin[0][1] * qy, lin[1][0] * qx + lin[1][1] * qy);
                    let landed = usize::from(tx > 0.0) | (usize::from(ty > 0.0) << 1);
                    assert_eq!(p[3 * k + landed], 3 * k + j);
                }
            }
        }
    }

    #[test]
    fn rot90_is_unsupported() {
        let cfg = HogConfig::default();
        assert!(matches!(
            analytic_permutation((4, 4), TransformSpec::Rotation(90.0), &cfg),
            Err(Error::Unsupported(_))
        ));
        assert!(analytic_permutation((4, 4), TransformSpec::Scale(2.0), &cfg).is_err());
    }
}
