//! Training pairs `(φ(x), φ(gx))` and the set of output sites they supervise.

use rayon::prelude::*;

use super::neighborhood::{back_project, is_interior};
use super::FeatureExtractor;
use crate::field::{FeatureField, Geometry};
use crate::imaging::{warp, GeometricTransform, Image, Interpolation, Padding};
use crate::{Error, Result};

/// Which output sites are supervised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropPolicy {
    /// Every output site.
    All,
    /// Sites whose unclipped `m×m` neighbourhood lies inside the input grid.
    Interior(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOptions {
    pub interp: Interpolation,
    pub pad: Padding,
    pub crop: CropPolicy,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            interp: Interpolation::Bilinear,
            pad: Padding::Replicate,
            crop: CropPolicy::Interior(3),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PairSet {
    pub g: GeometricTransform,
    /// `φ(x_i)`.
    pub inputs: Vec<FeatureField>,
    /// `φ(g x_i)`.
    pub targets: Vec<FeatureField>,
    /// Supervised output sites in storage order.
    pub valid_sites: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn in_dims(&self) -> (usize, usize, usize) {
        self.inputs[0].dims()
    }

    pub fn out_dims(&self) -> (usize, usize, usize) {
        self.targets[0].dims()
    }

    pub fn in_geometry(&self) -> Geometry {
        self.inputs[0].geometry
    }

    pub fn out_geometry(&self) -> Geometry {
        self.targets[0].geometry
    }
}

/// Output sites of `out` retained by `crop` when reading from `input`.
pub fn valid_sites(
    out: (usize, usize),
    p_out: &Geometry,
    input: (usize, usize),
    p_in: &Geometry,
    g: &GeometricTransform,
    crop: CropPolicy,
) -> Result<Vec<(usize, usize)>> {
    let g_inv = g.inverse()?;
    let mut sites = Vec::new();
    for u in 0..out.0 {
        for v in 0..out.1 {
            let keep = match crop {
                CropPolicy::All => true,
                CropPolicy::Interior(m) => is_interior(back_project(p_out, p_in, &g_inv, (u, v)), m, input),
            };
            if keep {
                sites.push((u, v));
            }
        }
    }
    Ok(sites)
}

/// Extracts `φ(x_i)` and `φ(g x_i)` for every image, in input order.
pub fn assemble_pairs<E: FeatureExtractor + ?Sized>(
    images: &[Image],
    g: &GeometricTransform,
    extractor: &E,
    opts: &PairOptions,
) -> Result<PairSet> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no images to build pairs from".into()));
    }
    let fields: Vec<(FeatureField, FeatureField)> = images
        .par_iter()
        .map(|x| {
            let gx = warp(x, g, opts.interp, opts.pad)?;
            Ok((extractor.extract(x)?, extractor.extract(&gx)?))
        })
        .collect::<Result<_>>()?;
    let (inputs, targets): (Vec<_>, Vec<_>) = fields.into_iter().unzip();
    let (iw, ih, _) = inputs[0].dims();
    let (ow, oh, _) = targets[0].dims();
    if inputs.iter().any(|f| f.dims() != inputs[0].dims()) {
        return Err(Error::DimensionMismatch("images yield fields of different sizes".into()));
    }
    let sites = valid_sites(
        (ow, oh),
        &targets[0].geometry,
        (iw, ih),
        &inputs[0].geometry,
        g,
        opts.crop,
    )?;
    if sites.is_empty() {
        return Err(Error::NoValidSites(format!(
            "no output site of the {ow}x{oh} grid has an in-bounds neighbourhood"
        )));
    }
    Ok(PairSet {
        g: *g,
        inputs,
        targets,
        valid_sites: sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilearn::neighborhood::nearest_sites;
    use crate::hog::{HogConfig, HogExtractor};
    use crate::imaging::synth::synth_generic_set;
    use crate::imaging::Split;

    #[test]
    fn identity_pairs_match() {
        let imgs = synth_generic_set(3, Split::Train, 4, 64);
        let ex = HogExtractor::new(HogConfig::default());
        let p = assemble_pairs(&imgs, &GeometricTransform::identity(), &ex, &PairOptions::default()).unwrap();
        assert_eq!(p.len(), 4);
        for (a, b) in p.inputs.iter().zip(&p.targets) {
            assert_eq!(a, b);
        }
        assert_eq!(p.valid_sites.len(), 6 * 6);
    }

    #[test]
    fn rot45_interior_is_in_bounds() {
        let geo = Geometry::new(8.0, 3.5);
        let g = GeometricTransform::rotation_centered(45.0, 120, 120);
        let g_inv = g.inverse().unwrap();
        let sites = valid_sites((15, 15), &geo, (15, 15), &geo, &g, CropPolicy::Interior(3)).unwrap();
        assert!(!sites.is_empty());
        for &s in &sites {
            let p = back_project(&geo, &geo, &g_inv, s);
            for m in [1, 3] {
                // Clipping is a no-op exactly when the free nearest set is in bounds.
                let clipped = nearest_sites(p, m, (15, 15));
                assert_eq!(clipped.len(), m * m);
                for &(u, v) in &clipped {
                    let (du, dv) = (u as f64 - p.0, v as f64 - p.1);
                    assert!(du.abs() <= 2.0 && dv.abs() <= 2.0);
                }
            }
        }
    }

    #[test]
    fn impossible_transform_is_rejected() {
        let imgs = synth_generic_set(3, Split::Train, 1, 32);
        let ex = HogExtractor::new(HogConfig::default());
        let g = GeometricTransform::translation(1000.0, 0.0);
        let err = assemble_pairs(&imgs, &g, &ex, &PairOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoValidSites(_)));
    }
}
