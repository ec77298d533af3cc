//! Central finite-difference checks of [`Differentiable`] layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Differentiable;
use crate::field::{FeatureField, Geometry};
use crate::Result;

/// Finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err_input: f64,
    pub max_rel_err_params: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_input.max(self.max_rel_err_params)
    }
}

/// `|a − n| / max(|a| + |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Random field with entries uniform in `±[margin, 1]`, keeping every value
/// at least `margin` away from zero.
pub fn random_input(dims: (usize, usize, usize), margin: f64, seed: u64) -> FeatureField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.0 * dims.1 * dims.2;
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(margin..=1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    FeatureField::from_data(dims.0, dims.1, dims.2, data, Geometry::PIXELS).expect("sized data")
}

/// Compares the analytic gradient of `L(y) = ⟨c, layer(x)⟩` for a random `c`
/// with central differences, over at most `samples` input coordinates and
/// `samples` parameters.
pub fn grad_check<L: Differentiable + Clone>(
    layer: &L,
    x: &FeatureField,
    samples: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = layer.forward(x)?;
    let c: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gy = FeatureField::from_data(y.width(), y.height(), y.depth(), c.clone(), y.geometry)?;
    let mut gp = vec![0.0; layer.num_params()];
    let gx = layer.backward(x, &y, &gy, &mut gp)?;
    let objective = |l: &L, f: &FeatureField| -> Result<f64> { Ok(l.forward(f)?.dot(&c)) };
    let h = GRAD_CHECK_STEP;

    let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<usize> {
        if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.gen_range(0..n)).collect()
        }
    };
    let mut max_in: f64 = 0.0;
    let coords = pick(&mut rng, x.len());
    for &i in &coords {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        let num = (objective(layer, &p)? - objective(layer, &m)?) / (2.0 * h);
        max_in = max_in.max(relative_error(gx.data()[i], num));
    }
    let mut max_par: f64 = 0.0;
    let params = pick(&mut rng, layer.num_params());
    for &j in &params {
        let mut p = layer.clone();
        p.params_mut()[j] += h;
        let mut m = layer.clone();
        m.params_mut()[j] -= h;
        let num = (objective(&p, x)? - objective(&m, x)?) / (2.0 * h);
        max_par = max_par.max(relative_error(gp[j], num));
    }
    Ok(GradCheck {
        max_rel_err_input: max_in,
        max_rel_err_params: max_par,
        checked: coords.len() + params.len(),
    })
}
