use serde::{Deserialize, Serialize};

use crate::field::FeatureField;
use crate::{Error, Result};

const CHI2_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    #[default]
    Hellinger,
    Chi2,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "hellinger" | "hell" => Ok(Metric::Hellinger),
            "chi2" => Ok(Metric::Chi2),
            _ => Err(Error::InvalidInput(format!("unknown metric '{s}'"))),
        }
    }
}

impl Metric {
    /// Distance between two cells.
    ///
    /// l2: `(Σ(x−y)²)^½`; Hellinger: `(Σ(√x−√y)²)^½`; χ²: `Σ(x−y)²/(x+y+ε)`.
    pub fn cell(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            Metric::Hellinger => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
                .sum::<f64>()
                .sqrt(),
            Metric::Chi2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2) / (x + y + CHI2_EPS))
                .sum(),
        }
    }

    fn needs_nonnegative(self) -> bool {
        !matches!(self, Metric::L2)
    }
}

fn check(f1: &FeatureField, f2: &FeatureField, metric: Metric) -> Result<()> {
    if !f1.same_dims(f2) {
        return Err(Error::DimensionMismatch(format!(
            "fields {:?} vs {:?}",
            f1.dims(),
            f2.dims()
        )));
    }
    if metric.needs_nonnegative() {
        for f in [f1, f2] {
            if let Some(i) = f.data().iter().position(|&v| v < 0.0) {
                return Err(Error::NegativeInput {
                    index: i,
                    value: f.data()[i],
                });
            }
        }
    }
    Ok(())
}

/// Per-cell distances in site order.
pub fn cell_distances(f1: &FeatureField, f2: &FeatureField, metric: Metric) -> Result<Vec<f64>> {
    check(f1, f2, metric)?;
    let d = f1.depth();
    Ok(f1
        .data()
        .chunks_exact(d)
        .zip(f2.data().chunks_exact(d))
        .map(|(a, b)| metric.cell(a, b))
        .collect())
}

/// Mean per-cell distance.
pub fn field_distance(f1: &FeatureField, f2: &FeatureField, metric: Metric) -> Result<f64> {
    let c = cell_distances(f1, f2, metric)?;
    Ok(c.iter().sum::<f64>() / c.len().max(1) as f64)
}

/// Mean per-cell distance over the listed `(u, v)` sites.
pub fn field_distance_over(
    f1: &FeatureField,
    f2: &FeatureField,
    metric: Metric,
    sites: &[(usize, usize)],
) -> Result<f64> {
    check(f1, f2, metric)?;
    if sites.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = sites
        .iter()
        .map(|&(u, v)| metric.cell(f1.cell(u, v), f2.cell(u, v)))
        .sum();
    Ok(total / sites.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(data: Vec<f64>, w: usize, h: usize, d: usize) -> FeatureField {
        FeatureField::from_data(w, h, d, data, Geometry::PIXELS).unwrap()
    }

    #[test]
    fn identical_fields_have_zero_distance() {
        let f = field(vec![0.1, 0.2, 0.3, 0.4], 2, 1, 2);
        for m in [Metric::L2, Metric::Hellinger, Metric::Chi2] {
            assert_eq!(field_distance(&f, &f, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn hellinger_of_orthogonal_unit_cells() {
        let a = field(vec![1.0, 0.0], 1, 1, 2);
        let b = field(vec![0.0, 1.0], 1, 1, 2);
        let d = field_distance(&a, &b, Metric::Hellinger).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let a = field(vec![1.0, -0.5], 1, 1, 2);
        let b = field(vec![0.0, 1.0], 1, 1, 2);
        assert!(matches!(field_distance(&a, &b, Metric::Hellinger), Err(Error::NegativeInput { .. })));
        assert!(matches!(field_distance(&a, &b, Metric::Chi2), Err(Error::NegativeInput { .. })));
        assert!(field_distance(&a, &b, Metric::L2).is_ok());
        let c = field(vec![0.0; 4], 2, 1, 2);
        assert!(matches!(field_distance(&b, &c, Metric::L2), Err(Error::DimensionMismatch(_))));
    }

    /// Elementwise recomputation over random fields, written without the
    /// per-cell helper.
    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h, d) = (4, 3, 5);
        let a: Vec<f64> = (0..w * h * d).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..w * h * d).map(|_| rng.gen::<f64>()).collect();
        let fa = field(a.clone(), w, h, d);
        let fb = field(b.clone(), w, h, d);
        let mut l2 = 0.0;
        let mut he = 0.0;
        let mut chi = 0.0;
        for c in 0..w * h {
            let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
            for t in 0..d {
                let (x, y) = (a[c * d + t], b[c * d + t]);
                s1 += (x - y) * (x - y);
                s2 += (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt());
                s3 += (x - y) * (x - y) / (x + y + 1e-10);
            }
            l2 += s1.sqrt();
            he += s2.sqrt();
            chi += s3;
        }
        let n = (w * h) as f64;
        assert!((field_distance(&fa, &fb, Metric::L2).unwrap() - l2 / n).abs() < 1e-12);
        assert!((field_distance(&fa, &fb, Metric::Hellinger).unwrap() - he / n).abs() < 1e-12);
        assert!((field_distance(&fa, &fb, Metric::Chi2).unwrap() - chi / n).abs() < 1e-12);
    }
}
