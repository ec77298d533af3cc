//! Per-row regressions `min_a R(a) + (1/n) Σ_i (y_i − aᵀx_i − b)²`: least
//! squares, ridge and greedy forward selection, each with an unpenalised bias.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::map::{EquivariantMap, MapMeta, MapMethod, MapRow};
use super::neighborhood::{back_project, nearest_sites};
use super::pairs::{assemble_pairs, PairOptions, PairSet};
use super::FeatureExtractor;
use crate::hog::Metric;
use crate::imaging::{GeometricTransform, Image};
use crate::linalg::{psd_pinv, SharedSolve};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Ls,
    /// Minimises `λ‖a‖² + (1/n) Σ_i (y_i − aᵀx_i − b)²`, i.e. solves
    /// `(XᵀX + nλI) a = Xᵀy` on centred data.
    Rr { lambda: f64 },
    Fs { k: usize },
}

impl Method {
    pub fn map_method(&self) -> MapMethod {
        match self {
            Method::Ls => MapMethod::Ls,
            Method::Rr { .. } => MapMethod::Rr,
            Method::Fs { .. } => MapMethod::Fs,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Method::Rr { lambda } => Some(*lambda),
            _ => None,
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            Method::Fs { k } => Some(*k),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub method: Method,
    /// Neighbourhood side; `None` leaves rows unrestricted.
    pub m: Option<usize>,
    pub metric: Metric,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            method: Method::Fs { k: 5 },
            m: Some(3),
            metric: Metric::Hellinger,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Method::Rr { lambda } = self.method {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::InvalidInput(format!("ridge lambda must be >= 0, got {lambda}")));
            }
        }
        if self.m == Some(0) {
            return Err(Error::InvalidInput("neighbourhood size m must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sparse row over the local columns of one design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSolution {
    /// Increasing local column indices.
    pub cols: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub bias: f64,
    /// Training residual sum of squares.
    pub rss: f64,
}

/// Solver bound to one design matrix, reusable across many target vectors.
pub struct RowSolver {
    xc: DMatrix<f64>,
    means: DVector<f64>,
    method: Method,
    shared: Option<SharedSolve>,
    /// `XXᵀ` of the centred design when solving in the dual.
    gram: Option<DMatrix<f64>>,
    col_norms: Vec<f64>,
}

/// Columns whose centred squared norm is below this are never selected.
const DEAD_COLUMN: f64 = 1e-24;
/// Forward selection stops once `rss ≤ EXACT_FIT · tss`.
const EXACT_FIT: f64 = 1e-24;

impl RowSolver {
    pub fn new(x: &DMatrix<f64>, method: Method) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("empty design matrix".into()));
        }
        let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n as f64));
        let mut xc = x.clone();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[j]);
        }
        let col_norms = xc.column_iter().map(|c| c.norm_squared()).collect();
        let (shared, gram) = match method {
            Method::Fs { .. } => (None, None),
            Method::Ls | Method::Rr { .. } => {
                let s = SharedSolve::new(&xc, method.lambda().map(|l| l * n as f64));
                let gram = matches!(s, SharedSolve::Dual(_)).then(|| &xc * xc.transpose());
                (Some(s), gram)
            }
        };
        Ok(Self {
            xc,
            means,
            method,
            shared,
            gram,
            col_norms,
        })
    }

    pub fn num_cols(&self) -> usize {
        self.xc.ncols()
    }

    pub fn solve(&self, y: &[f64]) -> Result<RowSolution> {
        let ym = DMatrix::from_column_slice(y.len(), 1, y);
        Ok(self.solve_many(&ym)?.pop().expect("one column"))
    }

    /// One solution per column of the `n × r` target matrix.
    pub fn solve_many(&self, y: &DMatrix<f64>) -> Result<Vec<RowSolution>> {
        if y.nrows() != self.xc.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "targets have {} rows, design has {}",
                y.nrows(),
                self.xc.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression targets".into()));
        }
        let n = y.nrows() as f64;
        let ymeans: Vec<f64> = y.column_iter().map(|c| c.sum() / n).collect();
        let mut yc = y.clone();
        for (j, mut col) in yc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-ymeans[j]);
        }
        match self.method {
            Method::Fs { k } => Ok(yc
                .column_iter()
                .zip(&ymeans)
                .map(|(c, &m)| self.forward_select(&c.into_owned(), m, k))
                .collect()),
            Method::Ls | Method::Rr { .. } => Ok(self.dense(&yc, &ymeans)),
        }
    }

    fn dense(&self, yc: &DMatrix<f64>, ymeans: &[f64]) -> Vec<RowSolution> {
        let shared = self.shared.as_ref().expect("dense solver");
        let beta = shared.solve(&self.xc, yc);
        let fitted = match (shared, &self.gram) {
            (SharedSolve::Dual(k), Some(g)) => g * (k * yc),
            _ => &self.xc * &beta,
        };
        let p = self.xc.ncols();
        (0..yc.ncols())
            .map(|j| {
                let b = beta.column(j);
                let rss = (yc.column(j) - fitted.column(j)).norm_squared();
                RowSolution {
                    cols: (0..p).collect(),
                    coeffs: b.iter().copied().collect(),
                    bias: ymeans[j] - self.means.dot(&b),
                    rss,
                }
            })
            .collect()
    }

    fn forward_select(&self, yc: &DVector<f64>, ymean: f64, k: usize) -> RowSolution {
        let p = self.xc.ncols();
        let tss = yc.norm_squared();
        let mut support: Vec<usize> = Vec::new();
        let mut beta = DVector::zeros(0);
        let mut r = yc.clone();
        let mut rss = tss;
        let k = k.min(p);
        while support.len() < k && rss > EXACT_FIT * tss {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..p {
                if self.col_norms[j] <= DEAD_COLUMN || support.contains(&j) {
                    continue;
                }
                let c = self.xc.column(j).dot(&r);
                let score = c * c / self.col_norms[j];
                if best.map_or(true, |(_, s)| score > s) {
                    best = Some((j, score));
                }
            }
            let Some((j, score)) = best else { break };
            if score <= EXACT_FIT * tss {
                break;
            }
            support.push(j);
            let xs = self.xc.select_columns(&support);
            beta = least_squares(&xs, yc);
            r = yc - &xs * &beta;
            rss = r.norm_squared();
        }
        let mut order: Vec<usize> = (0..support.len()).collect();
        order.sort_by_key(|&i| support[i]);
        let cols: Vec<usize> = order.iter().map(|&i| support[i]).collect();
        let coeffs: Vec<f64> = order.iter().map(|&i| beta[i]).collect();
        let bias = ymean - cols.iter().zip(&coeffs).map(|(&c, &b)| self.means[c] * b).sum::<f64>();
        RowSolution { cols, coeffs, bias, rss }
    }
}

/// Minimum-norm least squares for a thin design.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let g = x.tr_mul(x);
    let b = x.tr_mul(y);
    match Cholesky::new(g.clone()) {
        Some(c) => c.solve(&b),
        None => psd_pinv(&g) * b,
    }
}

/// Solves a single regression row.
pub fn solve_row(x: &DMatrix<f64>, y: &[f64], method: Method) -> Result<RowSolution> {
    RowSolver::new(x, method)?.solve(y)
}

/// Targets at output `site` as an `n × D` matrix.
fn site_targets(pairs: &PairSet, site: (usize, usize)) -> DMatrix<f64> {
    let d = pairs.out_dims().2;
    DMatrix::from_fn(pairs.len(), d, |i, t| pairs.targets[i].get(site.0, site.1, t))
}

fn to_rows(sol: Vec<RowSolution>, cols: &[u32]) -> Vec<MapRow> {
    sol.into_iter()
        .map(|s| MapRow {
            cols: s.cols.iter().map(|&c| cols[c]).collect(),
            coeffs: s.coeffs,
            bias: s.bias,
        })
        .collect()
}

/// Sites per dense batch in the unrestricted case.
const DENSE_BATCH: usize = 8;

/// Learns `M_g` from prepared pairs. Output sites outside `pairs.valid_sites`
/// get empty rows with zero bias.
pub fn learn_map_from_pairs(pairs: &PairSet, cfg: &RegressionConfig) -> Result<EquivariantMap> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty pair set".into()));
    }
    let in_dims = pairs.in_dims();
    let out_dims = pairs.out_dims();
    let (iw, ih, di) = in_dims;
    let (_, oh, dout) = out_dims;
    let n = pairs.len();
    let start = Instant::now();
    let solved: Vec<((usize, usize), Vec<MapRow>)> = match cfg.m {
        None => {
            let x = DMatrix::from_fn(n, iw * ih * di, |i, j| pairs.inputs[i].data()[j]);
            let solver = RowSolver::new(&x, cfg.method)?;
            let cols: Vec<u32> = (0..x.ncols() as u32).collect();
            let batches: Vec<&[(usize, usize)]> = pairs.valid_sites.chunks(DENSE_BATCH).collect();
            let out: Vec<Vec<((usize, usize), Vec<MapRow>)>> = batches
                .par_iter()
                .map(|batch| {
                    let y = DMatrix::from_fn(n, batch.len() * dout, |i, j| {
                        let (u, v) = batch[j / dout];
                        pairs.targets[i].get(u, v, j % dout)
                    });
                    let mut rows = to_rows(solver.solve_many(&y)?, &cols).into_iter();
                    Ok(batch
                        .iter()
                        .map(|&s| (s, rows.by_ref().take(dout).collect()))
                        .collect())
                })
                .collect::<Result<_>>()?;
            out.into_iter().flatten().collect()
        }
        Some(m) => {
            let g_inv = pairs.g.inverse()?;
            let p_out = pairs.out_geometry();
            let p_in = pairs.in_geometry();
            pairs
                .valid_sites
                .par_iter()
                .map(|&site| {
                    let members = nearest_sites(back_project(&p_out, &p_in, &g_inv, site), m, (iw, ih));
                    let cols: Vec<u32> = members
                        .iter()
                        .flat_map(|&(u, v)| (0..di).map(move |t| ((u * ih + v) * di + t) as u32))
                        .collect();
                    let x = DMatrix::from_fn(n, cols.len(), |i, j| pairs.inputs[i].data()[cols[j] as usize]);
                    let solver = RowSolver::new(&x, cfg.method)?;
                    let sol = solver.solve_many(&site_targets(pairs, site))?;
                    Ok((site, to_rows(sol, &cols)))
                })
                .collect::<Result<_>>()?
        }
    };
    let learn_seconds = start.elapsed().as_secs_f64();
    let mut rows = vec![MapRow::default(); volume(out_dims)];
    for ((u, v), site_rows) in solved {
        let base = (u * oh + v) * dout;
        for (t, r) in site_rows.into_iter().enumerate() {
            rows[base + t] = r;
        }
    }
    let meta = MapMeta {
        transform: Some(pairs.g),
        method: cfg.method.map_method(),
        k: cfg.method.k(),
        m: cfg.m,
        lambda: cfg.method.lambda(),
        learn_seconds,
    };
    EquivariantMap::new(in_dims, out_dims, pairs.out_geometry(), rows, meta)
}

fn volume(d: (usize, usize, usize)) -> usize {
    d.0 * d.1 * d.2
}

/// Extracts training pairs and learns `M_g`.
pub fn learn_map<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    g: &GeometricTransform,
    images: &[Image],
    cfg: &RegressionConfig,
    opts: &PairOptions,
) -> Result<EquivariantMap> {
    let pairs = assemble_pairs(images, g, extractor, opts)?;
    learn_map_from_pairs(&pairs, cfg)
}
