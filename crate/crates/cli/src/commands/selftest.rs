//! `selftest`: exact-case invariants checked against independent
//! recomputations.

use anyhow::bail;
use equimap::equilearn::{back_project, neighborhood, solve_row, EquivariantMap, MapMeta, MapRow, Method};
use equimap::featnet::{grad_check, random_input, GradCheck};
use equimap::hog::{analytic_permutation, HogConfig, HogExtractor};
use equimap::imaging::{warp, GeometricTransform, Image, Interpolation, Padding, TransformSpec};
use equimap::netsurgery::{build_permutation_table, StitchInit, StitchingLayer, TableMode, TransformationLayer};
use equimap::{FeatureField, Geometry};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use equimap::equilearn::FeatureExtractor;

use super::{Experiment, RunContext};
use crate::common::require_positive;
use crate::config::params;

params! {
    /// Self-test parameters.
    SelftestArgs => SelftestParams {
        /// Random cases per oracle check (default 100).
        cases: usize = 100,
    }
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Experiment for SelftestParams {
    const NAME: &'static str = "selftest";

    fn validate(&self) -> anyhow::Result<()> {
        require_positive("cases", self.cases)
    }

    fn outputs(&self) -> Vec<String> {
        Vec::new()
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        type CheckFn = fn(&mut ChaCha8Rng, usize) -> anyhow::Result<(bool, String)>;
        let suite: [(&'static str, CheckFn); 6] = [
            ("hog_permutations", hog_permutations),
            ("neighbourhoods", neighbourhoods),
            ("forward_selection_exact_cases", forward_selection),
            ("adjoint_identity", adjoint_identity),
            ("map_roundtrip", map_roundtrip),
            ("gradients", gradients),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut checks = Vec::new();
        for (name, f) in suite {
            let (pass, detail) = f(&mut rng, self.cases).unwrap_or_else(|e| (false, format!("error: {e:#}")));
            eprintln!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
            checks.push(Check { name, pass, detail });
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        equimap::analysis::write_json(ctx.path("summary.json"), &checks)?;
        if !failed.is_empty() {
            bail!("self-test failed: {}", failed.join(", "));
        }
        Ok(serde_json::to_value(&checks)?)
    }
}

fn hog_permutations(rng: &mut ChaCha8Rng, cases: usize) -> anyhow::Result<(bool, String)> {
    let e = HogExtractor::new(HogConfig::default());
    let size = 32;
    let mut worst = 0.0f64;
    for _ in 0..cases.min(20) {
        let x = Image::from_fn(size, size, |_, _| rng.gen::<f64>());
        for spec in [TransformSpec::HFlip, TransformSpec::VFlip, TransformSpec::Rotation(180.0)] {
            let g = spec.resolve(size, size)?;
            let map = analytic_permutation((4, 4), spec, &e.config)?;
            let lhs = e.extract(&warp(&x, &g, Interpolation::Bilinear, Padding::Zero)?)?;
            worst = worst.max(lhs.max_abs_diff(&map.apply(&e.extract(&x)?)?));
        }
    }
    Ok((worst <= 1e-10, format!("max deviation {worst:.2e}")))
}

/// All in-bounds sites sorted by `(d², v, u)`, first `m²` kept.
fn brute_neighbours(p: (f64, f64), m: usize, dims: (usize, usize)) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, usize, usize)> = (0..dims.0)
        .flat_map(|u| (0..dims.1).map(move |v| ((u as f64 - p.0).powi(2) + (v as f64 - p.1).powi(2), v, u)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter().take(m * m).map(|(_, v, u)| (u, v)).collect()
}

fn neighbourhoods(rng: &mut ChaCha8Rng, cases: usize) -> anyhow::Result<(bool, String)> {
    let mut fail = 0;
    for _ in 0..cases {
        let dims = (rng.gen_range(2..10), rng.gen_range(2..10));
        let m = rng.gen_range(1..=4);
        let p_in = Geometry::new(rng.gen_range(1.0..8.0), rng.gen_range(-2.0..4.0));
        let p_out = Geometry::new(rng.gen_range(1.0..8.0), rng.gen_range(-2.0..4.0));
        let g = GeometricTransform::rotation_about(rng.gen_range(0.0..360.0), 20.0, 20.0);
        let site = (rng.gen_range(0..10), rng.gen_range(0..10));
        let nb = neighborhood(&p_out, &p_in, &g, m, site, dims)?;
        let q = back_project(&p_out, &p_in, &g.inverse()?, site);
        if nb.members != brute_neighbours(q, m, dims) {
            fail += 1;
        }
    }
    Ok((fail == 0, format!("{fail}/{cases} mismatches")))
}

/// Centred least-squares residual of `y` on the columns in `subset`.
fn subset_rss(x: &DMatrix<f64>, y: &DVector<f64>, subset: &[usize]) -> f64 {
    let yc = y.add_scalar(-y.mean());
    if subset.is_empty() {
        return yc.norm_squared();
    }
    let xs = DMatrix::from_fn(x.nrows(), subset.len(), |i, j| {
        let c = x.column(subset[j]);
        c[i] - c.mean()
    });
    match (xs.transpose() * &xs).cholesky() {
        Some(ch) => (yc.clone() - &xs * ch.solve(&(xs.transpose() * &yc))).norm_squared(),
        None => f64::INFINITY,
    }
}

/// Forward selection equals the best subset for `k = 1` and `k = p`.
fn forward_selection(rng: &mut ChaCha8Rng, cases: usize) -> anyhow::Result<(bool, String)> {
    let (n, p) = (25, 5);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let tss = y.add_scalar(-y.mean()).norm_squared();
        for k in [1, p] {
            let sol = solve_row(&x, y.as_slice(), Method::Fs { k })?;
            let best = (1..1u32 << p)
                .filter(|s| s.count_ones() as usize <= k)
                .map(|s| subset_rss(&x, &y, &(0..p).filter(|j| s >> j & 1 == 1).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max((sol.rss - best).abs() / tss);
        }
    }
    Ok((worst <= 1e-9, format!("max relative residual gap {worst:.2e}")))
}

fn random_map(rng: &mut ChaCha8Rng) -> anyhow::Result<EquivariantMap> {
    let (w, h, d) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4));
    let (ow, oh) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let rows = (0..ow * oh * d)
        .map(|_| {
            let cols: Vec<u32> = (0..(w * h * d) as u32).filter(|_| rng.gen_bool(0.3)).collect();
            let coeffs = cols.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            MapRow { cols, coeffs, bias: rng.gen_range(-1.0..1.0) }
        })
        .collect();
    Ok(EquivariantMap::new((w, h, d), (ow, oh, d), Geometry::new(1.0, 0.0), rows, MapMeta::default())?)
}

/// `⟨w, Mf + b⟩ = ⟨Mᵀw, f⟩ + ⟨w, b⟩`.
fn adjoint_identity(rng: &mut ChaCha8Rng, cases: usize) -> anyhow::Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let map = random_map(rng)?;
        let (w, h, d) = map.in_dims;
        let f = FeatureField::from_data(w, h, d, (0..w * h * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), map.geometry)?;
        let wv: Vec<f64> = (0..map.out_dims.0 * map.out_dims.1 * map.out_dims.2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = map.adjoint(&wv)?.iter().zip(f.data()).map(|(a, b)| a * b).sum::<f64>() + map.bias_dot(&wv);
        let rhs: f64 = wv.iter().zip(map.apply(&f)?.data()).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok((worst <= 1e-9, format!("max deviation {worst:.2e}")))
}

fn map_roundtrip(rng: &mut ChaCha8Rng, cases: usize) -> anyhow::Result<(bool, String)> {
    let mut fail = 0;
    for _ in 0..cases {
        let map = random_map(rng)?;
        let mut bytes = Vec::new();
        map.write_to(&mut bytes)?;
        if EquivariantMap::read_from(&mut bytes.as_slice())? != map {
            fail += 1;
        }
    }
    Ok((fail == 0, format!("{fail}/{cases} maps changed")))
}

fn gradients(rng: &mut ChaCha8Rng, _cases: usize) -> anyhow::Result<(bool, String)> {
    let seed = rng.gen();
    let mut results: Vec<(&str, GradCheck)> = Vec::new();
    let g = GeometricTransform::rotation_centered(30.0, 16, 16);
    let table = build_permutation_table((8, 8), &Geometry::new(2.0, 0.5), &g, TableMode::Bilinear)?;
    let mut layer = TransformationLayer::identity_init(table, 3, 3)?;
    layer.params.iter_mut().for_each(|p| *p = rng.gen_range(-0.5..0.5));
    results.push(("translayer", grad_check(&layer, &random_input((8, 8, 3), 0.0, seed), 100, seed)?));
    let stitch = StitchingLayer::new((8, 8, 4), (4, 4, 3), 3, StitchInit::Random, seed)?;
    results.push(("stitch", grad_check(&stitch, &random_input((8, 8, 4), 0.0, seed), 100, seed)?));
    let worst = results.iter().map(|(_, r)| r.max_rel_err()).fold(0.0, f64::max);
    let detail: Vec<String> = results.iter().map(|(n, r)| format!("{n} {:.1e}", r.max_rel_err())).collect();
    Ok((worst < 1e-4, format!("max relative error {worst:.2e} ({})", detail.join(", "))))
}
