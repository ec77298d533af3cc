//! `learn-map`, `eval-map` and `compensate`.

use std::collections::HashMap;
use std::path::PathBuf;

use equimap::analysis::{compensated_classification, write_csv, LinearClassifier, LinearConfig};
use equimap::equilearn::{evaluate_map, learn_map, EquivariantMap, FeatureExtractor, MapEvaluation, PairOptions};
use equimap::hog::{HogConfig, HogExtractor, Metric};
use equimap::imaging::synth::{synth_classification_with, synth_generic_set, ClassSetSpec};
use equimap::imaging::{GeometricTransform, Image, Split, TransformSpec};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::{Experiment, RunContext};
use crate::common::{
    fmt6, load_images, pair_options, parse_interp, parse_pad, regression, require_path, require_positive,
    resolve_transform, ExtractorSpec,
};
use crate::config::{config_err, params, parse};

const METRICS_HEADER: [&str; 9] = [
    "split",
    "metric",
    "count",
    "error_mean",
    "error_median",
    "error_std",
    "baseline_mean",
    "reference_mean",
    "relative_error",
];

fn metrics_row(split: &str, ev: &MapEvaluation) -> Vec<String> {
    vec![
        split.to_string(),
        format!("{:?}", ev.metric).to_lowercase(),
        ev.error.count.to_string(),
        fmt6(ev.error.mean),
        fmt6(ev.error.median),
        fmt6(ev.error.std),
        fmt6(ev.baseline.mean),
        fmt6(ev.reference.mean),
        fmt6(ev.error.mean / ev.reference.mean.max(f64::MIN_POSITIVE)),
    ]
}

/// Images from `dir`, or a synthesised generic set.
fn images_or_synth(dir: Option<&PathBuf>, seed: u64, split: Split, n: usize, size: usize) -> anyhow::Result<Vec<Image>> {
    match dir {
        Some(d) => load_images(d),
        None => Ok(synth_generic_set(seed, split, n, size)),
    }
}

params! {
    /// Equivariant map learning parameters.
    LearnMapArgs => LearnMapParams {
        /// Feature extractor: hog or net (default hog).
        feat: String = "hog".into(),
        /// HOG cell size in pixels (default 8).
        cell: usize = 8,
        /// HOG contrast-insensitive orientations (default 9).
        orientations: usize = 9,
        /// Network split index for feat = net (default 4).
        probe: usize = 4,
        /// Transformation: id, hflip, vflip, rot:<deg>, rot90, rot180, rot270, scale:<s>, affine:a,b,tx,c,d,ty (default rot:45).
        g: String = "rot:45".into(),
        /// Regression method: fs, rr or ls (default fs).
        method: String = "fs".into(),
        /// Forward-selection budget per row (default 5).
        k: usize = 5,
        /// Ridge penalty (default 0.1).
        lambda: f64 = 0.1,
        /// Neighbourhood side; 0 leaves rows unrestricted (default 3).
        m: usize = 3,
        /// Error metric: l2, hellinger or chi2 (default hellinger).
        metric: String = "hellinger".into(),
        /// Supervised sites: interior or all (default interior).
        crop: String = "interior".into(),
        /// Warp padding: zero or replicate (default replicate).
        pad: String = "replicate".into(),
        /// Warp interpolation: nearest or bilinear (default bilinear).
        interp: String = "bilinear".into(),
        /// Synthesised training images when train is absent (default 200).
        n_train: usize = 200,
        /// Synthesised test images when test is absent (default 100).
        n_test: usize = 100,
        /// Side of synthesised images (default 64).
        size: usize = 64,
    }
    optional {
        /// Training image directory.
        train: PathBuf,
        /// Test image directory.
        test: PathBuf,
        /// Network directory for feat = net.
        net: PathBuf,
    }
}

impl LearnMapParams {
    fn extractor(&self) -> ExtractorSpec<'_> {
        ExtractorSpec {
            feat: &self.feat,
            cell: self.cell,
            orientations: self.orientations,
            net: self.net.as_deref(),
            probe: self.probe,
        }
    }

    fn pair_options(&self) -> anyhow::Result<PairOptions> {
        pair_options(&self.interp, &self.pad, &self.crop, self.m.max(1))
    }
}

impl Experiment for LearnMapParams {
    const NAME: &'static str = "learn-map";

    fn validate(&self) -> anyhow::Result<()> {
        self.extractor().validate()?;
        parse::<TransformSpec>("g", &self.g)?;
        regression(&self.method, self.k, self.lambda, self.m, &self.metric)?;
        self.pair_options()?;
        require_positive("n_train", self.n_train)?;
        require_positive("n_test", self.n_test)?;
        require_positive("size", self.size)
    }

    fn outputs(&self) -> Vec<String> {
        vec!["map.eqm".into(), "metrics.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let e = self.extractor().build()?;
        let cfg = regression(&self.method, self.k, self.lambda, self.m, &self.metric)?;
        let opts = self.pair_options()?;
        let train = images_or_synth(self.train.as_ref(), ctx.seed, Split::Train, self.n_train, self.size)?;
        let test = images_or_synth(self.test.as_ref(), ctx.seed, Split::Test, self.n_test, self.size)?;
        let g = resolve_transform(&parse::<TransformSpec>("g", &self.g)?, &train[0])?;
        log::info!("learning {} map for {} on {} images", self.method, self.g, train.len());
        let map = learn_map(&*e, &g, &train, &cfg, &opts)?;
        map.save(ctx.path("map.eqm"))?;
        let on_train = evaluate_map(&map, &*e, &g, &train, cfg.metric, &opts)?;
        let on_test = evaluate_map(&map, &*e, &g, &test, cfg.metric, &opts)?;
        write_csv(
            ctx.path("metrics.csv"),
            &METRICS_HEADER,
            &[metrics_row("train", &on_train), metrics_row("test", &on_test)],
        )?;
        Ok(json!({
            "extractor": e.name(),
            "transform": self.g,
            "regression": cfg,
            "meta": map.meta,
            "nnz": map.nnz(),
            "train": on_train,
            "test": on_test,
        }))
    }
}

params! {
    /// Map evaluation parameters.
    EvalMapArgs => EvalMapParams {
        /// Feature extractor: hog or net (default hog).
        feat: String = "hog".into(),
        /// HOG cell size in pixels (default 8).
        cell: usize = 8,
        /// HOG contrast-insensitive orientations (default 9).
        orientations: usize = 9,
        /// Network split index for feat = net (default 4).
        probe: usize = 4,
        /// Error metric: l2, hellinger or chi2 (default hellinger).
        metric: String = "hellinger".into(),
        /// Supervised sites: interior or all (default interior).
        crop: String = "interior".into(),
        /// Warp padding: zero or replicate (default replicate).
        pad: String = "replicate".into(),
        /// Warp interpolation: nearest or bilinear (default bilinear).
        interp: String = "bilinear".into(),
        /// Synthesised test images when data is absent (default 100).
        n: usize = 100,
        /// Side of synthesised images (default 64).
        size: usize = 64,
    }
    optional {
        /// Saved map file (required).
        map: PathBuf,
        /// Transformation; defaults to the one stored with the map.
        g: String,
        /// Test image directory.
        data: PathBuf,
        /// Network directory for feat = net.
        net: PathBuf,
    }
}

impl EvalMapParams {
    fn extractor(&self) -> ExtractorSpec<'_> {
        ExtractorSpec {
            feat: &self.feat,
            cell: self.cell,
            orientations: self.orientations,
            net: self.net.as_deref(),
            probe: self.probe,
        }
    }
}

impl Experiment for EvalMapParams {
    const NAME: &'static str = "eval-map";

    fn validate(&self) -> anyhow::Result<()> {
        require_path("map", &self.map)?;
        self.extractor().validate()?;
        if let Some(g) = &self.g {
            parse::<TransformSpec>("g", g)?;
        }
        parse::<Metric>("metric", &self.metric)?;
        pair_options(&self.interp, &self.pad, &self.crop, 1)?;
        require_positive("n", self.n)?;
        require_positive("size", self.size)
    }

    fn outputs(&self) -> Vec<String> {
        vec!["metrics.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let map = EquivariantMap::load(require_path("map", &self.map)?)?;
        let e = self.extractor().build()?;
        let images = images_or_synth(self.data.as_ref(), ctx.seed, Split::Test, self.n, self.size)?;
        let g = match (&self.g, map.meta.transform) {
            (Some(spec), _) => resolve_transform(&parse::<TransformSpec>("g", spec)?, &images[0])?,
            (None, Some(g)) => g,
            (None, None) => return Err(config_err("the map stores no transform; pass g")),
        };
        let m = map.meta.m.unwrap_or(1);
        let opts = pair_options(&self.interp, &self.pad, &self.crop, m)?;
        let ev = evaluate_map(&map, &*e, &g, &images, parse::<Metric>("metric", &self.metric)?, &opts)?;
        write_csv(ctx.path("metrics.csv"), &METRICS_HEADER, &[metrics_row("test", &ev)])?;
        Ok(json!({ "extractor": e.name(), "meta": map.meta, "evaluation": ev }))
    }
}

params! {
    /// Compensated classification parameters.
    CompensateArgs => CompensateParams {
        /// HOG cell size in pixels (default 4).
        cell: usize = 4,
        /// Number of classes (default 2).
        classes: usize = 2,
        /// Training images for the linear classifier (default 400).
        n_train: usize = 400,
        /// Test images (default 400).
        n_test: usize = 400,
        /// Image side in pixels (default 32).
        size: usize = 32,
        /// Largest rotation in degrees (default 90).
        max_angle: f64 = 90.0,
        /// Rotation step in degrees (default 15).
        step: f64 = 15.0,
        /// Generic images used to learn each map (default 300).
        n_generic: usize = 300,
        /// Forward-selection budget per row (default 5).
        k: usize = 5,
        /// Neighbourhood side; 0 leaves rows unrestricted (default 3).
        m: usize = 3,
        /// Linear classifier regularisation (default 0.001).
        lambda: f64 = 1e-3,
        /// Linear classifier epochs (default 30).
        epochs: usize = 30,
        /// Warp padding: zero or replicate (default zero).
        pad: String = "zero".into(),
        /// Warp interpolation: nearest or bilinear (default bilinear).
        interp: String = "bilinear".into(),
    }
}

impl CompensateParams {
    fn angles(&self) -> Vec<f64> {
        let steps = (self.max_angle / self.step + 1e-9).floor() as usize;
        (0..=steps).map(|i| i as f64 * self.step).collect()
    }
}

impl Experiment for CompensateParams {
    const NAME: &'static str = "compensate";

    fn validate(&self) -> anyhow::Result<()> {
        if !(self.step > 0.0 && self.max_angle >= 0.0 && self.max_angle.is_finite()) {
            return Err(config_err("need step > 0 and a finite max_angle >= 0"));
        }
        if self.classes < 2 {
            return Err(config_err("classes must be >= 2"));
        }
        HogConfig { cell_size: self.cell, ..HogConfig::default() }
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        regression("fs", self.k, 0.0, self.m, "hellinger")?;
        parse_interp(&self.interp)?;
        parse_pad(&self.pad)?;
        for (name, v) in [("n_train", self.n_train), ("n_test", self.n_test), ("n_generic", self.n_generic), ("size", self.size)] {
            require_positive(name, v)?;
        }
        Ok(())
    }

    fn outputs(&self) -> Vec<String> {
        vec!["curve.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let e = HogExtractor::new(HogConfig { cell_size: self.cell, ..HogConfig::default() });
        let spec = ClassSetSpec { size: self.size, ..ClassSetSpec::default() };
        let train = synth_classification_with(&spec, ctx.seed, Split::Train, self.n_train, self.classes)?;
        let test = synth_classification_with(&spec, ctx.seed, Split::Test, self.n_test, self.classes)?;
        let feats = train
            .items
            .par_iter()
            .map(|it| Ok(e.extract(&it.image)?.into_data()))
            .collect::<equimap::Result<Vec<_>>>()?;
        let lin = LinearConfig { lambda: self.lambda, epochs: self.epochs, seed: ctx.seed };
        let clf = LinearClassifier::train(&feats, &train.class_labels()?, self.classes, &lin)?;
        let interp = parse_interp(&self.interp)?;
        let pad = parse_pad(&self.pad)?;
        let opts = PairOptions { interp, pad, crop: equimap::equilearn::CropPolicy::All };
        let cfg = regression("fs", self.k, 0.0, self.m, "hellinger")?;
        let generic = synth_generic_set(ctx.seed, Split::Train, self.n_generic, self.size);
        let mut grid = Vec::new();
        let mut maps = HashMap::new();
        for deg in self.angles() {
            let label = format!("rot:{deg}");
            let g = GeometricTransform::rotation_centered(deg, self.size, self.size);
            log::info!("learning map for {label}");
            maps.insert(label.clone(), learn_map(&e, &g, &generic, &cfg, &opts)?);
            grid.push((label, g));
        }
        let pts = compensated_classification(&clf, &e, &grid, &maps, &test, interp, pad)?;
        let rows: Vec<Vec<String>> = pts
            .iter()
            .map(|p| vec![p.label.clone(), fmt6(p.original), fmt6(p.uncompensated), fmt6(p.compensated)])
            .collect();
        write_csv(ctx.path("curve.csv"), &["transform", "original", "uncompensated", "compensated"], &rows)?;
        Ok(json!({ "extractor": e.name(), "points": pts }))
    }
}
