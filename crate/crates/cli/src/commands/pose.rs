//! `bench-pose`.

use equimap::equilearn::{CropPolicy, PairOptions};
use equimap::imaging::synth::{synth_generic_set, synth_pose_with, PoseSetSpec};
use equimap::imaging::{Image, Split};
use equimap::structreg::{
    bench, build_pose_set, learn_pose_maps, median_pose, train_pose_model, BenchOptions, PoseFamily,
    PoseTrainConfig, ScoringMode,
};
use serde_json::Value;

use super::{Experiment, RunContext};
use crate::common::{parse_interp, parse_pad, regression, require_positive, ExtractorSpec};
use crate::config::{config_err, params, parse};

params! {
    /// Pose regression benchmark parameters.
    BenchPoseArgs => BenchPoseParams {
        /// Feature extractor; only hog is meaningful on pose images (default hog).
        feat: String = "hog".into(),
        /// HOG cell size in pixels (default 8).
        cell: usize = 8,
        /// HOG contrast-insensitive orientations (default 9).
        orientations: usize = 9,
        /// Pose family: rotation or affine (default rotation).
        family: String = "rotation".into(),
        /// Image side in pixels (default 120).
        size: usize = 120,
        /// Pixel noise of the pose images (default 0.03).
        noise: f64 = 0.03,
        /// Training images (default 300).
        n_train: usize = 300,
        /// Test images (default 300).
        n_test: usize = 300,
        /// Generic images used to learn the pose maps (default 60).
        n_generic: usize = 60,
        /// Forward-selection budget per row (default 5).
        k: usize = 5,
        /// Neighbourhood side; 0 leaves rows unrestricted (default 3).
        m: usize = 3,
        /// Structured SVM epochs (default 10).
        epochs: usize = 10,
        /// Structured SVM regularisation (default 0.001).
        lambda: f64 = 1e-3,
        /// Untimed predictions before measuring (default 3).
        warmup: usize = 3,
        /// Warp interpolation: nearest or bilinear (default bilinear).
        interp: String = "bilinear".into(),
        /// Warp padding: zero or replicate (default zero).
        pad: String = "zero".into(),
    }
}

impl Experiment for BenchPoseParams {
    const NAME: &'static str = "bench-pose";

    fn validate(&self) -> anyhow::Result<()> {
        if self.feat != "hog" {
            return Err(config_err("feat: bench-pose supports hog only"));
        }
        ExtractorSpec { feat: &self.feat, cell: self.cell, orientations: self.orientations, net: None, probe: 0 }
            .validate()?;
        parse::<PoseFamily>("family", &self.family)?;
        regression("fs", self.k, 0.0, self.m, "hellinger")?;
        parse_interp(&self.interp)?;
        parse_pad(&self.pad)?;
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(config_err("noise must be a non-negative number"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(config_err("lambda must be positive"));
        }
        for (name, v) in [
            ("size", self.size),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_generic", self.n_generic),
        ] {
            require_positive(name, v)?;
        }
        Ok(())
    }

    fn outputs(&self) -> Vec<String> {
        vec!["bench.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let e = ExtractorSpec { feat: &self.feat, cell: self.cell, orientations: self.orientations, net: None, probe: 0 }
            .build()?;
        let family = parse::<PoseFamily>("family", &self.family)?;
        let spec = PoseSetSpec { size: self.size, noise: self.noise };
        let train = synth_pose_with(&spec, ctx.seed, Split::Train, self.n_train, family)?;
        let test = synth_pose_with(&spec, ctx.seed, Split::Test, self.n_test, family)?;
        let poses = build_pose_set(family, self.size);
        let generic = synth_generic_set(ctx.seed, Split::Train, self.n_generic, self.size);
        let opts = PairOptions { interp: parse_interp(&self.interp)?, pad: parse_pad(&self.pad)?, crop: CropPolicy::All };
        log::info!("learning {} pose maps", poses.len());
        let maps = learn_pose_maps(&*e, &poses, &generic, &regression("fs", self.k, 0.0, self.m, "hellinger")?, &opts)?;
        let train_images: Vec<Image> = train.images().cloned().collect();
        let train_poses = train.poses()?;
        let mut models = Vec::new();
        for mode in [ScoringMode::Direct, ScoringMode::Equivariant] {
            log::info!("training {mode} model");
            let cfg = PoseTrainConfig { epochs: self.epochs, lambda: self.lambda, seed: ctx.seed, mode };
            models.push(train_pose_model(&*e, &train_images, &train_poses, &poses, &maps, Some(family), &cfg)?);
        }
        let baseline = median_pose(family, &train_poses, self.size)?;
        let test_images: Vec<Image> = test.images().cloned().collect();
        let result = bench(
            &models[0],
            &models[1],
            &*e,
            &test_images,
            &test.poses()?,
            &baseline,
            family,
            &BenchOptions { warmup: self.warmup },
        )?;
        result.write_csv(ctx.path("bench.csv"))?;
        Ok(serde_json::to_value(&result)?)
    }
}
