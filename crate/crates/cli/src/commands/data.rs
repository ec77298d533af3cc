//! `synth` and `extract`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use equimap::analysis::write_csv;
use equimap::imaging::synth::{synth_classification_with, synth_generic_set, synth_pose_with, ClassSetSpec, PoseSetSpec};
use equimap::structreg::PoseFamily;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::{Experiment, RunContext};
use crate::common::{fmt6, load_images, parse_split, require_path, require_positive, save_images, ExtractorSpec};
use crate::config::{config_err, params, parse};

params! {
    /// Dataset synthesis parameters.
    SynthArgs => SynthParams {
        /// Dataset kind: class, generic or pose (default class).
        kind: String = "class".into(),
        /// Number of images (default 1000).
        n: usize = 1000,
        /// Image side in pixels; 0 picks 32 for class, 64 for generic, 120 for pose (default 0).
        size: usize = 0,
        /// Number of classes for class datasets (default 8).
        classes: usize = 8,
        /// Split stream: train or test (default train).
        split: String = "train".into(),
        /// Pose family for pose datasets: rotation or affine (default rotation).
        family: String = "rotation".into(),
    }
    optional {
        /// Additive Gaussian pixel noise (default: the generator's own).
        noise: f64,
    }
}

impl SynthParams {
    fn side(&self) -> usize {
        match (self.size, self.kind.as_str()) {
            (0, "class") => 32,
            (0, "generic") => 64,
            (0, _) => 120,
            (s, _) => s,
        }
    }
}

impl Experiment for SynthParams {
    const NAME: &'static str = "synth";

    fn validate(&self) -> anyhow::Result<()> {
        if !matches!(self.kind.as_str(), "class" | "generic" | "pose") {
            return Err(config_err(format!("kind: unknown kind '{}' (class, generic or pose)", self.kind)));
        }
        require_positive("n", self.n)?;
        require_positive("classes", self.classes)?;
        parse_split(&self.split)?;
        parse::<PoseFamily>("family", &self.family)?;
        if self.noise.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
            return Err(config_err("noise must be a non-negative number"));
        }
        Ok(())
    }

    fn outputs(&self) -> Vec<String> {
        vec!["index.json".into(), "<NNNNNN>.pgm".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let split = parse_split(&self.split)?;
        let size = self.side();
        match self.kind.as_str() {
            "class" => {
                let mut spec = ClassSetSpec { size, ..ClassSetSpec::default() };
                if let Some(s) = self.noise {
                    spec.noise = s;
                }
                synth_classification_with(&spec, ctx.seed, split, self.n, self.classes)?.save_dir(&ctx.output)?;
            }
            "generic" => {
                let images = synth_generic_set(ctx.seed, split, self.n, size);
                save_images(&ctx.output, &images, split, ctx.seed)?;
            }
            _ => {
                let family = parse::<PoseFamily>("family", &self.family)?;
                let spec = PoseSetSpec { size, noise: self.noise.unwrap_or(0.0) };
                synth_pose_with(&spec, ctx.seed, split, self.n, family)?.save_dir(&ctx.output)?;
            }
        }
        Ok(json!({ "kind": self.kind, "n": self.n, "size": size, "split": self.split, "path": ctx.output }))
    }
}

params! {
    /// Feature extraction parameters.
    ExtractArgs => ExtractParams {
        /// Feature extractor: hog or net (default hog).
        feat: String = "hog".into(),
        /// HOG cell size in pixels (default 8).
        cell: usize = 8,
        /// HOG contrast-insensitive orientations (default 9).
        orientations: usize = 9,
        /// Network split index for feat = net (default 4).
        probe: usize = 4,
    }
    optional {
        /// Image directory with an index.json (required).
        input: PathBuf,
        /// Network directory for feat = net.
        net: PathBuf,
    }
}

impl ExtractParams {
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

impl Experiment for ExtractParams {
    const NAME: &'static str = "extract";

    fn validate(&self) -> anyhow::Result<()> {
        require_path("input", &self.input)?;
        self.extractor().validate()
    }

    fn outputs(&self) -> Vec<String> {
        vec!["features.bin".into(), "features.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let images = load_images(require_path("input", &self.input)?)?;
        let e = self.extractor().build()?;
        let fields = images
            .par_iter()
            .map(|x| e.extract(x))
            .collect::<equimap::Result<Vec<_>>>()?;
        let mut w = BufWriter::new(File::create(ctx.path("features.bin"))?);
        for f in &fields {
            f.write_to(&mut w)?;
        }
        w.flush()?;
        let rows: Vec<Vec<String>> = fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let (fw, fh, fd) = f.dims();
                let mean = f.data().iter().sum::<f64>() / f.len().max(1) as f64;
                let norm = f.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                vec![i.to_string(), fw.to_string(), fh.to_string(), fd.to_string(), fmt6(mean), fmt6(norm)]
            })
            .collect();
        write_csv(ctx.path("features.csv"), &["index", "width", "height", "depth", "mean", "l2_norm"], &rows)?;
        Ok(json!({
            "extractor": e.name(),
            "count": fields.len(),
            "dims": fields.first().map(|f| f.dims()),
        }))
    }
}
