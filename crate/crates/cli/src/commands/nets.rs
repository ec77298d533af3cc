//! `train-net`, `learn-translayer`, `stitch` and `invariance`.

use std::path::PathBuf;

use equimap::analysis::{invariance_scores, max_invariant_set, ranked_channels, write_csv};
use equimap::equilearn::{learn_map_task, TaskLayerConfig};
use equimap::featnet::{save_network, train, CurvePoint, Network, NetworkSplit, TrainConfig};
use equimap::imaging::synth::ClassSetSpec;
use equimap::imaging::{LabeledDataset, Split, TransformSpec};
use equimap::netsurgery::{
    evaluate_franken, learn_stitch, StitchConfig, StitchInit, StitchingLayer, TableMode, TransformationLayer,
};
use serde::Serialize;
use serde_json::{json, Value};

use super::{Experiment, RunContext};
use crate::common::{class_data, fmt6, load_net, load_split, parse_interp, parse_pad, require_path, require_positive};
use crate::config::{config_err, params, parse};

fn class_spec(noise: f64) -> ClassSetSpec {
    ClassSetSpec { noise, ..ClassSetSpec::default() }
}

fn check_noise(noise: f64) -> anyhow::Result<()> {
    if noise.is_finite() && noise >= 0.0 {
        Ok(())
    } else {
        Err(config_err("noise must be a non-negative number"))
    }
}

fn check_train(cfg: &TrainConfig) -> anyhow::Result<()> {
    cfg.validate().map_err(|e| config_err(e.to_string()))
}

fn write_curve(path: PathBuf, curve: &[CurvePoint]) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|c| {
            vec![
                c.epoch.to_string(),
                c.samples.to_string(),
                fmt6(c.train_loss),
                c.val_error.map_or(String::new(), fmt6),
            ]
        })
        .collect();
    write_csv(path, &["epoch", "samples", "train_loss", "val_error"], &rows)?;
    Ok(())
}

/// Train and test splits, loaded or synthesised with `classes` classes.
struct Splits {
    train: LabeledDataset,
    test: LabeledDataset,
}

fn splits(
    train: Option<&PathBuf>,
    test: Option<&PathBuf>,
    noise: f64,
    seed: u64,
    n: (usize, usize),
    classes: usize,
) -> anyhow::Result<Splits> {
    let spec = class_spec(noise);
    Ok(Splits {
        train: class_data(train, &spec, seed, Split::Train, n.0, classes)?,
        test: class_data(test, &spec, seed, Split::Test, n.1, classes)?,
    })
}

params! {
    /// Network training parameters.
    TrainNetArgs => TrainNetParams {
        /// Classes of the synthesised data (default 8).
        classes: usize = 8,
        /// Synthesised training images when train is absent (default 2400).
        n_train: usize = 2400,
        /// Synthesised test images when test is absent (default 1000).
        n_test: usize = 1000,
        /// Pixel noise of synthesised images (default 0.35).
        noise: f64 = 0.35,
        /// Training epochs (default 10).
        epochs: usize = 10,
        /// Initial learning rate (default 0.02).
        lr: f64 = 0.02,
        /// Mini-batch size (default 32).
        batch: usize = 32,
        /// Mirror training images at random (default true).
        hflip: bool = true,
    }
    optional {
        /// Training dataset directory.
        train: PathBuf,
        /// Test dataset directory.
        test: PathBuf,
    }
}

impl TrainNetParams {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch,
            augment_hflip: self.hflip,
            seed,
            ..TrainConfig::default()
        }
    }
}

impl Experiment for TrainNetParams {
    const NAME: &'static str = "train-net";

    fn validate(&self) -> anyhow::Result<()> {
        if self.classes < 2 {
            return Err(config_err("classes must be >= 2"));
        }
        require_positive("n_train", self.n_train)?;
        require_positive("n_test", self.n_test)?;
        check_noise(self.noise)?;
        check_train(&self.train_config(0))
    }

    fn outputs(&self) -> Vec<String> {
        vec!["net/".into(), "curve.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let d = splits(
            self.train.as_ref(),
            self.test.as_ref(),
            self.noise,
            ctx.seed,
            (self.n_train, self.n_test),
            self.classes,
        )?;
        let cfg = self.train_config(ctx.seed);
        let mut net = Network::t3(d.train.num_classes.unwrap_or(self.classes), ctx.seed)?;
        let report = train(&mut net, &d.train, &cfg)?;
        save_network(&net, ctx.path("net"), Some(&cfg))?;
        let rows: Vec<Vec<String>> = report
            .epoch_losses
            .iter()
            .enumerate()
            .map(|(i, l)| vec![(i + 1).to_string(), fmt6(*l)])
            .collect();
        write_csv(ctx.path("curve.csv"), &["epoch", "train_loss"], &rows)?;
        let train_error = net.error_rate(&d.train)?;
        let test_error = net.error_rate(&d.test)?;
        Ok(json!({
            "num_params": net.num_params(),
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss(),
            "train_error": train_error,
            "test_error": test_error,
        }))
    }
}

params! {
    /// Transformation-layer learning parameters.
    LearnTranslayerArgs => LearnTranslayerParams {
        /// Network split index (default 4).
        probe: usize = 4,
        /// Transformation (default vflip).
        g: String = "vflip".into(),
        /// Filter side of the layer (default 3).
        m: usize = 3,
        /// Permutation table: round or bilinear (default round).
        mode: String = "round".into(),
        /// Warp interpolation: nearest or bilinear (default bilinear).
        interp: String = "bilinear".into(),
        /// Warp padding: zero or replicate (default zero).
        pad: String = "zero".into(),
        /// Synthesised training images when train is absent (default 2400).
        n_train: usize = 2400,
        /// Synthesised test images when test is absent (default 1000).
        n_test: usize = 1000,
        /// Pixel noise of synthesised images (default 0.35).
        noise: f64 = 0.35,
        /// Training epochs (default 20).
        epochs: usize = 20,
        /// Initial learning rate (default 0.001).
        lr: f64 = 0.001,
    }
    optional {
        /// Network directory (required).
        net: PathBuf,
        /// Training dataset directory.
        train: PathBuf,
        /// Validation dataset directory.
        test: PathBuf,
    }
}

impl LearnTranslayerParams {
    fn layer_config(&self) -> anyhow::Result<TaskLayerConfig> {
        if self.m % 2 == 0 {
            return Err(config_err("m must be odd"));
        }
        Ok(TaskLayerConfig {
            m: self.m,
            mode: parse::<TableMode>("mode", &self.mode)?,
            interp: parse_interp(&self.interp)?,
            pad: parse_pad(&self.pad)?,
        })
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { epochs: self.epochs, learning_rate: self.lr, seed, ..TrainConfig::default() }
    }
}

impl Experiment for LearnTranslayerParams {
    const NAME: &'static str = "learn-translayer";

    fn validate(&self) -> anyhow::Result<()> {
        require_path("net", &self.net)?;
        parse::<TransformSpec>("g", &self.g)?;
        self.layer_config()?;
        require_positive("n_train", self.n_train)?;
        require_positive("n_test", self.n_test)?;
        check_noise(self.noise)?;
        check_train(&self.train_config(0))
    }

    fn outputs(&self) -> Vec<String> {
        vec!["layer/".into(), "curve.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let split = load_split(require_path("net", &self.net)?, self.probe)?;
        let classes = split.net.num_classes();
        let d = splits(
            self.train.as_ref(),
            self.test.as_ref(),
            self.noise,
            ctx.seed,
            (self.n_train, self.n_test),
            classes,
        )?;
        let first = &d.train.items.first().ok_or_else(|| anyhow::anyhow!("empty training set"))?.image;
        let g = parse::<TransformSpec>("g", &self.g)?.resolve(first.width(), first.height())?;
        let r = learn_map_task(&split, &g, &d.train, &d.test, &self.train_config(ctx.seed), &self.layer_config()?)?;
        r.layer.save(ctx.path("layer"))?;
        write_curve(ctx.path("curve.csv"), &r.curve)?;
        Ok(json!({
            "probe": self.probe,
            "transform": self.g,
            "original_error": r.original_error,
            "uncompensated_error": r.uncompensated_error,
            "compensated_error": r.compensated_error,
            "recovery": r.recovery(),
        }))
    }
}

/// Serialised stitching layer.
#[derive(Serialize)]
struct StitchFile<'a> {
    in_dims: (usize, usize, usize),
    out_dims: (usize, usize, usize),
    kernel: usize,
    params: &'a [f64],
}

params! {
    /// Network stitching parameters.
    StitchArgs => StitchParams {
        /// Split index in both networks (default 1).
        probe: usize = 1,
        /// Stitching filter side (default 1).
        kernel: usize = 1,
        /// Initialisation: identity or random (default identity).
        init: String = "identity".into(),
        /// Synthesised training images when train is absent (default 2400).
        n_train: usize = 2400,
        /// Synthesised test images when test is absent (default 1000).
        n_test: usize = 1000,
        /// Pixel noise of synthesised images (default 0.35).
        noise: f64 = 0.35,
        /// Training epochs (default 5).
        epochs: usize = 5,
        /// Initial learning rate (default 0.01).
        lr: f64 = 0.01,
    }
    optional {
        /// Network providing the first part (required).
        net_a: PathBuf,
        /// Network providing the second part (required).
        net_b: PathBuf,
        /// Training dataset directory.
        train: PathBuf,
        /// Test dataset directory.
        test: PathBuf,
    }
}

impl StitchParams {
    fn init(&self) -> anyhow::Result<StitchInit> {
        match self.init.as_str() {
            "identity" => Ok(StitchInit::Identity),
            "random" => Ok(StitchInit::Random),
            other => Err(config_err(format!("init: unknown initialisation '{other}' (identity or random)"))),
        }
    }

    fn stitch_config(&self, seed: u64) -> anyhow::Result<StitchConfig> {
        let defaults = StitchConfig::default();
        Ok(StitchConfig {
            kernel: self.kernel,
            init: self.init()?,
            train: TrainConfig { epochs: self.epochs, learning_rate: self.lr, seed, ..defaults.train },
        })
    }
}

impl Experiment for StitchParams {
    const NAME: &'static str = "stitch";

    fn validate(&self) -> anyhow::Result<()> {
        require_path("net_a", &self.net_a)?;
        require_path("net_b", &self.net_b)?;
        if self.kernel % 2 == 0 {
            return Err(config_err("kernel must be odd"));
        }
        require_positive("n_train", self.n_train)?;
        require_positive("n_test", self.n_test)?;
        check_noise(self.noise)?;
        check_train(&self.stitch_config(0)?.train)
    }

    fn outputs(&self) -> Vec<String> {
        vec!["stitch.json".into(), "curve.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let a = load_split(require_path("net_a", &self.net_a)?, self.probe)?;
        let b = load_split(require_path("net_b", &self.net_b)?, self.probe)?;
        let d = splits(
            self.train.as_ref(),
            self.test.as_ref(),
            self.noise,
            ctx.seed,
            (self.n_train, self.n_test),
            b.net.num_classes(),
        )?;
        let single_a = a.net.error_rate(&d.test)?;
        let single_b = b.net.error_rate(&d.test)?;
        let identity = StitchingLayer::new(a.phi1_dims()?, b.phi1_dims()?, 1, StitchInit::Identity, 0)?;
        let identity_error = evaluate_franken(&a, &identity, &b, &d.test)?;
        let r = learn_stitch(&a, &b, &d.train, None, &self.stitch_config(ctx.seed)?)?;
        let learned_error = evaluate_franken(&a, &r.layer, &b, &d.test)?;
        let file = StitchFile {
            in_dims: r.layer.in_dims,
            out_dims: r.layer.out_dims,
            kernel: r.layer.kernel,
            params: &r.layer.params,
        };
        std::fs::write(ctx.path("stitch.json"), serde_json::to_vec(&file)?)?;
        write_curve(ctx.path("curve.csv"), &r.curve)?;
        Ok(json!({
            "probe": self.probe,
            "single_error_a": single_a,
            "single_error_b": single_b,
            "identity_error": identity_error,
            "learned_error": learned_error,
        }))
    }
}

params! {
    /// Invariance analysis parameters.
    InvarianceArgs => InvarianceParams {
        /// Network split index; must match the layer (default 4).
        probe: usize = 4,
        /// Transformation the layer was learned for (default hflip).
        g: String = "hflip".into(),
        /// Relative error tolerance for accepting invariant channels (default 0.05).
        tol: f64 = 0.05,
        /// Synthesised test images when test is absent (default 1000).
        n_test: usize = 1000,
        /// Pixel noise of synthesised images (default 0.35).
        noise: f64 = 0.35,
    }
    optional {
        /// Network directory (required).
        net: PathBuf,
        /// Transformation layer directory (required).
        layer: PathBuf,
        /// Test dataset directory.
        test: PathBuf,
    }
}

impl Experiment for InvarianceParams {
    const NAME: &'static str = "invariance";

    fn validate(&self) -> anyhow::Result<()> {
        require_path("net", &self.net)?;
        require_path("layer", &self.layer)?;
        parse::<TransformSpec>("g", &self.g)?;
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(config_err("tol must be a non-negative number"));
        }
        require_positive("n_test", self.n_test)?;
        check_noise(self.noise)
    }

    fn outputs(&self) -> Vec<String> {
        vec!["scores.csv".into(), "evaluations.csv".into()]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value> {
        let net = load_net(require_path("net", &self.net)?)?;
        let classes = net.num_classes();
        let split = NetworkSplit::new(net, self.probe).map_err(|e| config_err(format!("probe: {e}")))?;
        let layer = TransformationLayer::load(require_path("layer", &self.layer)?)?;
        if layer.dims() != split.phi1_dims()? {
            return Err(config_err(format!(
                "layer dims {:?} do not match probe {} dims {:?}",
                layer.dims(),
                self.probe,
                split.phi1_dims()?
            )));
        }
        let spec = class_spec(self.noise);
        let test = class_data(self.test.as_ref(), &spec, ctx.seed, Split::Test, self.n_test, classes)?;
        let first = &test.items.first().ok_or_else(|| anyhow::anyhow!("empty test set"))?.image;
        let g = parse::<TransformSpec>("g", &self.g)?.resolve(first.width(), first.height())?;
        let scores = invariance_scores(&layer);
        let mut rank = vec![0; scores.len()];
        for (r, &c) in ranked_channels(&scores).iter().enumerate() {
            rank[c] = r;
        }
        let rows: Vec<Vec<String>> = scores
            .iter()
            .enumerate()
            .map(|(c, s)| vec![c.to_string(), fmt6(*s), rank[c].to_string()])
            .collect();
        write_csv(ctx.path("scores.csv"), &["channel", "score", "rank"], &rows)?;
        let report = max_invariant_set(&layer, &split, &g, &test, self.tol)?;
        let rows: Vec<Vec<String>> = report
            .evaluations
            .iter()
            .map(|e| vec![e.p.to_string(), fmt6(e.error), e.pass.to_string()])
            .collect();
        write_csv(ctx.path("evaluations.csv"), &["p", "error", "pass"], &rows)?;
        Ok(serde_json::to_value(&report)?)
    }
}
