//! Subcommand implementations and the shared run driver.

pub mod data;
pub mod maps;
pub mod nets;
pub mod pose;
pub mod selftest;

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context as _;
use equimap::analysis::write_json;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{config_err, resolve, ConfigFile, ExperimentConfig};

/// Seed and output directory of one run.
pub struct RunContext {
    pub seed: u64,
    pub output: PathBuf,
}

impl RunContext {
    pub fn path(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }
}

/// A configured experiment: resolved parameters plus the files it writes.
pub trait Experiment: Serialize + DeserializeOwned {
    const NAME: &'static str;

    /// Rejects parameter values that cannot describe a run.
    fn validate(&self) -> anyhow::Result<()>;

    /// Files written under the output directory besides `config.json` and
    /// `summary.json`.
    fn outputs(&self) -> Vec<String>;

    /// Runs the experiment and returns the JSON summary.
    fn run(&self, ctx: &RunContext) -> anyhow::Result<Value>;
}

/// Global options after merging flags with the config file.
pub struct Globals {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub dry_run: bool,
}

/// Prints to standard output; a closed pipe is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn execute<P: Experiment, A: Serialize>(globals: &Globals, file: ConfigFile, flags: &A) -> anyhow::Result<()> {
    if let Some(cmd) = &file.command {
        if cmd != P::NAME {
            return Err(config_err(format!("config file is for '{cmd}', not '{}'", P::NAME)));
        }
    }
    let params: P = resolve(file.params, flags)?;
    params.validate()?;
    let cfg = ExperimentConfig {
        command: P::NAME.to_string(),
        seed: globals.seed.or(file.seed).unwrap_or(0),
        threads: globals.threads.or(file.threads),
        output: globals
            .output
            .clone()
            .or(file.output)
            .unwrap_or_else(|| PathBuf::from("runs").join(P::NAME)),
        params,
    };
    if cfg.threads == Some(0) {
        return Err(config_err("threads must be >= 1"));
    }
    let mut outputs = vec!["config.json".to_string(), "summary.json".to_string()];
    outputs.extend(cfg.params.outputs());
    if globals.dry_run {
        let plan = json!({
            "config": cfg,
            "outputs": outputs.iter().map(|o| cfg.output.join(o)).collect::<Vec<_>>(),
        });
        emit(&serde_json::to_string_pretty(&plan)?)?;
        return Ok(());
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    write_json(cfg.output.join("config.json"), &cfg)?;
    log::info!("{} -> {}", P::NAME, cfg.output.display());
    let start = Instant::now();
    let ctx = RunContext { seed: cfg.seed, output: cfg.output.clone() };
    let summary = cfg.params.run(&ctx)?;
    log::info!("{} finished in {:.1}s", P::NAME, start.elapsed().as_secs_f64());
    write_json(ctx.path("summary.json"), &summary)?;
    emit(&serde_json::to_string_pretty(&summary)?)
}
