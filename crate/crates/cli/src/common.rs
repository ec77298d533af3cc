//! Helpers shared by the subcommands: extractors, dataset loading and
//! option parsing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use equimap::equilearn::{CropPolicy, FeatureExtractor, Method, PairOptions, RegressionConfig};
use equimap::featnet::{load_network, Network, NetworkSplit};
use equimap::hog::{HogConfig, HogExtractor, Metric};
use equimap::imaging::synth::{synth_classification_with, ClassSetSpec};
use equimap::imaging::{pnm, GeometricTransform, Image, Interpolation, LabeledDataset, Padding, Split, TransformSpec};
use serde::{Deserialize, Serialize};

use crate::config::{config_err, parse};

/// Extractor selection shared by every command that computes features.
pub struct ExtractorSpec<'a> {
    pub feat: &'a str,
    pub cell: usize,
    pub orientations: usize,
    pub net: Option<&'a Path>,
    pub probe: usize,
}

impl ExtractorSpec<'_> {
    pub fn validate(&self) -> anyhow::Result<()> {
        match self.feat {
            "hog" => {
                let cfg = self.hog_config();
                cfg.validate().map_err(|e| config_err(e.to_string()))
            }
            "net" => match self.net {
                Some(_) => Ok(()),
                None => Err(config_err("feat = net requires net")),
            },
            other => Err(config_err(format!("unknown feature extractor '{other}' (hog or net)"))),
        }
    }

    fn hog_config(&self) -> HogConfig {
        HogConfig { cell_size: self.cell, num_orientations: self.orientations }
    }

    pub fn build(&self) -> anyhow::Result<Box<dyn FeatureExtractor>> {
        self.validate()?;
        match (self.feat, self.net) {
            ("net", Some(dir)) => Ok(Box::new(load_split(dir, self.probe)?)),
            _ => Ok(Box::new(HogExtractor::new(self.hog_config()))),
        }
    }
}

pub fn load_net(dir: &Path) -> anyhow::Result<Network> {
    let (net, _) = load_network(dir).with_context(|| format!("loading network from {}", dir.display()))?;
    Ok(net)
}

pub fn load_split(dir: &Path, probe: usize) -> anyhow::Result<NetworkSplit> {
    NetworkSplit::new(load_net(dir)?, probe).map_err(|e| config_err(format!("probe: {e}")))
}

#[derive(Serialize, Deserialize)]
struct ImageEntry {
    file: String,
}

#[derive(Serialize)]
struct GenericEntry {
    file: String,
    split: Split,
    seed: u64,
}

/// Images listed in `dir/index.json`, in index order. Works for labelled and
/// unlabelled directories alike.
pub fn load_images(dir: &Path) -> anyhow::Result<Vec<Image>> {
    let index = dir.join("index.json");
    let bytes = fs::read(&index).with_context(|| format!("reading {}", index.display()))?;
    let entries: Vec<ImageEntry> = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", index.display()))?;
    if entries.is_empty() {
        bail!("{} lists no images", index.display());
    }
    entries
        .iter()
        .map(|e| pnm::read_any(dir.join(&e.file)).with_context(|| format!("reading {}", e.file)))
        .collect()
}

/// Writes unlabelled images as PGM/PPM files plus `index.json`.
pub fn save_images(dir: &Path, images: &[Image], split: Split, seed: u64) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
        let file = format!("{i:06}.{ext}");
        pnm::write(dir.join(&file), img)?;
        index.push(GenericEntry { file, split, seed });
    }
    fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

/// A classification set from `dir`, or a synthesised one when `dir` is absent.
pub fn class_data(
    dir: Option<&PathBuf>,
    spec: &ClassSetSpec,
    seed: u64,
    split: Split,
    n: usize,
    classes: usize,
) -> anyhow::Result<LabeledDataset> {
    match dir {
        Some(d) => LabeledDataset::load_dir(d).with_context(|| format!("loading dataset {}", d.display())),
        None => Ok(synth_classification_with(spec, seed, split, n, classes)?),
    }
}

/// `g` resolved about the centre of `image`.
pub fn resolve_transform(spec: &TransformSpec, image: &Image) -> anyhow::Result<GeometricTransform> {
    Ok(spec.resolve(image.width(), image.height())?)
}

pub fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(config_err(format!("split: unknown split '{s}' (train or test)"))),
    }
}

pub fn parse_interp(s: &str) -> anyhow::Result<Interpolation> {
    match s {
        "nearest" => Ok(Interpolation::Nearest),
        "bilinear" => Ok(Interpolation::Bilinear),
        _ => Err(config_err(format!("interp: unknown interpolation '{s}' (nearest or bilinear)"))),
    }
}

pub fn parse_pad(s: &str) -> anyhow::Result<Padding> {
    match s {
        "zero" => Ok(Padding::Zero),
        "replicate" => Ok(Padding::Replicate),
        _ => Err(config_err(format!("pad: unknown padding '{s}' (zero or replicate)"))),
    }
}

/// `interior` keeps sites whose `m×m` neighbourhood is inside the grid.
pub fn parse_crop(s: &str, m: usize) -> anyhow::Result<CropPolicy> {
    match s {
        "all" => Ok(CropPolicy::All),
        "interior" => Ok(CropPolicy::Interior(m.max(1))),
        _ => Err(config_err(format!("crop: unknown crop policy '{s}' (all or interior)"))),
    }
}

pub fn pair_options(interp: &str, pad: &str, crop: &str, m: usize) -> anyhow::Result<PairOptions> {
    Ok(PairOptions { interp: parse_interp(interp)?, pad: parse_pad(pad)?, crop: parse_crop(crop, m)? })
}

/// `m = 0` leaves rows unrestricted.
pub fn regression(method: &str, k: usize, lambda: f64, m: usize, metric: &str) -> anyhow::Result<RegressionConfig> {
    let method = match method {
        "fs" => Method::Fs { k },
        "rr" => Method::Rr { lambda },
        "ls" => Method::Ls,
        _ => return Err(config_err(format!("method: unknown method '{method}' (fs, rr or ls)"))),
    };
    if k == 0 {
        return Err(config_err("k must be >= 1"));
    }
    let cfg = RegressionConfig { method, m: (m > 0).then_some(m), metric: parse::<Metric>("metric", metric)? };
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(cfg)
}

pub fn require_positive(name: &str, v: usize) -> anyhow::Result<()> {
    if v == 0 {
        return Err(config_err(format!("{name} must be >= 1")));
    }
    Ok(())
}

pub fn require_path<'a>(name: &str, p: &'a Option<PathBuf>) -> anyhow::Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| config_err(format!("{name} is required")))
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}
