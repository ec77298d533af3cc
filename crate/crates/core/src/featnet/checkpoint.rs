//! Checkpoints: `manifest.json` plus `tensors.bin`, a sequence of `EQF1`
//! records holding each parameter vector as a `1×1×len` field.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Differentiable, Layer};
use super::network::Network;
use super::train::TrainConfig;
use crate::field::{FeatureField, Geometry};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
const FORMAT: &str = "equimap-net/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub format: String,
    pub input_dims: (usize, usize, usize),
    pub seed: u64,
    pub layers: Vec<Layer>,
    pub train: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

/// Writes parameter vectors as consecutive `EQF1` records.
pub fn write_tensors(path: &Path, tensors: &[&[f64]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tensors {
        FeatureField::from_data(1, 1, t.len(), t.to_vec(), Geometry::PIXELS)?.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `lens.len()` records, checking each length.
pub fn read_tensors(path: &Path, lens: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut r = BufReader::new(File::open(path)?);
    lens.iter()
        .map(|&len| {
            let f = FeatureField::read_from(&mut r)?;
            if f.len() != len {
                return Err(Error::Format(format!("tensor has {} values, manifest says {len}", f.len())));
            }
            Ok(f.into_data())
        })
        .collect()
}

pub fn save_network(net: &Network, dir: impl AsRef<Path>, train: Option<&TrainConfig>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut data: Vec<&[f64]> = Vec::new();
    for (i, l) in net.layers.iter().enumerate() {
        if l.num_params() > 0 {
            tensors.push(TensorEntry {
                name: format!("{i}.{}", l.kind()),
                len: l.num_params(),
            });
            data.push(l.params());
        }
    }
    let manifest = NetworkManifest {
        format: FORMAT.into(),
        input_dims: net.input_dims,
        seed: net.seed,
        layers: net.layers.clone(),
        train: train.copied(),
        tensors,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    write_tensors(&dir.join(TENSORS_FILE), &data)
}

pub fn load_network(dir: impl AsRef<Path>) -> Result<(Network, NetworkManifest)> {
    let dir = dir.as_ref();
    let manifest: NetworkManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!("unknown network format '{}'", manifest.format)));
    }
    let mut layers = manifest.layers.clone();
    for l in &mut layers {
        match l {
            Layer::Conv(c) => c.params = vec![0.0; c.shape.num_params()],
            Layer::Fc(f) => *f = super::layers::Fc::zeros(f.in_dims, f.out),
            _ => {}
        }
    }
    let lens: Vec<usize> = manifest.tensors.iter().map(|t| t.len).collect();
    let mut values = read_tensors(&dir.join(TENSORS_FILE), &lens)?.into_iter();
    for l in &mut layers {
        if l.num_params() > 0 {
            let v = values.next().ok_or_else(|| Error::Format("missing tensor".into()))?;
            if v.len() != l.num_params() {
                return Err(Error::Format("tensor length does not match layer".into()));
            }
            l.params_mut().copy_from_slice(&v);
        }
    }
    let net = Network::new(layers, manifest.input_dims, manifest.seed)?;
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::t3(4, 9).unwrap();
        let cfg = TrainConfig::default();
        save_network(&net, dir.path(), Some(&cfg)).unwrap();
        let (back, manifest) = load_network(dir.path()).unwrap();
        assert_eq!(back, net);
        assert_eq!(manifest.train, Some(cfg));
        assert_eq!(manifest.tensors.len(), 4);
    }
}
