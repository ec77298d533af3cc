//! Transformation layers: a site permutation followed by an `m×m×D → D`
//! filter bank with stride 1 and padding `(m−1)/2`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::table::{PermutationTable, TableMode};
use crate::featnet::{read_tensors, write_tensors, ConvShape, Differentiable};
use crate::field::FeatureField;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TransformationLayer {
    pub table: PermutationTable,
    pub channels: usize,
    /// Odd filter side.
    pub m: usize,
    /// Filter weights in [`ConvShape`] layout followed by `channels` biases.
    pub params: Vec<f64>,
}

impl TransformationLayer {
    /// Filters equal to the identity at the centre tap, zero bias.
    pub fn identity_init(table: PermutationTable, channels: usize, m: usize) -> Result<Self> {
        if m % 2 == 0 || m == 0 {
            return Err(Error::InvalidInput(format!("filter side m must be odd, got {m}")));
        }
        let mut layer = Self {
            table,
            channels,
            m,
            params: vec![0.0; 0],
        };
        let shape = layer.shape();
        layer.params = vec![0.0; shape.num_params()];
        let c = m / 2;
        for t in 0..channels {
            layer.params[shape.weight_index(t, c, c, t)] = 1.0;
        }
        Ok(layer)
    }

    pub fn shape(&self) -> ConvShape {
        ConvShape {
            in_channels: self.channels,
            out_channels: self.channels,
            kernel: self.m,
            stride: 1,
            pad: self.m / 2,
        }
    }

    pub fn mode(&self) -> TableMode {
        self.table.mode
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.table.width, self.table.height, self.channels)
    }

    #[inline]
    pub fn weight(&self, o: usize, du: usize, dv: usize, t: usize) -> f64 {
        self.params[self.shape().weight_index(o, du, dv, t)]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.shape().num_weights()..]
    }

    fn check(&self, x: &FeatureField) -> Result<()> {
        if x.dims() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "transformation layer expects {:?}, got {:?}",
                self.dims(),
                x.dims()
            )));
        }
        Ok(())
    }

    /// Site permutation alone.
    pub fn permute(&self, x: &FeatureField) -> Result<FeatureField> {
        self.check(x)?;
        let d = self.channels;
        let mut p = FeatureField::zeros(x.width(), x.height(), d, x.geometry);
        let src = x.data();
        let dst = p.data_mut();
        for (o, entry) in self.table.entries.iter().enumerate() {
            let out = &mut dst[o * d..][..d];
            for &(i, w) in entry {
                let cell = &src[i * d..][..d];
                for (a, b) in out.iter_mut().zip(cell) {
                    *a += w * b;
                }
            }
        }
        Ok(p)
    }

    fn zero_dead(&self, f: &mut FeatureField) {
        let d = self.channels;
        for (o, entry) in self.table.entries.iter().enumerate() {
            if entry.is_empty() {
                f.data_mut()[o * d..][..d].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Writes `manifest.json` (shape, mode and table triplets) and
    /// `tensors.bin` (filters then biases).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = LayerManifest {
            format: TRANSLAYER_FORMAT.into(),
            width: self.table.width,
            height: self.table.height,
            channels: self.channels,
            m: self.m,
            mode: self.table.mode,
            table: self.table.triplets(),
            params: self.params.len(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec(&manifest)?)?;
        write_tensors(&dir.join("tensors.bin"), &[&self.params])
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: LayerManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if m.format != TRANSLAYER_FORMAT {
            return Err(Error::Format(format!("unknown layer format '{}'", m.format)));
        }
        let table = PermutationTable::from_triplets(m.width, m.height, m.mode, &m.table)?;
        let mut layer = Self::identity_init(table, m.channels, m.m)?;
        if layer.params.len() != m.params {
            return Err(Error::Format("parameter count does not match shape".into()));
        }
        layer.params = read_tensors(&dir.join("tensors.bin"), &[m.params])?.remove(0);
        Ok(layer)
    }
}

const TRANSLAYER_FORMAT: &str = "equimap-translayer/1";

#[derive(Serialize, Deserialize)]
struct LayerManifest {
    format: String,
    width: usize,
    height: usize,
    channels: usize,
    m: usize,
    mode: TableMode,
    table: Vec<(usize, usize, f64)>,
    params: usize,
}

impl Differentiable for TransformationLayer {
    fn forward(&self, x: &FeatureField) -> Result<FeatureField> {
        let p = self.permute(x)?;
        let mut y = self.shape().forward(&p, &self.params)?;
        self.zero_dead(&mut y);
        Ok(y)
    }

    fn backward(
        &self,
        x: &FeatureField,
        _y: &FeatureField,
        gy: &FeatureField,
        grad_params: &mut [f64],
    ) -> Result<FeatureField> {
        self.check(x)?;
        let p = self.permute(x)?;
        let mut g = gy.clone();
        self.zero_dead(&mut g);
        let gp = self.shape().backward(&p, &g, &self.params, grad_params)?;
        let d = self.channels;
        let mut gx = FeatureField::zeros(x.width(), x.height(), d, x.geometry);
        let src = gp.data();
        let dst = gx.data_mut();
        for (o, entry) in self.table.entries.iter().enumerate() {
            for &(i, w) in entry {
                for t in 0..d {
                    dst[i * d + t] += w * src[o * d + t];
                }
            }
        }
        Ok(gx)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::{grad_check, random_input};
    use crate::field::Geometry;
    use crate::imaging::GeometricTransform;
    use crate::netsurgery::build_permutation_table;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_is_identity() {
        let layer = TransformationLayer::identity_init(PermutationTable::identity(5, 4), 3, 1).unwrap();
        let x = random_input((5, 4, 3), 0.0, 1);
        assert_eq!(layer.forward(&x).unwrap(), x);
        let layer = TransformationLayer::identity_init(PermutationTable::identity(5, 4), 3, 3).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    fn random_layer(mode: TableMode, seed: u64) -> TransformationLayer {
        let geo = Geometry::new(4.0, 1.5);
        let g = GeometricTransform::rotation_centered(30.0, 28, 28);
        let table = build_permutation_table((7, 7), &geo, &g, mode).unwrap();
        let mut l = TransformationLayer::identity_init(table, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        l.params.iter_mut().for_each(|p| *p += rng.gen_range(-0.5..0.5));
        l
    }

    #[test]
    fn gradients_round_and_bilinear() {
        for mode in [TableMode::Round, TableMode::Bilinear] {
            let l = random_layer(mode, 4);
            let mut x = random_input((7, 7, 3), 0.0, 5);
            x.geometry = Geometry::new(4.0, 1.5);
            let r = grad_check(&l, &x, 300, 6).unwrap();
            assert!(r.max_rel_err() < 1e-4, "{mode:?}: {r:?}");
        }
    }

    #[test]
    fn dead_sites_are_zero() {
        let l = random_layer(TableMode::Round, 1);
        assert!(l.table.live_count() < 49);
        let y = l.forward(&random_input((7, 7, 3), 0.0, 2)).unwrap();
        for (o, e) in l.table.entries.iter().enumerate() {
            if e.is_empty() {
                assert!(y.data()[o * 3..][..3].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let l = random_layer(TableMode::Bilinear, 3);
        l.save(dir.path()).unwrap();
        assert_eq!(TransformationLayer::load(dir.path()).unwrap(), l);
    }
}
