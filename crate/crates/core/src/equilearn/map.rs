use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::field::{FeatureField, Geometry};
use crate::imaging::GeometricTransform;
use crate::{Error, Result};

/// One output component: sparse coefficients over input flat indices plus bias.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub cols: Vec<u32>,
    pub coeffs: Vec<f64>,
    pub bias: f64,
}

impl MapRow {
    pub fn nnz(&self) -> usize {
        self.coeffs.iter().filter(|c| **c != 0.0).count()
    }

    #[inline]
    pub fn eval(&self, input: &[f64]) -> f64 {
        self.cols
            .iter()
            .zip(&self.coeffs)
            .fold(self.bias, |acc, (&c, &w)| acc + w * input[c as usize])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapMethod {
    #[default]
    Identity,
    Analytic,
    Ls,
    Rr,
    Fs,
    Layer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MapMeta {
    pub transform: Option<GeometricTransform>,
    pub method: MapMethod,
    pub k: Option<usize>,
    /// Neighbourhood side; `None` means unrestricted.
    pub m: Option<usize>,
    pub lambda: Option<f64>,
    /// Wall-clock seconds spent solving the row regressions.
    pub learn_seconds: f64,
}

/// Affine map between feature fields stored as sparse rows, one per output
/// component in field storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivariantMap {
    pub in_dims: (usize, usize, usize),
    pub out_dims: (usize, usize, usize),
    pub geometry: Geometry,
    pub rows: Vec<MapRow>,
    pub meta: MapMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    in_dims: (usize, usize, usize),
    out_dims: (usize, usize, usize),
    geometry: Geometry,
    g: Option<[[f64; 3]; 2]>,
    method: MapMethod,
    k: Option<usize>,
    m: Option<usize>,
    lambda: Option<f64>,
    learn_seconds: f64,
    rows: usize,
    nnz: usize,
}

const MAP_MAGIC: &[u8; 4] = b"EQM1";

fn volume(d: (usize, usize, usize)) -> usize {
    d.0 * d.1 * d.2
}

impl EquivariantMap {
    pub fn new(
        in_dims: (usize, usize, usize),
        out_dims: (usize, usize, usize),
        geometry: Geometry,
        rows: Vec<MapRow>,
        meta: MapMeta,
    ) -> Result<Self> {
        if rows.len() != volume(out_dims) {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for output dims {:?}",
                rows.len(),
                out_dims
            )));
        }
        let n_in = volume(in_dims);
        for (i, r) in rows.iter().enumerate() {
            if r.cols.len() != r.coeffs.len() {
                return Err(Error::Format(format!("row {i}: cols/coeffs length mismatch")));
            }
            if let Some(&c) = r.cols.iter().find(|&&c| c as usize >= n_in) {
                return Err(Error::DimensionMismatch(format!("row {i} references input {c} >= {n_in}")));
            }
            if !r.bias.is_finite() || r.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("map row {i}")));
            }
        }
        Ok(Self {
            in_dims,
            out_dims,
            geometry,
            rows,
            meta,
        })
    }

    pub fn identity(dims: (usize, usize, usize), geometry: Geometry) -> Self {
        let rows = (0..volume(dims))
            .map(|i| MapRow {
                cols: vec![i as u32],
                coeffs: vec![1.0],
                bias: 0.0,
            })
            .collect();
        Self {
            in_dims: dims,
            out_dims: dims,
            geometry,
            rows,
            meta: MapMeta::default(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(MapRow::nnz).sum()
    }

    pub fn max_row_nnz(&self) -> usize {
        self.rows.iter().map(MapRow::nnz).max().unwrap_or(0)
    }

    /// `A f + b`.
    pub fn apply(&self, f: &FeatureField) -> Result<FeatureField> {
        if f.dims() != self.in_dims {
            return Err(Error::DimensionMismatch(format!(
                "map expects {:?}, field is {:?}",
                self.in_dims,
                f.dims()
            )));
        }
        let data = self.rows.iter().map(|r| r.eval(f.data())).collect();
        let (w, h, d) = self.out_dims;
        FeatureField::from_data(w, h, d, data, self.geometry)
    }

    /// `Aᵀ w` (the bias contributes the separate constant [`Self::bias_dot`]).
    pub fn adjoint(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.rows.len() {
            return Err(Error::DimensionMismatch(format!(
                "adjoint input has {} values, map has {} rows",
                w.len(),
                self.rows.len()
            )));
        }
        let mut out = vec![0.0; volume(self.in_dims)];
        for (r, &wr) in self.rows.iter().zip(w) {
            if wr == 0.0 {
                continue;
            }
            for (&c, &a) in r.cols.iter().zip(&r.coeffs) {
                out[c as usize] += a * wr;
            }
        }
        Ok(out)
    }

    /// `⟨w, b⟩`.
    pub fn bias_dot(&self, w: &[f64]) -> f64 {
        self.rows.iter().zip(w).map(|(r, x)| r.bias * x).sum()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &EquivariantMap) -> Result<EquivariantMap> {
        if inner.out_dims != self.in_dims {
            return Err(Error::DimensionMismatch("composition dims".into()));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut acc: std::collections::BTreeMap<u32, f64> = Default::default();
                let mut bias = r.bias;
                for (&c, &a) in r.cols.iter().zip(&r.coeffs) {
                    let ir = &inner.rows[c as usize];
                    bias += a * ir.bias;
                    for (&ic, &ia) in ir.cols.iter().zip(&ir.coeffs) {
                        *acc.entry(ic).or_insert(0.0) += a * ia;
                    }
                }
                let (cols, coeffs) = acc.into_iter().unzip();
                MapRow { cols, coeffs, bias }
            })
            .collect();
        EquivariantMap::new(inner.in_dims, self.out_dims, self.geometry, rows, self.meta.clone())
    }

    /// Serialises as magic `EQM1`, a little-endian `u32` header length, the
    /// JSON header, a `u64` triplet count, `(row u32, col u32, coeff f64)`
    /// triplets and finally one `f64` bias per row.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let nnz: usize = self.rows.iter().map(|r| r.cols.len()).sum();
        let header = Header {
            in_dims: self.in_dims,
            out_dims: self.out_dims,
            geometry: self.geometry,
            g: self.meta.transform.map(|g| g.matrix),
            method: self.meta.method,
            k: self.meta.k,
            m: self.meta.m,
            lambda: self.meta.lambda,
            learn_seconds: self.meta.learn_seconds,
            rows: self.rows.len(),
            nnz,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAP_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&(nnz as u64).to_le_bytes())?;
        for (i, r) in self.rows.iter().enumerate() {
            for (&c, &a) in r.cols.iter().zip(&r.coeffs) {
                w.write_all(&(i as u32).to_le_bytes())?;
                w.write_all(&c.to_le_bytes())?;
                w.write_all(&a.to_le_bytes())?;
            }
        }
        for r in &self.rows {
            w.write_all(&r.bias.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAP_MAGIC {
            return Err(Error::Format("bad map magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let mut json = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let nnz = u64::from_le_bytes(b8) as usize;
        if nnz != header.nnz {
            return Err(Error::Format("triplet count disagrees with header".into()));
        }
        let mut rows = vec![MapRow::default(); header.rows];
        let mut trip = [0u8; 16];
        let mut last = 0usize;
        for _ in 0..nnz {
            r.read_exact(&mut trip)?;
            let row = u32::from_le_bytes(trip[0..4].try_into().expect("4")) as usize;
            let col = u32::from_le_bytes(trip[4..8].try_into().expect("4"));
            let coeff = f64::from_le_bytes(trip[8..16].try_into().expect("8"));
            if row >= rows.len() || row < last {
                return Err(Error::Format(format!("triplet row {row} out of order or range")));
            }
            last = row;
            rows[row].cols.push(col);
            rows[row].coeffs.push(coeff);
        }
        for row in &mut rows {
            r.read_exact(&mut b8)?;
            row.bias = f64::from_le_bytes(b8);
        }
        let meta = MapMeta {
            transform: header.g.map(GeometricTransform::new).transpose()?,
            method: header.method,
            k: header.k,
            m: header.m,
            lambda: header.lambda,
            learn_seconds: header.learn_seconds,
        };
        Self::new(header.in_dims, header.out_dims, header.geometry, rows, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_map(seed: u64) -> EquivariantMap {
        let dims = (2, 2, 2);
        let rows = (0..8u64)
            .map(|i| {
                let s = seed.wrapping_mul(31).wrapping_add(i);
                let cols: Vec<u32> = (0..(s % 3)).map(|j| ((s + j * 3) % 8) as u32).collect();
                let coeffs = cols.iter().enumerate().map(|(j, _)| (s % 97) as f64 / 7.0 - j as f64).collect();
                MapRow { cols, coeffs, bias: (s % 13) as f64 * 0.25 }
            })
            .collect();
        EquivariantMap::new(dims, dims, Geometry::new(8.0, 3.5), rows, MapMeta {
            transform: Some(GeometricTransform::hflip(16)),
            method: MapMethod::Fs,
            k: Some(2),
            m: Some(3),
            lambda: None,
            learn_seconds: 0.5,
        })
        .unwrap()
    }

    #[test]
    fn identity_apply() {
        let f = FeatureField::from_data(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0], Geometry::PIXELS).unwrap();
        let m = EquivariantMap::identity(f.dims(), f.geometry);
        assert_eq!(m.apply(&f).unwrap(), f);
    }

    #[test]
    fn rejects_bad_rows() {
        let rows = vec![MapRow { cols: vec![9], coeffs: vec![1.0], bias: 0.0 }];
        assert!(EquivariantMap::new((1, 1, 1), (1, 1, 1), Geometry::PIXELS, rows, MapMeta::default()).is_err());
        let rows = vec![MapRow { cols: vec![0], coeffs: vec![f64::NAN], bias: 0.0 }];
        assert!(EquivariantMap::new((1, 1, 1), (1, 1, 1), Geometry::PIXELS, rows, MapMeta::default()).is_err());
    }

    proptest! {
        #[test]
        fn serialisation_round_trip(seed in any::<u64>()) {
            let m = small_map(seed);
            let mut buf = Vec::new();
            m.write_to(&mut buf).unwrap();
            prop_assert_eq!(EquivariantMap::read_from(&mut &buf[..]).unwrap(), m);
        }

        #[test]
        fn adjoint_identity(seed in any::<u64>(), w in proptest::collection::vec(-5.0f64..5.0, 8), f in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let m = small_map(seed);
            let field = FeatureField::from_data(2, 2, 2, f.clone(), Geometry::PIXELS).unwrap();
            let lhs: f64 = m.adjoint(&w).unwrap().iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + m.bias_dot(&w);
            let rhs = m.apply(&field).unwrap().dot(&w);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
