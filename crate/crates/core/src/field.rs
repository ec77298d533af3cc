//! `H×W×D` feature fields with receptive-field geometry, and the `EQF1`
//! binary format.
//!
//! Sites are addressed as `(u, v)` with `u` the horizontal index (`0..width`)
//! and `v` the vertical index (`0..height`). Storage order is `u` outermost,
//! then `v`, then channel `t`: `index = (u * height + v) * depth + t`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"EQF1";

/// Isotropic affine map `p(u, v) = (stride·u + offset, stride·v + offset)`
/// from feature sites to receptive-field centres in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub stride: f64,
    pub offset: f64,
}

impl Geometry {
    pub const PIXELS: Geometry = Geometry { stride: 1.0, offset: 0.0 };

    pub fn new(stride: f64, offset: f64) -> Self {
        Self { stride, offset }
    }

    #[inline]
    pub fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        (self.stride * u + self.offset, self.stride * v + self.offset)
    }

    #[inline]
    pub fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.offset) / self.stride, (y - self.offset) / self.stride)
    }

    /// Geometry of a layer that reads this field with a window of `kernel`
    /// sites, `stride` and `pad`: output site `u` is centred on input site
    /// `stride·u − pad + (kernel−1)/2`.
    pub fn then_window(&self, kernel: usize, stride: usize, pad: usize) -> Geometry {
        let shift = (kernel as f64 - 1.0) / 2.0 - pad as f64;
        Geometry {
            stride: self.stride * stride as f64,
            offset: self.offset + self.stride * shift,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureField {
    width: usize,
    height: usize,
    depth: usize,
    data: Vec<f64>,
    pub geometry: Geometry,
}

impl FeatureField {
    pub fn zeros(width: usize, height: usize, depth: usize, geometry: Geometry) -> Self {
        Self {
            width,
            height,
            depth,
            data: vec![0.0; width * height * depth],
            geometry,
        }
    }

    pub fn from_data(
        width: usize,
        height: usize,
        depth: usize,
        data: Vec<f64>,
        geometry: Geometry,
    ) -> Result<Self> {
        if data.len() != width * height * depth {
            return Err(Error::DimensionMismatch(format!(
                "field data has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                depth
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            data,
            geometry,
        })
    }

    /// Grey or colour image as a `width×height×channels` field on the pixel lattice.
    pub fn from_image(img: &crate::Image) -> Self {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut f = Self::zeros(w, h, c, Geometry::PIXELS);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    f.set(x, y, ch, img.get(x, y, ch));
                }
            }
        }
        f
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `(width, height, depth)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.depth)
    }

    pub fn num_sites(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn site_index(&self, u: usize, v: usize) -> usize {
        u * self.height + v
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, t: usize) -> usize {
        (u * self.height + v) * self.depth + t
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, t: usize) -> f64 {
        self.data[self.index(u, v, t)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, t: usize, value: f64) {
        let i = self.index(u, v, t);
        self.data[i] = value;
    }

    /// The `depth` channels at site `(u, v)`.
    #[inline]
    pub fn cell(&self, u: usize, v: usize) -> &[f64] {
        let s = self.site_index(u, v) * self.depth;
        &self.data[s..s + self.depth]
    }

    #[inline]
    pub fn cell_mut(&mut self, u: usize, v: usize) -> &mut [f64] {
        let s = self.site_index(u, v) * self.depth;
        let d = self.depth;
        &mut self.data[s..s + d]
    }

    pub fn same_dims(&self, other: &FeatureField) -> bool {
        self.dims() == other.dims()
    }

    pub fn max_abs_diff(&self, other: &FeatureField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.data.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// Serialises as `EQF1`: magic, `H`, `W`, `D` as little-endian `u32`,
    /// stride and offset as little-endian `f64`, then `H·W·D` `f64` values in
    /// storage order.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        for n in [self.height, self.width, self.depth] {
            let n = u32::try_from(n).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            w.write_all(&n.to_le_bytes())?;
        }
        w.write_all(&self.geometry.stride.to_le_bytes())?;
        w.write_all(&self.geometry.offset.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format(format!("bad field magic {magic:?}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [height, width, depth] = dims;
        let stride = read_f64(r)?;
        let offset = read_f64(r)?;
        let n = height
            .checked_mul(width)
            .and_then(|x| x.checked_mul(depth))
            .ok_or_else(|| Error::Format("field too large".into()))?;
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_data(width, height, depth, data, Geometry { stride, offset })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let f = FeatureField::zeros(3, 2, 4, Geometry::new(8.0, 3.5));
        let b = f.to_bytes();
        assert_eq!(&b[..4], b"EQF1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 2); // H
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3); // W
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 4); // D
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 8.0);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 3.5);
        assert_eq!(b.len(), 32 + 3 * 2 * 4 * 8);
    }

    #[test]
    fn v_is_fastest_spatial_index() {
        let mut f = FeatureField::zeros(2, 3, 1, Geometry::PIXELS);
        f.set(0, 1, 0, 7.0);
        assert_eq!(f.data()[1], 7.0);
        f.set(1, 0, 0, 9.0);
        assert_eq!(f.data()[3], 9.0);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let f = FeatureField::zeros(2, 2, 2, Geometry::PIXELS);
        let b = f.to_bytes();
        assert!(FeatureField::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(FeatureField::from_bytes(&bad).is_err());
    }

    #[test]
    fn window_geometry() {
        // 5x5 conv, stride 2, pad 2 on pixels: site u centred on pixel 2u
        let g = Geometry::PIXELS.then_window(5, 2, 2);
        assert_eq!(g, Geometry::new(2.0, 0.0));
        // 2x2 pool, stride 2 on top: centred between 2u·2 and 2u·2+2
        assert_eq!(g.then_window(2, 2, 0), Geometry::new(4.0, 1.0));
    }

    proptest! {
        #[test]
        fn eqf1_round_trip(w in 1usize..5, h in 1usize..5, d in 1usize..4, seed in any::<u64>(), stride in 0.5f64..16.0) {
            let data: Vec<f64> = (0..w * h * d).map(|i| ((seed.wrapping_add(i as u64 * 2654435761)) % 10007) as f64 / 37.0 - 100.0).collect();
            let f = FeatureField::from_data(w, h, d, data, Geometry::new(stride, -1.25)).unwrap();
            prop_assert_eq!(FeatureField::from_bytes(&f.to_bytes()).unwrap(), f);
        }
    }
}
