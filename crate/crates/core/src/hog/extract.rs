use serde::{Deserialize, Serialize};

use crate::equilearn::FeatureExtractor;
use crate::field::{FeatureField, Geometry};
use crate::imaging::Image;
use crate::{Error, Result};

/// Per-block clamp on normalised histogram values.
pub const CLAMP: f64 = 0.2;
/// Added to block energies before taking the inverse square root.
pub const EPSILON: f64 = 1e-10;

const TEXTURE_GAIN: f64 = 0.2357;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogConfig {
    pub cell_size: usize,
    /// Number `K` of contrast-insensitive orientations; `2K` sensitive ones.
    pub num_orientations: usize,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            num_orientations: 9,
        }
    }
}

impl HogConfig {
    /// `3K + 4` channels: `2K` sensitive, `K` insensitive, 4 texture.
    pub fn depth(&self) -> usize {
        3 * self.num_orientations + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 2 || self.num_orientations < 2 {
            return Err(Error::InvalidInput(format!(
                "HOG needs cell_size >= 2 and K >= 2, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Receptive-field geometry: cell `u` covers pixels `[s·u, s·u+s)`.
    pub fn geometry(&self) -> Geometry {
        let s = self.cell_size as f64;
        Geometry::new(s, (s - 1.0) / 2.0)
    }

    /// Upper bound of channel `t` implied by the clamp.
    pub fn channel_ceiling(&self, t: usize) -> f64 {
        if t < 3 * self.num_orientations {
            0.5 * 4.0 * CLAMP
        } else {
            TEXTURE_GAIN * 2.0 * self.num_orientations as f64 * CLAMP
        }
    }

    pub fn grid_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (width / self.cell_size, height / self.cell_size)
    }
}

/// HOG as a [`FeatureExtractor`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogExtractor {
    pub config: HogConfig,
}

impl HogExtractor {
    pub fn new(config: HogConfig) -> Self {
        Self { config }
    }
}

impl FeatureExtractor for HogExtractor {
    fn extract(&self, img: &Image) -> Result<FeatureField> {
        extract_hog(img, &self.config)
    }

    fn name(&self) -> String {
        format!("hog{}x{}", self.config.cell_size, self.config.depth())
    }
}

/// Computes the HOG field of `x`.
///
/// Images whose sides are not multiples of the cell size are cropped to the
/// largest such top-left region; the returned geometry is unaffected by the
/// crop since it anchors at the top-left pixel.
pub fn extract_hog(x: &Image, cfg: &HogConfig) -> Result<FeatureField> {
    cfg.validate()?;
    let cs = cfg.cell_size;
    if x.width() < cs || x.height() < cs {
        return Err(Error::ImageTooSmall {
            width: x.width(),
            height: x.height(),
            cell: cs,
        });
    }
    let (cw, ch) = cfg.grid_dims(x.width(), x.height());
    let (w, h) = (cw * cs, ch * cs);
    let img;
    let x = if (w, h) != (x.width(), x.height()) {
        img = x.crop(w, h)?;
        &img
    } else {
        x
    };

    let k = cfg.num_orientations;
    let nbins = 2 * k;
    let hist = cell_histograms(x, cs, cw, ch, nbins);

    // contrast-insensitive energy per cell
    let energy: Vec<f64> = hist
        .chunks_exact(nbins)
        .map(|h| (0..k).map(|o| (h[o] + h[o + k]).powi(2)).sum())
        .collect();
    let e_at = |u: isize, v: isize| {
        let u = u.clamp(0, cw as isize - 1) as usize;
        let v = v.clamp(0, ch as isize - 1) as usize;
        energy[u * ch + v]
    };

    let depth = cfg.depth();
    let mut out = FeatureField::zeros(cw, ch, depth, cfg.geometry());
    let mut ins = vec![0.0; k];
    for u in 0..cw {
        for v in 0..ch {
            let (ui, vi) = (u as isize, v as isize);
            // quadrant j = 2·(down) + (right); blocks extend with replicated cells
            let mut norms = [0.0; 4];
            for (j, n) in norms.iter_mut().enumerate() {
                let du = if j & 1 == 0 { -1 } else { 1 };
                let dv = if j & 2 == 0 { -1 } else { 1 };
                let e = e_at(ui, vi) + e_at(ui + du, vi) + e_at(ui, vi + dv) + e_at(ui + du, vi + dv);
                *n = 1.0 / (e + EPSILON).sqrt();
            }
            let h = &hist[(u * ch + v) * nbins..(u * ch + v + 1) * nbins];
            for o in 0..k {
                ins[o] = h[o] + h[o + k];
            }
            let cell = out.cell_mut(u, v);
            let mut texture = [0.0; 4];
            for (o, &hv) in h.iter().enumerate() {
                let mut acc = 0.0;
                for (j, &n) in norms.iter().enumerate() {
                    let c = (hv * n).min(CLAMP);
                    acc += c;
                    texture[j] += c;
                }
                cell[o] = 0.5 * acc;
            }
            for (o, &iv) in ins.iter().enumerate() {
                let acc: f64 = norms.iter().map(|&n| (iv * n).min(CLAMP)).sum();
                cell[nbins + o] = 0.5 * acc;
            }
            for j in 0..4 {
                cell[3 * k + j] = TEXTURE_GAIN * texture[j];
            }
        }
    }
    Ok(out)
}

/// Per-pixel gradients by central differences (replicated borders); colour
/// images keep the channel of largest gradient magnitude.
pub(crate) fn gradients(x: &Image) -> Vec<(f64, f64)> {
    let (w, h, c) = (x.width(), x.height(), x.channels());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for xx in 0..w {
            let (xm, xp) = (xx.saturating_sub(1), (xx + 1).min(w - 1));
            let mut best = (0.0, 0.0);
            let mut best_mag = -1.0;
            for ch in 0..c {
                let gx = x.get(xp, y, ch) - x.get(xm, y, ch);
                let gy = x.get(xx, yp, ch) - x.get(xx, ym, ch);
                let m = gx * gx + gy * gy;
                if m > best_mag {
                    best_mag = m;
                    best = (gx, gy);
                }
            }
            out.push(best);
        }
    }
    out
}

/// Fractional orientation bin position in `[0, 2K)` of gradient `(gx, gy)`;
/// bin `o` is centred on angle `o·π/K`.
#[inline]
pub(crate) fn orientation_position(gx: f64, gy: f64, k: usize) -> f64 {
    let mut theta = gy.atan2(gx);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    let a = theta * k as f64 / std::f64::consts::PI;
    if a >= 2.0 * k as f64 {
        a - 2.0 * k as f64
    } else {
        a
    }
}

/// Bilinear spatial and orientation binning into `cw × ch` cells of `nbins`
/// sensitive orientations, laid out `(u·ch + v)·nbins + o`.
fn cell_histograms(x: &Image, cs: usize, cw: usize, ch: usize, nbins: usize) -> Vec<f64> {
    let k = nbins / 2;
    let (w, h) = (x.width(), x.height());
    let grads = gradients(x);
    let mut hist = vec![0.0; cw * ch * nbins];
    let csf = cs as f64;
    // cell coordinate of a pixel centre and its two neighbouring cells
    let spatial = |p: usize, n: usize| -> [(usize, f64); 2] {
        let c = (p as f64 + 0.5) / csf - 0.5;
        let c0 = c.floor();
        let f = c - c0;
        let c0i = c0 as isize;
        let lo = if c0i >= 0 { (c0i as usize, 1.0 - f) } else { (0, 0.0) };
        let hi = if c0i + 1 < n as isize { ((c0i + 1) as usize, f) } else { (0, 0.0) };
        [lo, hi]
    };
    for y in 0..h {
        let ys = spatial(y, ch);
        for xx in 0..w {
            let (gx, gy) = grads[y * w + xx];
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let a = orientation_position(gx, gy, k);
            let b0 = a.floor();
            let wo1 = a - b0;
            let b0 = (b0 as usize) % nbins;
            let b1 = (b0 + 1) % nbins;
            let xs = spatial(xx, cw);
            for &(cu, wx) in &xs {
                if wx == 0.0 {
                    continue;
                }
                for &(cv, wy) in &ys {
                    if wy == 0.0 {
                        continue;
                    }
                    let base = (cu * ch + cv) * nbins;
                    let m = mag * wx * wy;
                    hist[base + b0] += m * (1.0 - wo1);
                    hist[base + b1] += m * wo1;
                }
            }
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_zero_field() {
        let img = Image::filled(64, 64, 1, 0.37).unwrap();
        let f = extract_hog(&img, &HogConfig::default()).unwrap();
        assert_eq!(f.dims(), (8, 8, 31));
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_sizes_are_cropped() {
        let img = Image::filled(70, 45, 1, 0.5).unwrap();
        let f = extract_hog(&img, &HogConfig::default()).unwrap();
        assert_eq!(f.dims(), (8, 5, 31));
        assert_eq!(f.geometry, Geometry::new(8.0, 3.5));
    }

    #[test]
    fn tiny_image_rejected() {
        let img = Image::filled(7, 30, 1, 0.5).unwrap();
        assert!(matches!(
            extract_hog(&img, &HogConfig::default()),
            Err(Error::ImageTooSmall { .. })
        ));
        let bad = HogConfig { cell_size: 1, num_orientations: 9 };
        assert!(extract_hog(&Image::filled(8, 8, 1, 0.0).unwrap(), &bad).is_err());
    }

    #[test]
    fn colour_uses_strongest_channel() {
        let img = Image::from_data(
            3,
            1,
            3,
            vec![0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.2],
        )
        .unwrap();
        let g = gradients(&img);
        assert_eq!(g[1], (1.0, 0.0));
    }

    #[test]
    fn orientation_positions() {
        assert_eq!(orientation_position(1.0, 0.0, 9), 0.0);
        assert!((orientation_position(0.0, 1.0, 9) - 4.5).abs() < 1e-12);
        assert!((orientation_position(-1.0, 0.0, 9) - 9.0).abs() < 1e-12);
        assert!((orientation_position(0.0, -1.0, 9) - 13.5).abs() < 1e-12);
    }
}
