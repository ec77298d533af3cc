use serde::{Deserialize, Serialize};

use super::{GeometricTransform, Image};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Zero,
    #[default]
    Replicate,
}

/// Inverse warp: the output pixel at `q` is sampled from the input at `g⁻¹(q)`.
/// The output has the input's dimensions.
pub fn warp(x: &Image, g: &GeometricTransform, interp: Interpolation, pad: Padding) -> Result<Image> {
    let inv = g.inverse()?;
    let (w, h, c) = (x.width(), x.height(), x.channels());
    let mut data = Vec::with_capacity(w * h * c);
    for qy in 0..h {
        for qx in 0..w {
            let (sx, sy) = inv.apply((qx as f64, qy as f64));
            for ch in 0..c {
                let v = match interp {
                    Interpolation::Nearest => sample(x, sx.round(), sy.round(), ch, pad),
                    Interpolation::Bilinear => bilinear(x, sx, sy, ch, pad),
                };
                data.push(v);
            }
        }
    }
    Image::from_data(w, h, c, data)
}

#[inline]
fn sample(x: &Image, fx: f64, fy: f64, ch: usize, pad: Padding) -> f64 {
    let (w, h) = (x.width() as f64, x.height() as f64);
    match pad {
        Padding::Zero => {
            if fx < 0.0 || fy < 0.0 || fx > w - 1.0 || fy > h - 1.0 {
                0.0
            } else {
                x.get(fx as usize, fy as usize, ch)
            }
        }
        Padding::Replicate => {
            let ix = fx.clamp(0.0, w - 1.0) as usize;
            let iy = fy.clamp(0.0, h - 1.0) as usize;
            x.get(ix, iy, ch)
        }
    }
}

#[inline]
fn bilinear(x: &Image, sx: f64, sy: f64, ch: usize, pad: Padding) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    if fx == 0.0 && fy == 0.0 {
        return sample(x, x0, y0, ch, pad);
    }
    let v00 = sample(x, x0, y0, ch, pad);
    let v10 = sample(x, x0 + 1.0, y0, ch, pad);
    let v01 = sample(x, x0, y0 + 1.0, ch, pad);
    let v11 = sample(x, x0 + 1.0, y0 + 1.0, ch, pad);
    let v = (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 + fx * fy * v11;
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::TransformSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn identity_is_bit_exact() {
        let x = random_image(1, 17, 11);
        for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
            let y = warp(&x, &GeometricTransform::identity(), interp, Padding::Zero).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn hflip_is_an_involution() {
        let x = random_image(2, 64, 64);
        let g = GeometricTransform::hflip(64);
        let y = warp(&warp(&x, &g, Interpolation::Bilinear, Padding::Zero).unwrap(), &g, Interpolation::Bilinear, Padding::Zero).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rot90_moves_pixels_exactly() {
        let x = random_image(3, 64, 64);
        let g = TransformSpec::Rotation(90.0).resolve(64, 64).unwrap();
        let y = warp(&x, &g, Interpolation::Nearest, Padding::Zero).unwrap();
        // row i, column j goes to row j, column 63 - i
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(y.get(63 - i, j, 0), x.get(j, i, 0));
            }
        }
    }

    #[test]
    fn lattice_exact_warps_round_trip() {
        let x = random_image(4, 40, 40);
        let specs = [
            TransformSpec::HFlip,
            TransformSpec::VFlip,
            TransformSpec::Rotation(90.0),
            TransformSpec::Rotation(180.0),
            TransformSpec::Rotation(270.0),
        ];
        for spec in specs {
            let g = spec.resolve(40, 40).unwrap();
            let fwd = warp(&x, &g, Interpolation::Bilinear, Padding::Replicate).unwrap();
            let back = warp(&fwd, &g.inverse().unwrap(), Interpolation::Bilinear, Padding::Replicate).unwrap();
            assert_eq!(x, back, "{spec}");
        }
        let t = GeometricTransform::translation(3.0, -2.0);
        let fwd = warp(&x, &t, Interpolation::Nearest, Padding::Zero).unwrap();
        for y in 0..38 {
            for xx in 3..40 {
                assert_eq!(fwd.get(xx, y, 0), x.get(xx - 3, y + 2, 0));
            }
        }
    }

    #[test]
    fn singular_transform_errors() {
        let x = random_image(5, 4, 4);
        let g = GeometricTransform { matrix: [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]] };
        assert!(warp(&x, &g, Interpolation::Bilinear, Padding::Zero).is_err());
    }

    #[test]
    fn zero_padding_fills_outside() {
        let x = Image::filled(8, 8, 1, 1.0).unwrap();
        let y = warp(&x, &GeometricTransform::translation(2.0, 0.0), Interpolation::Bilinear, Padding::Zero).unwrap();
        assert_eq!(y.get(0, 0, 0), 0.0);
        assert_eq!(y.get(2, 0, 0), 1.0);
        let z = warp(&x, &GeometricTransform::translation(2.0, 0.0), Interpolation::Bilinear, Padding::Replicate).unwrap();
        assert_eq!(z.get(0, 0, 0), 1.0);
    }
}
