use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MIN_DET: f64 = 1e-12;

/// Invertible 2D affine map acting on `(x, y)` image-plane coordinates.
///
/// Pixel `(i, j)` (column, row) has its centre at the integer point `(i, j)`.
/// The matrix is stored row-major as `[[a, b, tx], [c, d, ty]]`, so a point
/// maps to `(a x + b y + tx, c x + d y + ty)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricTransform {
    pub matrix: [[f64; 3]; 2],
}

impl GeometricTransform {
    pub fn new(matrix: [[f64; 3]; 2]) -> Result<Self> {
        let g = Self { matrix };
        if !matrix.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("affine matrix".into()));
        }
        if g.det().abs() <= MIN_DET {
            return Err(Error::NonInvertible(g.det()));
        }
        Ok(g)
    }

    pub const fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self {
            matrix: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    /// Linear map `[[a, b], [c, d]]` applied about the point `(cx, cy)`.
    pub fn linear_about(a: f64, b: f64, c: f64, d: f64, cx: f64, cy: f64) -> Result<Self> {
        let tx = cx - (a * cx + b * cy);
        let ty = cy - (c * cx + d * cy);
        Self::new([[a, b, tx], [c, d, ty]])
    }

    /// Rotation by `degrees` about `(cx, cy)`; multiples of 90° use exact
    /// sines and cosines so that the result is lattice-exact.
    pub fn rotation_about(degrees: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = exact_sin_cos(degrees);
        Self::linear_about(c, -s, s, c, cx, cy).expect("rotations are invertible")
    }

    pub fn scaling_about(sx: f64, sy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::linear_about(sx, 0.0, 0.0, sy, cx, cy)
    }

    /// Rotation about the centre of a `width × height` image.
    pub fn rotation_centered(degrees: f64, width: usize, height: usize) -> Self {
        let (cx, cy) = image_center(width, height);
        Self::rotation_about(degrees, cx, cy)
    }

    /// Mirror about the vertical axis through the image centre: `x ↦ width-1-x`.
    pub fn hflip(width: usize) -> Self {
        Self {
            matrix: [[-1.0, 0.0, width as f64 - 1.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Mirror about the horizontal axis through the image centre: `y ↦ height-1-y`.
    pub fn vflip(height: usize) -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, -1.0, height as f64 - 1.0]],
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let m = &self.matrix;
        (
            m[0][0] * p.0 + m[0][1] * p.1 + m[0][2],
            m[1][0] * p.0 + m[1][1] * p.1 + m[1][2],
        )
    }

    /// Applies only the linear part (for direction vectors).
    pub fn apply_linear(&self, v: (f64, f64)) -> (f64, f64) {
        let m = &self.matrix;
        (m[0][0] * v.0 + m[0][1] * v.1, m[1][0] * v.0 + m[1][1] * v.1)
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &GeometricTransform) -> GeometricTransform {
        let a = &self.matrix;
        let b = &inner.matrix;
        let mut out = [[0.0; 3]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            row[0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            row[1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            row[2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        GeometricTransform { matrix: out }
    }

    pub fn inverse(&self) -> Result<GeometricTransform> {
        let det = self.det();
        if det.abs() <= MIN_DET || !det.is_finite() {
            return Err(Error::NonInvertible(det));
        }
        let m = &self.matrix;
        let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
        // Unit-determinant maps (rotations, flips) avoid the division so that
        // lattice-exact transforms stay exact.
        let (ia, ib, ic, id) = if det == 1.0 {
            (d, -b, -c, a)
        } else if det == -1.0 {
            (-d, b, c, -a)
        } else {
            (d / det, -b / det, -c / det, a / det)
        };
        let tx = -(ia * m[0][2] + ib * m[1][2]);
        let ty = -(ic * m[0][2] + id * m[1][2]);
        Ok(GeometricTransform {
            matrix: [[ia, ib, tx], [ic, id, ty]],
        })
    }

    /// Rotation angle (degrees in `[0, 360)`) of the linear part, read from its
    /// first column.
    pub fn angle_degrees(&self) -> f64 {
        let m = &self.matrix;
        let a = m[1][0].atan2(m[0][0]).to_degrees();
        let a = a.rem_euclid(360.0);
        if a >= 360.0 {
            0.0
        } else {
            a
        }
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().flatten().all(|v| v.is_finite())
    }
}

impl Default for GeometricTransform {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn transform_point(g: &GeometricTransform, p: (f64, f64)) -> (f64, f64) {
    g.apply(p)
}

pub(crate) fn image_center(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let r = degrees.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Named transformation resolved against concrete image dimensions.
///
/// Textual forms: `id`, `hflip`, `vflip`, `rot:<deg>`, `rot180`, `rot90`,
/// `scale:<s>`, `affine:a,b,tx,c,d,ty`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformSpec {
    Identity,
    HFlip,
    VFlip,
    Rotation(f64),
    Scale(f64),
    Affine([[f64; 3]; 2]),
}

impl TransformSpec {
    /// The transform about the centre of a `width × height` image.
    pub fn resolve(&self, width: usize, height: usize) -> Result<GeometricTransform> {
        let (cx, cy) = image_center(width, height);
        match *self {
            TransformSpec::Identity => Ok(GeometricTransform::identity()),
            TransformSpec::HFlip => Ok(GeometricTransform::hflip(width)),
            TransformSpec::VFlip => Ok(GeometricTransform::vflip(height)),
            TransformSpec::Rotation(deg) => Ok(GeometricTransform::rotation_about(deg, cx, cy)),
            TransformSpec::Scale(s) => GeometricTransform::scaling_about(s, s, cx, cy),
            TransformSpec::Affine(m) => GeometricTransform::new(m),
        }
    }

    /// Short label used in file names and reports.
    pub fn tag(&self) -> String {
        match *self {
            TransformSpec::Identity => "id".into(),
            TransformSpec::HFlip => "hflip".into(),
            TransformSpec::VFlip => "vflip".into(),
            TransformSpec::Rotation(d) => format!("rot{d}"),
            TransformSpec::Scale(s) => format!("scale{s}"),
            TransformSpec::Affine(_) => "affine".into(),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Identity => write!(f, "id"),
            TransformSpec::HFlip => write!(f, "hflip"),
            TransformSpec::VFlip => write!(f, "vflip"),
            TransformSpec::Rotation(d) => write!(f, "rot:{d}"),
            TransformSpec::Scale(s) => write!(f, "scale:{s}"),
            TransformSpec::Affine(m) => write!(
                f,
                "affine:{},{},{},{},{},{}",
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]
            ),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidInput(format!("cannot parse transform '{s}'"));
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s.as_str(), None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(bad)?.trim().parse::<f64>().map_err(|_| bad())
        };
        match head {
            "id" | "identity" => Ok(TransformSpec::Identity),
            "hflip" => Ok(TransformSpec::HFlip),
            "vflip" => Ok(TransformSpec::VFlip),
            "rot90" => Ok(TransformSpec::Rotation(90.0)),
            "rot180" => Ok(TransformSpec::Rotation(180.0)),
            "rot270" => Ok(TransformSpec::Rotation(270.0)),
            "rot" => Ok(TransformSpec::Rotation(num(arg)?)),
            "scale" => Ok(TransformSpec::Scale(num(arg)?)),
            "affine" => {
                let vals: Vec<f64> = arg
                    .ok_or_else(bad)?
                    .split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                if vals.len() != 6 {
                    return Err(bad());
                }
                Ok(TransformSpec::Affine([
                    [vals[0], vals[1], vals[2]],
                    [vals[3], vals[4], vals[5]],
                ]))
            }
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rot180_about_origin() {
        let g = GeometricTransform::rotation_about(180.0, 0.0, 0.0);
        assert_eq!(g.apply((1.0, 0.0)), (-1.0, 0.0));
    }

    #[test]
    fn hflip_maps_first_column_to_last() {
        let g = GeometricTransform::hflip(64);
        assert_eq!(g.apply((0.0, 5.0)), (63.0, 5.0));
        assert_eq!(TransformSpec::HFlip.resolve(64, 64).unwrap(), g);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let g = GeometricTransform::new([[1.3, 0.4, -2.0], [-0.2, 0.7, 5.5]]).unwrap();
        let h = g.compose(&g.inverse().unwrap());
        for p in [(0.0, 0.0), (10.5, -3.25), (1e3, 7.0)] {
            let q = h.apply(p);
            assert!((q.0 - p.0).abs() < 1e-12 * (1.0 + p.0.abs()));
            assert!((q.1 - p.1).abs() < 1e-12 * (1.0 + p.1.abs()));
        }
    }

    #[test]
    fn rot90_is_lattice_exact() {
        let g = GeometricTransform::rotation_centered(90.0, 64, 64);
        // (x, y) -> (63 - y, x)
        assert_eq!(g.apply((3.0, 10.0)), (53.0, 3.0));
        let inv = g.inverse().unwrap();
        assert_eq!(inv.apply((53.0, 3.0)), (3.0, 10.0));
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(matches!(
            GeometricTransform::new([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]),
            Err(Error::NonInvertible(_))
        ));
    }

    #[test]
    fn parse_specs() {
        assert_eq!("rot:45".parse::<TransformSpec>().unwrap(), TransformSpec::Rotation(45.0));
        assert_eq!("hflip".parse::<TransformSpec>().unwrap(), TransformSpec::HFlip);
        assert!("rot:x".parse::<TransformSpec>().is_err());
        let a: TransformSpec = "affine:1,0,2,0,1,3".parse().unwrap();
        assert_eq!(a.resolve(8, 8).unwrap(), GeometricTransform::translation(2.0, 3.0));
    }

    #[test]
    fn angle_readback() {
        let g = GeometricTransform::rotation_centered(250.0, 32, 32);
        assert!((g.angle_degrees() - 250.0).abs() < 1e-9);
    }
}
