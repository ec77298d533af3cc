//! Discrete pose sets and distances between poses.

use serde::{Deserialize, Serialize};

use crate::imaging::synth::pose_keypoints;
use crate::imaging::GeometricTransform;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseFamily {
    Rotation,
    Affine,
}

impl std::str::FromStr for PoseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(PoseFamily::Rotation),
            "affine" => Ok(PoseFamily::Affine),
            _ => Err(Error::InvalidInput(format!("unknown pose family '{s}'"))),
        }
    }
}

impl std::fmt::Display for PoseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoseFamily::Rotation => "rotation",
            PoseFamily::Affine => "affine",
        })
    }
}

/// Linear parts `[[a, b], [c, d]]` of the affine pose set, applied about the
/// image centre. The first entry is the identity.
pub const AFFINE_POSES: [[f64; 4]; 10] = [
    [1.0, 0.0, 0.0, 1.0],
    // rotations by ±20°
    [0.939_692_620_785_908_4, -0.342_020_143_325_668_7, 0.342_020_143_325_668_7, 0.939_692_620_785_908_4],
    [0.939_692_620_785_908_4, 0.342_020_143_325_668_7, -0.342_020_143_325_668_7, 0.939_692_620_785_908_4],
    // isotropic scalings
    [0.85, 0.0, 0.0, 0.85],
    [1.15, 0.0, 0.0, 1.15],
    // horizontal shears
    [1.0, 0.25, 0.0, 1.0],
    [1.0, -0.25, 0.0, 1.0],
    // anisotropic scalings
    [1.15, 0.0, 0.0, 0.87],
    [0.87, 0.0, 0.0, 1.15],
    // vertical shear composed with a 15° rotation
    [0.965_925_826_289_068_3, -0.258_819_045_102_520_74, 0.403_707_919_045_881, 0.927_102_969_523_690_2],
];

/// Rotations every 10° (36 poses), or the ten fixed affine poses, about the
/// centre of a `size × size` image.
pub fn build_pose_set(family: PoseFamily, size: usize) -> Vec<GeometricTransform> {
    let c = (size as f64 - 1.0) / 2.0;
    match family {
        PoseFamily::Rotation => (0..36)
            .map(|i| GeometricTransform::rotation_centered(10.0 * i as f64, size, size))
            .collect(),
        PoseFamily::Affine => AFFINE_POSES
            .iter()
            .map(|&[a, b, cc, d]| GeometricTransform::linear_about(a, b, cc, d, c, c).expect("invertible pose"))
            .collect(),
    }
}

/// `|a − b|` on the circle, in `[0, 180]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Mean distance of the canonical keypoints mapped by `a` and `b`, divided by
/// the template size.
pub fn keypoint_distance(a: &GeometricTransform, b: &GeometricTransform, size: usize) -> f64 {
    let kp = pose_keypoints(size);
    kp.iter()
        .map(|&p| {
            let (x1, y1) = a.apply(p);
            let (x2, y2) = b.apply(p);
            ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt()
        })
        .sum::<f64>()
        / (kp.len() as f64 * size as f64)
}

/// Residual error statistic of a predicted pose: degrees for rotations,
/// normalised keypoint distance for affine poses.
pub fn pose_error(family: PoseFamily, predicted: &GeometricTransform, truth: &GeometricTransform, size: usize) -> f64 {
    match family {
        PoseFamily::Rotation => circular_distance(predicted.angle_degrees(), truth.angle_degrees()),
        PoseFamily::Affine => keypoint_distance(predicted, truth, size),
    }
}

/// Pose loss in `[0, 1]`-ish units used for margin rescaling.
pub fn pose_loss(family: PoseFamily, a: &GeometricTransform, b: &GeometricTransform, size: usize) -> f64 {
    match family {
        PoseFamily::Rotation => pose_error(family, a, b, size) / 180.0,
        PoseFamily::Affine => pose_error(family, a, b, size),
    }
}

/// Index of the pose in `set` nearest to `g` (lowest index on ties).
pub fn nearest_pose(family: PoseFamily, set: &[GeometricTransform], g: &GeometricTransform, size: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in set.iter().enumerate() {
        let d = pose_error(family, p, g, size);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Constant-prediction baseline: the median angle for rotations, the medoid
/// pose under keypoint distance for affine poses.
pub fn median_pose(family: PoseFamily, poses: &[GeometricTransform], size: usize) -> Result<GeometricTransform> {
    if poses.is_empty() {
        return Err(Error::InvalidInput("no poses".into()));
    }
    match family {
        PoseFamily::Rotation => {
            let mut angles: Vec<f64> = poses.iter().map(|g| g.angle_degrees()).collect();
            angles.sort_by(f64::total_cmp);
            let n = angles.len();
            let median = if n % 2 == 1 { angles[n / 2] } else { 0.5 * (angles[n / 2 - 1] + angles[n / 2]) };
            Ok(GeometricTransform::rotation_centered(median, size, size))
        }
        PoseFamily::Affine => {
            let cost = |a: &GeometricTransform| poses.iter().map(|b| keypoint_distance(a, b, size)).sum::<f64>();
            let mut best = poses[0];
            let mut best_c = cost(&best);
            for p in &poses[1..] {
                let c = cost(p);
                if c < best_c {
                    best = *p;
                    best_c = c;
                }
            }
            Ok(best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_set() {
        let g = build_pose_set(PoseFamily::Rotation, 120);
        assert_eq!(g.len(), 36);
        for (i, p) in g.iter().enumerate() {
            assert!((p.angle_degrees() - 10.0 * i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_in_both_and_invertible() {
        for fam in [PoseFamily::Rotation, PoseFamily::Affine] {
            let g = build_pose_set(fam, 120);
            assert_eq!(g[0], GeometricTransform::identity());
            assert!(g.iter().all(|p| p.inverse().is_ok()));
        }
        assert_eq!(build_pose_set(PoseFamily::Affine, 64).len(), 10);
    }

    #[test]
    fn affine_constants() {
        let r = 20f64.to_radians();
        assert!((AFFINE_POSES[1][0] - r.cos()).abs() < 1e-15);
        assert!((AFFINE_POSES[1][2] - r.sin()).abs() < 1e-15);
        let r = 15f64.to_radians();
        // [[1,0],[0.15,1]] · [[c,-s],[s,c]]
        let m = [r.cos(), -r.sin(), 0.15 * r.cos() + r.sin(), -0.15 * r.sin() + r.cos()];
        for (a, b) in AFFINE_POSES[9].iter().zip(m) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn circular() {
        assert_eq!(circular_distance(350.0, 10.0), 20.0);
        assert_eq!(circular_distance(0.0, 180.0), 180.0);
    }

    #[test]
    fn uniform_baseline_is_ninety_degrees() {
        let poses: Vec<GeometricTransform> =
            (0..3600).map(|i| GeometricTransform::rotation_centered(i as f64 * 0.1, 64, 64)).collect();
        let m = median_pose(PoseFamily::Rotation, &poses, 64).unwrap();
        let mean = poses.iter().map(|p| pose_error(PoseFamily::Rotation, &m, p, 64)).sum::<f64>() / poses.len() as f64;
        assert!((mean - 90.0).abs() < 0.5, "{mean}");
    }
}
