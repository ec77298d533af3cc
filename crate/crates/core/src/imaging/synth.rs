//! Deterministic synthetic datasets.
//!
//! Three generators cover the experiments: shape-motif classification sets,
//! generic cluttered images used to learn equivariant maps, and pose sets
//! made by warping one asymmetric face-like template.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{warp, GeometricTransform, Image, Interpolation, Label, LabeledDataset, LabeledItem, Padding, Split};
use crate::structreg::{build_pose_set, PoseFamily};
use crate::Result;

/// Classification motifs. Each is mirror-symmetric about its vertical axis;
/// vertical flips swap 0↔1, 2↔3, 4↔5 and quarter turns swap 6↔7.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motif {
    TriangleUp,
    TriangleDown,
    Tee,
    InvertedTee,
    Arch,
    Cup,
    HorizontalStripes,
    VerticalStripes,
}

impl Motif {
    pub const ALL: [Motif; 8] = [
        Motif::TriangleUp,
        Motif::TriangleDown,
        Motif::Tee,
        Motif::InvertedTee,
        Motif::Arch,
        Motif::Cup,
        Motif::HorizontalStripes,
        Motif::VerticalStripes,
    ];

    /// Membership test in the motif frame (`[-1, 1]²`, y pointing down).
    pub fn contains(self, x: f64, y: f64) -> bool {
        match self {
            Motif::TriangleUp => triangle_up(x, y),
            Motif::TriangleDown => triangle_up(x, -y),
            Motif::Tee => tee(x, y),
            Motif::InvertedTee => tee(x, -y),
            Motif::Arch => arch(x, y),
            Motif::Cup => arch(x, -y),
            Motif::HorizontalStripes => x * x + y * y <= 0.72 && (((y + 1.0) / 0.4).floor() as i64) % 2 == 0,
            Motif::VerticalStripes => x * x + y * y <= 0.72 && (((x + 1.0) / 0.4).floor() as i64) % 2 == 0,
        }
    }
}

fn triangle_up(x: f64, y: f64) -> bool {
    // apex (0, -0.8), base y = 0.65 from x = -0.8 to 0.8
    if !(-0.8..=0.65).contains(&y) {
        return false;
    }
    let half = 0.8 * (y + 0.8) / 1.45;
    x.abs() <= half
}

fn tee(x: f64, y: f64) -> bool {
    let bar = (-0.75..=-0.4).contains(&y) && x.abs() <= 0.78;
    let stem = (-0.4..=0.78).contains(&y) && x.abs() <= 0.17;
    bar || stem
}

fn arch(x: f64, y: f64) -> bool {
    let r = (x * x + y * y).sqrt();
    let bow = y <= 0.0 && (0.42..=0.75).contains(&r);
    let legs = y > 0.0 && y <= 0.72 && (0.42..=0.75).contains(&x.abs());
    bow || legs
}

/// Appearance parameters for [`synth_classification_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSetSpec {
    pub size: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub background: (f64, f64),
    pub foreground: (f64, f64),
    /// Motif half-extent as a fraction of the image size.
    pub scale: (f64, f64),
    /// Maximum centre offset as a fraction of the image size.
    pub jitter: f64,
    /// Maximum in-plane tilt of the motif, degrees.
    pub tilt: f64,
}

impl Default for ClassSetSpec {
    fn default() -> Self {
        Self {
            size: 32,
            noise: 0.03,
            background: (0.0, 0.3),
            foreground: (0.6, 1.0),
            scale: (0.28, 0.4),
            jitter: 0.08,
            tilt: 8.0,
        }
    }
}

fn rng_for(seed: u64, split: Split, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(split.stream());
    rng
}

/// Default-appearance training split; item `i` has class `i mod num_classes`.
pub fn synth_classification_set(seed: u64, n: usize, num_classes: usize) -> Result<LabeledDataset> {
    synth_classification_with(&ClassSetSpec::default(), seed, Split::Train, n, num_classes)
}

pub fn synth_classification_with(
    spec: &ClassSetSpec,
    seed: u64,
    split: Split,
    n: usize,
    num_classes: usize,
) -> Result<LabeledDataset> {
    if num_classes == 0 || num_classes > Motif::ALL.len() {
        return Err(crate::Error::InvalidInput(format!(
            "num_classes must be in 1..={}",
            Motif::ALL.len()
        )));
    }
    if n < num_classes {
        return Err(crate::Error::InvalidInput(format!(
            "need at least one image per class (n = {n}, classes = {num_classes})"
        )));
    }
    let mut rng = rng_for(seed, split, 1);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid sigma");
    let size = spec.size;
    let items = (0..n)
        .map(|i| {
            let class = i % num_classes;
            let motif = Motif::ALL[class];
            let bg = rng.gen_range(spec.background.0..=spec.background.1);
            let fg = rng.gen_range(spec.foreground.0..=spec.foreground.1);
            let half = size as f64 * rng.gen_range(spec.scale.0..=spec.scale.1);
            let c = (size as f64 - 1.0) / 2.0;
            let j = spec.jitter * size as f64;
            let cx = c + rng.gen_range(-j..=j);
            let cy = c + rng.gen_range(-j..=j);
            let tilt = rng.gen_range(-spec.tilt..=spec.tilt).to_radians();
            let (s, co) = tilt.sin_cos();
            let mut img = Image::from_fn(size, size, |x, y| {
                let cov = coverage(x, y, 3, |px, py| {
                    let dx = (px - cx) / half;
                    let dy = (py - cy) / half;
                    motif.contains(co * dx + s * dy, -s * dx + co * dy)
                });
                bg + (fg - bg) * cov
            });
            add_noise(&mut img, &noise, &mut rng, spec.noise);
            LabeledItem {
                image: img,
                label: Label::Class(class),
            }
        })
        .collect();
    Ok(LabeledDataset {
        items,
        split,
        seed,
        num_classes: Some(num_classes),
    })
}

/// Fraction of an `s×s` subsample grid inside pixel `(x, y)` for which `inside` holds.
fn coverage(x: usize, y: usize, s: usize, inside: impl Fn(f64, f64) -> bool) -> f64 {
    let mut hits = 0;
    for a in 0..s {
        for b in 0..s {
            let px = x as f64 - 0.5 + (a as f64 + 0.5) / s as f64;
            let py = y as f64 - 0.5 + (b as f64 + 0.5) / s as f64;
            if inside(px, py) {
                hits += 1;
            }
        }
    }
    hits as f64 / (s * s) as f64
}

fn add_noise(img: &mut Image, noise: &Normal<f64>, rng: &mut ChaCha8Rng, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..img.channels() {
                let v = img.get(x, y, c) + noise.sample(rng);
                img.set(x, y, c, v);
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Primitive {
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, cos: f64, sin: f64 },
    Rect { cx: f64, cy: f64, a: f64, b: f64, cos: f64, sin: f64 },
    Bar { x0: f64, y0: f64, dx: f64, dy: f64, len2: f64, half_width: f64 },
}

impl Primitive {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Primitive::Ellipse { cx, cy, a, b, cos, sin } => {
                let (u, v) = rotate_into(x - cx, y - cy, cos, sin);
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Primitive::Rect { cx, cy, a, b, cos, sin } => {
                let (u, v) = rotate_into(x - cx, y - cy, cos, sin);
                u.abs() <= a && v.abs() <= b
            }
            Primitive::Bar { x0, y0, dx, dy, len2, half_width } => {
                let t = (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0);
                let px = x0 + t * dx - x;
                let py = y0 + t * dy - y;
                px * px + py * py <= half_width * half_width
            }
        }
    }
}

fn rotate_into(dx: f64, dy: f64, cos: f64, sin: f64) -> (f64, f64) {
    (cos * dx + sin * dy, -sin * dx + cos * dy)
}

/// Cluttered "natural-like" grey images: a shading gradient, random ellipses,
/// rectangles and bars, a light blur and pixel noise.
pub fn synth_generic_set(seed: u64, split: Split, n: usize, size: usize) -> Vec<Image> {
    let mut rng = rng_for(seed, split, 2);
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let s = size as f64;
    (0..n)
        .map(|_| {
            let base = rng.gen_range(0.1..0.9);
            let gx = rng.gen_range(-0.4..0.4) / s;
            let gy = rng.gen_range(-0.4..0.4) / s;
            let count = rng.gen_range(8..=16);
            let prims: Vec<(Primitive, f64)> = (0..count)
                .map(|_| {
                    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    let (sin, cos) = theta.sin_cos();
                    let cx = rng.gen_range(-0.1 * s..1.1 * s);
                    let cy = rng.gen_range(-0.1 * s..1.1 * s);
                    let p = match rng.gen_range(0..3) {
                        0 => Primitive::Ellipse {
                            cx,
                            cy,
                            a: rng.gen_range(0.04 * s..0.3 * s),
                            b: rng.gen_range(0.04 * s..0.3 * s),
                            cos,
                            sin,
                        },
                        1 => Primitive::Rect {
                            cx,
                            cy,
                            a: rng.gen_range(0.04 * s..0.3 * s),
                            b: rng.gen_range(0.04 * s..0.3 * s),
                            cos,
                            sin,
                        },
                        _ => {
                            let len = rng.gen_range(0.2 * s..0.8 * s);
                            let dx = len * cos;
                            let dy = len * sin;
                            Primitive::Bar {
                                x0: cx - dx / 2.0,
                                y0: cy - dy / 2.0,
                                dx,
                                dy,
                                len2: len * len,
                                half_width: rng.gen_range(0.01 * s..0.05 * s).max(0.75),
                            }
                        }
                    };
                    (p, rng.gen_range(0.0..1.0))
                })
                .collect();
            let raw = Image::from_fn(size, size, |x, y| {
                let mut v = base + gx * x as f64 + gy * y as f64;
                for (p, intensity) in &prims {
                    let cov = coverage(x, y, 2, |px, py| p.contains(px, py));
                    v = v * (1.0 - cov) + intensity * cov;
                }
                v
            });
            let mut img = box_blur3(&raw);
            add_noise(&mut img, &noise, &mut rng, 0.02);
            img
        })
        .collect()
}

fn box_blur3(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    Image::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                acc += img.get(xx, yy, 0);
            }
        }
        acc / 9.0
    })
}

/// Appearance parameters for pose sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSetSpec {
    pub size: usize,
    /// Gaussian noise added after warping; with 0 every stored image equals
    /// `warp(pose_template(size), g)` exactly.
    pub noise: f64,
}

impl Default for PoseSetSpec {
    fn default() -> Self {
        Self { size: 120, noise: 0.0 }
    }
}

/// Face-like template: head, two eyes, a bright nose and a mouth bar, all
/// inside the inscribed circle so that rotations about the centre keep it whole.
pub fn pose_template(size: usize) -> Image {
    let c = (size as f64 - 1.0) / 2.0;
    let r = size as f64 * 0.5 * 0.78;
    Image::from_fn(size, size, |x, y| {
        let mut v = 0.0;
        let cov = |f: &dyn Fn(f64, f64) -> bool| coverage(x, y, 3, |px, py| f((px - c) / r, (py - c) / r));
        let head = cov(&|u, v| (u / 0.78).powi(2) + (v / 0.95).powi(2) <= 1.0);
        v += 0.5 * head;
        for ex in [-0.3, 0.3] {
            let eye = cov(&|u, v| (u - ex).powi(2) + (v + 0.28).powi(2) <= 0.13 * 0.13);
            v = v * (1.0 - eye) + 0.05 * eye;
        }
        let nose = cov(&|u, v| (-0.12..=0.2).contains(&v) && u.abs() <= 0.14 * (v + 0.12) / 0.32);
        v = v * (1.0 - nose) + 0.95 * nose;
        let mouth = cov(&|u, v| (0.42..=0.52).contains(&v) && u.abs() <= 0.32);
        v = v * (1.0 - mouth) + 0.08 * mouth;
        v
    })
}

/// Canonical keypoints (left eye, right eye, nose) of [`pose_template`], pixels.
pub fn pose_keypoints(size: usize) -> [(f64, f64); 3] {
    let c = (size as f64 - 1.0) / 2.0;
    let r = size as f64 * 0.5 * 0.78;
    [
        (c - 0.3 * r, c - 0.28 * r),
        (c + 0.3 * r, c - 0.28 * r),
        (c, c + 0.1 * r),
    ]
}

/// Pose set with the default appearance.
pub fn synth_pose_set(seed: u64, n: usize, family: PoseFamily) -> Result<LabeledDataset> {
    synth_pose_with(&PoseSetSpec::default(), seed, Split::Train, n, family)
}

/// Each item is the template warped by a ground-truth pose: a uniform angle in
/// `[0°, 360°)` for the rotation family, a uniform member of the fixed affine
/// pose set otherwise.
pub fn synth_pose_with(
    spec: &PoseSetSpec,
    seed: u64,
    split: Split,
    n: usize,
    family: PoseFamily,
) -> Result<LabeledDataset> {
    let mut rng = rng_for(seed, split, 3);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid sigma");
    let template = pose_template(spec.size);
    let affine = build_pose_set(PoseFamily::Affine, spec.size);
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let g = match family {
            PoseFamily::Rotation => {
                let angle: f64 = rng.gen_range(0.0..360.0);
                GeometricTransform::rotation_centered(angle, spec.size, spec.size)
            }
            PoseFamily::Affine => affine[rng.gen_range(0..affine.len())],
        };
        let mut image = warp(&template, &g, Interpolation::Bilinear, Padding::Zero)?;
        add_noise(&mut image, &noise, &mut rng, spec.noise);
        items.push(LabeledItem {
            image,
            label: Label::Pose(g),
        });
    }
    Ok(LabeledDataset {
        items,
        split,
        seed,
        num_classes: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_classes() {
        let ds = synth_classification_set(1, 10, 2).unwrap();
        let labels = ds.class_labels().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 5);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 5);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_classification_set(7, 12, 3).unwrap();
        let b = synth_classification_set(7, 12, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_classification_set(8, 12, 3).unwrap();
        assert_ne!(a, c);
        let test = synth_classification_with(&ClassSetSpec::default(), 7, Split::Test, 12, 3).unwrap();
        assert_ne!(a.items[0].image, test.items[0].image);
        assert_eq!(synth_generic_set(3, Split::Train, 2, 24), synth_generic_set(3, Split::Train, 2, 24));
    }

    #[test]
    fn too_few_items_rejected() {
        assert!(synth_classification_set(1, 1, 2).is_err());
        assert!(synth_classification_set(1, 10, 9).is_err());
    }

    #[test]
    fn motifs_are_mirror_symmetric() {
        for m in Motif::ALL {
            for i in 0..40 {
                for j in 0..40 {
                    let x = -1.0 + 0.05 * i as f64 + 0.0125;
                    let y = -1.0 + 0.05 * j as f64 + 0.0125;
                    assert_eq!(m.contains(x, y), m.contains(-x, y), "{m:?}");
                }
            }
        }
    }

    #[test]
    fn rotation_poses_recorded_and_reproducible() {
        let spec = PoseSetSpec { size: 48, noise: 0.0 };
        let ds = synth_pose_with(&spec, 3, Split::Train, 6, PoseFamily::Rotation).unwrap();
        let template = pose_template(48);
        for item in &ds.items {
            let Label::Pose(g) = item.label else { panic!() };
            let a = g.angle_degrees();
            assert!((0.0..360.0).contains(&a));
            let img = warp(&template, &g, Interpolation::Bilinear, Padding::Zero).unwrap();
            assert_eq!(img, item.image);
        }
    }

    #[test]
    fn affine_poses_come_from_fixed_set() {
        let spec = PoseSetSpec { size: 40, noise: 0.0 };
        let ds = synth_pose_with(&spec, 5, Split::Test, 8, PoseFamily::Affine).unwrap();
        let set = build_pose_set(PoseFamily::Affine, 40);
        for g in ds.poses().unwrap() {
            assert!(set.contains(&g));
        }
    }
}
