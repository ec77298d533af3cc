//! Structured max-margin pose regression with direct or equivariant scoring.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::poses::{nearest_pose, pose_loss, PoseFamily};
use crate::equilearn::{learn_map, EquivariantMap, FeatureExtractor, PairOptions, RegressionConfig};
use crate::featnet::argmax_lowest;
use crate::imaging::{warp, GeometricTransform, Image, Interpolation, Padding};
use crate::{Error, Result};

/// How the joint feature `φ(g_k⁻¹x)` is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Warp the image by every `g_k⁻¹` and extract features each time.
    Direct,
    /// Extract once and apply the learned maps `M_k`.
    #[default]
    Equivariant,
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ScoringMode::Direct),
            "equivariant" => Ok(ScoringMode::Equivariant),
            _ => Err(Error::InvalidInput(format!("unknown scoring mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoringMode::Direct => "direct",
            ScoringMode::Equivariant => "equivariant",
        })
    }
}

/// Learns `M_k : φ(x) ↦ φ(g_k⁻¹x)` for every pose.
pub fn learn_pose_maps<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    poses: &[GeometricTransform],
    images: &[Image],
    cfg: &RegressionConfig,
    opts: &PairOptions,
) -> Result<Vec<EquivariantMap>> {
    poses
        .iter()
        .map(|g| learn_map(extractor, &g.inverse()?, images, cfg, opts))
        .collect()
}

/// Template `w` with the precomputed transformed templates `M_kᵀw` and
/// offsets `⟨w, b_k⟩`.
///
/// Invariant: `templates.len() == template_bias.len() == poses.len()` and every
/// template has the length of `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseModel {
    pub w: Vec<f64>,
    pub dims: (usize, usize, usize),
    pub poses: Vec<GeometricTransform>,
    pub templates: Vec<Vec<f64>>,
    pub template_bias: Vec<f64>,
    pub extractor: String,
    /// Pose family for the margin loss; `None` uses the 0/1 loss.
    pub family: Option<PoseFamily>,
}

impl PoseModel {
    /// Builds a model from `w` and one map per pose.
    pub fn new(
        w: Vec<f64>,
        dims: (usize, usize, usize),
        poses: Vec<GeometricTransform>,
        maps: &[EquivariantMap],
        extractor: String,
        family: Option<PoseFamily>,
    ) -> Result<Self> {
        if w.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::DimensionMismatch(format!("template of {} for dims {dims:?}", w.len())));
        }
        let mut model = Self {
            w,
            dims,
            poses,
            templates: Vec::new(),
            template_bias: Vec::new(),
            extractor,
            family,
        };
        model.precompute(maps)?;
        Ok(model)
    }

    /// Recomputes the transformed templates from `w`.
    pub fn precompute(&mut self, maps: &[EquivariantMap]) -> Result<()> {
        check_maps(maps, self.poses.len(), self.dims)?;
        self.templates = maps.par_iter().map(|m| m.adjoint(&self.w)).collect::<Result<_>>()?;
        self.template_bias = maps.iter().map(|m| m.bias_dot(&self.w)).collect();
        Ok(())
    }

    pub fn num_poses(&self) -> usize {
        self.poses.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if model.templates.len() != model.poses.len() || model.template_bias.len() != model.poses.len() {
            return Err(Error::Format("template count differs from pose count".into()));
        }
        Ok(model)
    }
}

fn check_maps(maps: &[EquivariantMap], poses: usize, dims: (usize, usize, usize)) -> Result<()> {
    if maps.len() != poses {
        return Err(Error::MissingMap(format!("{} maps for {poses} poses", maps.len())));
    }
    if let Some(m) = maps.iter().find(|m| m.in_dims != dims || m.out_dims != dims) {
        return Err(Error::DimensionMismatch(format!(
            "map {:?} -> {:?} for feature dims {dims:?}",
            m.in_dims, m.out_dims
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTrainConfig {
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Joint feature used during training.
    pub mode: ScoringMode,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lambda: 1e-3,
            seed: 0,
            mode: ScoringMode::Equivariant,
        }
    }
}

impl PoseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Joint features `Ψ_k(x)` for all poses.
struct JointFeatures<'a, E: ?Sized> {
    extractor: &'a E,
    inverses: Vec<GeometricTransform>,
    maps: &'a [EquivariantMap],
    mode: ScoringMode,
}

impl<E: FeatureExtractor + ?Sized> JointFeatures<'_, E> {
    fn all(&self, x: &Image) -> Result<Vec<Vec<f64>>> {
        match self.mode {
            ScoringMode::Direct => self
                .inverses
                .par_iter()
                .map(|g| {
                    let gx = warp(x, g, Interpolation::Bilinear, Padding::Zero)?;
                    Ok(self.extractor.extract(&gx)?.into_data())
                })
                .collect(),
            ScoringMode::Equivariant => {
                let f = self.extractor.extract(x)?;
                self.maps.par_iter().map(|m| Ok(m.apply(&f)?.into_data())).collect()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Margin-rescaling loss `Δ(k, l)` between pose indices.
pub fn loss_matrix(poses: &[GeometricTransform], family: Option<PoseFamily>, size: usize) -> Vec<Vec<f64>> {
    poses
        .iter()
        .map(|a| {
            poses
                .iter()
                .map(|b| match family {
                    Some(f) => pose_loss(f, a, b, size),
                    None => f64::from(u8::from(a != b)),
                })
                .collect()
        })
        .collect()
}

/// Index of the pose in `poses` closest to `g`.
pub fn pose_label(poses: &[GeometricTransform], family: Option<PoseFamily>, g: &GeometricTransform, size: usize) -> usize {
    match family {
        Some(f) => nearest_pose(f, poses, g, size),
        None => {
            let dist = |p: &GeometricTransform| {
                let (a, b) = (p.matrix, g.matrix);
                (0..2).flat_map(|i| (0..3).map(move |j| (a[i][j] - b[i][j]).powi(2))).sum::<f64>()
            };
            let d: Vec<f64> = poses.iter().map(|p| -dist(p)).collect();
            argmax_lowest(&d)
        }
    }
}

/// Regularised structured hinge objective
/// `λ/2‖w‖² + mean_i max_k [Δ(k, y_i) + ⟨w, Ψ_k(x_i) − Ψ_{y_i}(x_i)⟩]`.
#[allow(clippy::too_many_arguments)]
pub fn structured_objective<E: FeatureExtractor + ?Sized>(
    w: &[f64],
    extractor: &E,
    images: &[Image],
    truths: &[GeometricTransform],
    poses: &[GeometricTransform],
    maps: &[EquivariantMap],
    family: Option<PoseFamily>,
    cfg: &PoseTrainConfig,
) -> Result<f64> {
    let size = images.first().map_or(0, Image::width);
    let delta = loss_matrix(poses, family, size);
    let jf = JointFeatures {
        extractor,
        inverses: poses.iter().map(|g| g.inverse()).collect::<Result<_>>()?,
        maps,
        mode: cfg.mode,
    };
    let mut hinge = 0.0;
    for (x, g) in images.iter().zip(truths) {
        let y = pose_label(poses, family, g, size);
        let psi = jf.all(x)?;
        let sy = dot(w, &psi[y]);
        hinge += psi
            .iter()
            .enumerate()
            .map(|(k, p)| delta[k][y] + dot(w, p) - sy)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let reg = 0.5 * cfg.lambda * dot(w, w);
    Ok(reg + hinge / images.len().max(1) as f64)
}

/// Stochastic subgradient training of the structured max-margin objective
/// with step `1/(t+10)` and loss-augmented inference.
#[allow(clippy::too_many_arguments)]
pub fn train_pose_model<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    images: &[Image],
    truths: &[GeometricTransform],
    poses: &[GeometricTransform],
    maps: &[EquivariantMap],
    family: Option<PoseFamily>,
    cfg: &PoseTrainConfig,
) -> Result<PoseModel> {
    cfg.validate()?;
    if images.is_empty() || images.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} images with {} poses",
            images.len(),
            truths.len()
        )));
    }
    if poses.is_empty() {
        return Err(Error::InvalidInput("empty pose set".into()));
    }
    let dims = extractor.extract(&images[0])?.dims();
    check_maps(maps, poses.len(), dims)?;
    let size = images[0].width();
    let delta = loss_matrix(poses, family, size);
    let labels: Vec<usize> = truths.iter().map(|g| pose_label(poses, family, g, size)).collect();
    let jf = JointFeatures {
        extractor,
        inverses: poses.iter().map(|g| g.inverse()).collect::<Result<_>>()?,
        maps,
        mode: cfg.mode,
    };
    let mut w = vec![0.0; dims.0 * dims.1 * dims.2];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut t = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let y = labels[i];
            let psi = jf.all(&images[i])?;
            let aug: Vec<f64> = psi.iter().enumerate().map(|(k, p)| delta[k][y] + dot(&w, p)).collect();
            let yhat = argmax_lowest(&aug);
            let eta = 1.0 / (t as f64 + 10.0);
            let shrink = 1.0 - eta * cfg.lambda;
            for wi in w.iter_mut() {
                *wi *= shrink;
            }
            if yhat != y {
                for ((wi, a), b) in w.iter_mut().zip(&psi[y]).zip(&psi[yhat]) {
                    *wi += eta * (a - b);
                }
            }
            t += 1;
        }
        if let Some(j) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: w[j] });
        }
        log::debug!("pose epoch {epoch}: |w| = {:.4}", dot(&w, &w).sqrt());
    }
    PoseModel::new(w, dims, poses.to_vec(), maps, extractor.name(), family)
}

/// Scores every pose and returns the lowest-index argmax. Runs on the
/// calling thread.
pub fn predict_pose<E: FeatureExtractor + ?Sized>(
    model: &PoseModel,
    extractor: &E,
    x: &Image,
    mode: ScoringMode,
) -> Result<(usize, Vec<f64>)> {
    let scores: Vec<f64> = match mode {
        ScoringMode::Direct => model
            .poses
            .iter()
            .map(|g| {
                let gx = warp(x, &g.inverse()?, Interpolation::Bilinear, Padding::Zero)?;
                let f = extractor.extract(&gx)?;
                check_dims(f.dims(), model.dims)?;
                Ok(dot(&model.w, f.data()))
            })
            .collect::<Result<_>>()?,
        ScoringMode::Equivariant => {
            let f = extractor.extract(x)?;
            check_dims(f.dims(), model.dims)?;
            model
                .templates
                .iter()
                .zip(&model.template_bias)
                .map(|(t, b)| dot(t, f.data()) + b)
                .collect()
        }
    };
    Ok((argmax_lowest(&scores), scores))
}

fn check_dims(got: (usize, usize, usize), want: (usize, usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!("features {got:?}, model {want:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilearn::{CropPolicy, Method};
    use crate::hog::{analytic_permutation, HogConfig, HogExtractor};
    use crate::imaging::synth::pose_template;
    use crate::imaging::TransformSpec;
    use crate::structreg::build_pose_set;
    use crate::FeatureField;
    use rand::Rng;

    fn hog() -> HogExtractor {
        HogExtractor::new(HogConfig { cell_size: 8, ..HogConfig::default() })
    }

    fn random_image(seed: u64, size: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = pose_template(size);
        Image::from_fn(size, size, |x, y| 0.8 * base.get(x, y, 0) + 0.2 * rng.gen::<f64>())
    }

    fn flip_setup() -> (HogExtractor, Vec<GeometricTransform>, Vec<EquivariantMap>) {
        let e = hog();
        let poses = vec![GeometricTransform::identity(), GeometricTransform::hflip(32)];
        let maps = vec![
            EquivariantMap::identity((4, 4, 31), e.config.geometry()),
            analytic_permutation((4, 4), TransformSpec::HFlip, &e.config).unwrap(),
        ];
        (e, poses, maps)
    }

    #[test]
    fn exact_maps_make_modes_agree() {
        let (e, poses, maps) = flip_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..4 * 4 * 31).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = PoseModel::new(w, (4, 4, 31), poses, &maps, e.name(), None).unwrap();
        for s in 0..6 {
            let x = random_image(s, 32);
            let (a, sa) = predict_pose(&model, &e, &x, ScoringMode::Direct).unwrap();
            let (b, sb) = predict_pose(&model, &e, &x, ScoringMode::Equivariant).unwrap();
            assert_eq!(a, b);
            for (p, q) in sa.iter().zip(&sb) {
                assert!((p - q).abs() < 1e-9, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn templates_satisfy_adjoint_identity() {
        let (e, poses, maps) = flip_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..496).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = PoseModel::new(w.clone(), (4, 4, 31), poses, &maps, e.name(), None).unwrap();
        let data: Vec<f64> = (0..496).map(|_| rng.gen::<f64>()).collect();
        let f = FeatureField::from_data(4, 4, 31, data, e.config.geometry()).unwrap();
        for (k, m) in maps.iter().enumerate() {
            let lhs = dot(&model.templates[k], f.data()) + model.template_bias[k];
            let rhs = dot(&w, m.apply(&f).unwrap().data());
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_identity_feature() {
        let (e, poses, maps) = flip_setup();
        let x = random_image(9, 32);
        let f = e.extract(&x).unwrap();
        let fl = maps[1].apply(&f).unwrap();
        let j = (0..f.len()).max_by(|&a, &b| (f.data()[a] - fl.data()[a]).total_cmp(&(f.data()[b] - fl.data()[b]))).unwrap();
        assert!(f.data()[j] > fl.data()[j]);
        let mut w = vec![0.0; f.len()];
        w[j] = 1.0;
        let model = PoseModel::new(w, f.dims(), poses, &maps, e.name(), None).unwrap();
        for mode in [ScoringMode::Direct, ScoringMode::Equivariant] {
            assert_eq!(predict_pose(&model, &e, &x, mode).unwrap().0, 0);
        }
    }

    #[test]
    fn missing_map_rejected() {
        let (e, poses, maps) = flip_setup();
        let x = vec![random_image(1, 32)];
        let r = train_pose_model(&e, &x, &[poses[0]], &poses, &maps[..1], None, &PoseTrainConfig::default());
        assert!(matches!(r, Err(Error::MissingMap(_))));
    }

    fn rotation_setup(size: usize) -> (HogExtractor, Vec<GeometricTransform>, Vec<EquivariantMap>) {
        let e = hog();
        let poses = build_pose_set(PoseFamily::Rotation, size);
        let images: Vec<Image> = (0..8).map(|s| random_image(100 + s, size)).collect();
        let cfg = RegressionConfig { method: Method::Fs { k: 5 }, ..RegressionConfig::default() };
        let opts = PairOptions { crop: CropPolicy::All, ..PairOptions::default() };
        let maps = learn_pose_maps(&e, &poses, &images, &cfg, &opts).unwrap();
        (e, poses, maps)
    }

    #[test]
    fn zero_epochs_gives_zero_template_and_first_pose() {
        let (e, poses, maps) = rotation_setup(32);
        let x = vec![random_image(7, 32)];
        let cfg = PoseTrainConfig { epochs: 0, ..PoseTrainConfig::default() };
        let model = train_pose_model(&e, &x, &[poses[4]], &poses, &maps, Some(PoseFamily::Rotation), &cfg).unwrap();
        assert!(model.w.iter().all(|&v| v == 0.0));
        for mode in [ScoringMode::Direct, ScoringMode::Equivariant] {
            let (k, s) = predict_pose(&model, &e, &x[0], mode).unwrap();
            assert_eq!(k, 0);
            assert!(s.iter().all(|&v| v == s[0]));
        }
    }

    #[test]
    fn single_example_overfits_and_objective_decreases() {
        let (e, poses, maps) = rotation_setup(32);
        let x = vec![pose_template(32)];
        let truth = [GeometricTransform::identity()];
        let fam = Some(PoseFamily::Rotation);
        for mode in [ScoringMode::Direct, ScoringMode::Equivariant] {
            let cfg = PoseTrainConfig { epochs: 1, mode, ..PoseTrainConfig::default() };
            let model = train_pose_model(&e, &x, &truth, &poses, &maps, fam, &cfg).unwrap();
            assert_eq!(predict_pose(&model, &e, &x[0], mode).unwrap().0, 0, "{mode}");
            let before = structured_objective(&vec![0.0; model.w.len()], &e, &x, &truth, &poses, &maps, fam, &cfg).unwrap();
            let after = structured_objective(&model.w, &e, &x, &truth, &poses, &maps, fam, &cfg).unwrap();
            assert!(after < before, "{after} !< {before}");
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let (e, poses, maps) = flip_setup();
        let model = PoseModel::new(vec![0.5; 496], (4, 4, 31), poses, &maps, e.name(), Some(PoseFamily::Rotation)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        model.save(&p).unwrap();
        assert_eq!(PoseModel::load(&p).unwrap(), model);
    }

    #[test]
    fn labels_are_nearest_poses() {
        let poses = build_pose_set(PoseFamily::Rotation, 64);
        let g = GeometricTransform::rotation_centered(356.0, 64, 64);
        assert_eq!(pose_label(&poses, Some(PoseFamily::Rotation), &g, 64), 0);
        let g = GeometricTransform::rotation_centered(26.0, 64, 64);
        assert_eq!(pose_label(&poses, Some(PoseFamily::Rotation), &g, 64), 3);
        assert_eq!(pose_label(&poses, None, &poses[7], 64), 7);
    }
}
