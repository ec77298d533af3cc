//! Accuracy and timing of direct versus equivariant pose scoring.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::model::{predict_pose, PoseModel, ScoringMode};
use super::poses::{pose_error, PoseFamily};
use crate::analysis::write_csv;
use crate::equilearn::{DistanceStats, FeatureExtractor};
use crate::imaging::{GeometricTransform, Image};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// `direct`, `equivariant` or `baseline`.
    pub method: String,
    pub error: DistanceStats,
    /// Median wall time per image divided by the number of poses; `None` for
    /// the baseline.
    pub ms_per_transform: Option<f64>,
    /// Direct time over this method's time.
    pub speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseBenchmark {
    pub feature: String,
    pub family: PoseFamily,
    pub rows: Vec<BenchRow>,
}

impl PoseBenchmark {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Direct over equivariant time per transformation.
    pub fn speedup(&self) -> Option<f64> {
        self.row("equivariant").and_then(|r| r.speedup)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    self.feature.clone(),
                    self.family.to_string(),
                    r.method.clone(),
                    format!("{:.6}", r.error.mean),
                    r.ms_per_transform.map_or(String::new(), |t| format!("{t:.6}")),
                    r.speedup.map_or(String::new(), |s| format!("{s:.3}")),
                    format!("{:.6}", r.error.median),
                ]
            })
            .collect();
        write_csv(
            path,
            &["feature", "family", "mode", "error", "ms_per_transform", "speedup", "median_error"],
            &rows,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Untimed predictions per mode before measuring.
    pub warmup: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { warmup: 3 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_mode<E: FeatureExtractor + ?Sized>(
    model: &PoseModel,
    extractor: &E,
    images: &[Image],
    mode: ScoringMode,
    warmup: usize,
) -> Result<(Vec<usize>, f64)> {
    for x in images.iter().cycle().take(warmup) {
        predict_pose(model, extractor, x, mode)?;
    }
    let mut preds = Vec::with_capacity(images.len());
    let mut times = Vec::with_capacity(images.len());
    for x in images {
        let start = Instant::now();
        let (k, _) = predict_pose(model, extractor, x, mode)?;
        times.push(start.elapsed().as_secs_f64() * 1e3 / model.num_poses() as f64);
        preds.push(k);
    }
    Ok((preds, median(times)))
}

/// Times and scores both modes on the calling thread, and reports the
/// constant-pose baseline.
pub fn bench<E: FeatureExtractor + ?Sized>(
    direct: &PoseModel,
    equivariant: &PoseModel,
    extractor: &E,
    images: &[Image],
    truths: &[GeometricTransform],
    baseline: &GeometricTransform,
    family: PoseFamily,
    opts: &BenchOptions,
) -> Result<PoseBenchmark> {
    if images.is_empty() || images.len() != truths.len() {
        return Err(Error::InvalidInput(format!("{} images with {} poses", images.len(), truths.len())));
    }
    let size = images[0].width();
    let errors = |model: &PoseModel, preds: &[usize]| {
        let e: Vec<f64> = preds
            .iter()
            .zip(truths)
            .map(|(&k, g)| pose_error(family, &model.poses[k], g, size))
            .collect();
        DistanceStats::from_values(&e)
    };
    let (pd, td) = run_mode(direct, extractor, images, ScoringMode::Direct, opts.warmup)?;
    let (pe, te) = run_mode(equivariant, extractor, images, ScoringMode::Equivariant, opts.warmup)?;
    let base: Vec<f64> = truths.iter().map(|g| pose_error(family, baseline, g, size)).collect();
    let rows = vec![
        BenchRow {
            method: "baseline".into(),
            error: DistanceStats::from_values(&base),
            ms_per_transform: None,
            speedup: None,
        },
        BenchRow {
            method: "direct".into(),
            error: errors(direct, &pd),
            ms_per_transform: Some(td),
            speedup: Some(1.0),
        },
        BenchRow {
            method: "equivariant".into(),
            error: errors(equivariant, &pe),
            ms_per_transform: Some(te),
            speedup: Some(td / te.max(f64::MIN_POSITIVE)),
        },
    ];
    Ok(PoseBenchmark {
        feature: extractor.name(),
        family,
        rows,
    })
}
