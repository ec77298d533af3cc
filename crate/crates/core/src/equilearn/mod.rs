//! Learning equivariant maps `M_g = (A_g, b_g)` by per-row sparse regression.

mod evaluate;
mod map;
mod neighborhood;
mod pairs;
mod solver;
mod task;

pub use evaluate::{evaluate_map, evaluate_map_on_pairs, DistanceStats, MapEvaluation};
pub use map::{EquivariantMap, MapMeta, MapMethod, MapRow};
pub use neighborhood::{back_project, is_interior, nearest_sites, neighborhood, Neighborhood};
pub use pairs::{assemble_pairs, CropPolicy, PairOptions, PairSet};
pub use solver::{learn_map, learn_map_from_pairs, solve_row, Method, RegressionConfig, RowSolution, RowSolver};
pub use task::{learn_map_task, transformed_features, TaskCurvePoint, TaskLayerConfig, TaskResult};

use crate::field::FeatureField;
use crate::imaging::Image;
use crate::Result;

/// Anything mapping an image to a feature field.
pub trait FeatureExtractor: Sync {
    fn extract(&self, img: &Image) -> Result<FeatureField>;

    fn name(&self) -> String;
}
