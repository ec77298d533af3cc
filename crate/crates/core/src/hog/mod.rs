//! HOG features in the 31-channel contrast-sensitive/insensitive/texture
//! layout, with exact permutations for flips and half turns.

mod distance;
mod extract;
mod permutation;

pub use distance::{cell_distances, field_distance, field_distance_over, Metric};
pub use extract::{extract_hog, HogConfig, HogExtractor, CLAMP, EPSILON};
pub use permutation::{analytic_permutation, channel_permutation};
