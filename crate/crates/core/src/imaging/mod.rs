//! Images, invertible affine geometry, inverse warping and synthetic datasets.

mod dataset;
mod geometry;
mod image;
pub mod pnm;
pub mod synth;
mod warp;

pub use dataset::{Label, LabeledDataset, LabeledItem, Split};
pub use geometry::{transform_point, GeometricTransform, TransformSpec};
pub use image::Image;
pub use warp::{warp, Interpolation, Padding};
