//! Transformation and stitching layers as network layers, and their
//! relation to sparse equivariant maps.

mod convert;
mod stitch;
mod table;
mod translayer;

pub use convert::{map_to_translayer, translayer_to_map};
pub use stitch::{evaluate_franken, learn_stitch, StitchConfig, StitchInit, StitchResult, StitchingLayer};
pub use table::{build_permutation_table, PermutationTable, TableMode};
pub use translayer::TransformationLayer;
