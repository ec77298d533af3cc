//! Learning and measuring equivariance, invariance and equivalence of
//! convolutional image representations.
//!
//! The crate is organised by experiment layer:
//!
//! - [`imaging`]: images, invertible affine geometry, warping and synthetic data.
//! - [`field`]: the `H×W×D` feature field shared by every representation.
//! - [`hog`]: a 31-channel HOG extractor with exact flip/rotation permutations.
//! - [`featnet`]: a small trainable CNN (forward, backward, SGD, gradient checks).
//! - [`equilearn`]: sparse and structured-sparse regression of equivariant maps.
//! - [`netsurgery`]: transformation and stitching layers.
//! - [`analysis`]: invariance scores, compensated classification, reports.
//! - [`structreg`]: pose regression with precomputed transformed templates.

pub mod analysis;
pub mod equilearn;
pub mod error;
pub mod featnet;
pub mod field;
pub mod hog;
pub mod imaging;
pub mod linalg;
pub mod netsurgery;
pub mod structreg;

pub use error::{Error, Result};
pub use field::{FeatureField, Geometry};
pub use imaging::{GeometricTransform, Image};
