//! A small convolutional network with forward and backward passes, SGD
//! training, finite-difference checks and checkpoints.

mod checkpoint;
mod gradcheck;
mod layers;
mod network;
mod train;

pub use checkpoint::{load_network, read_tensors, save_network, write_tensors, NetworkManifest, TensorEntry};
pub use gradcheck::{grad_check, random_input, relative_error, GradCheck, GRAD_CHECK_STEP};
pub use layers::{softmax_xent, Conv, ConvShape, Differentiable, Fc, Layer};
pub use network::{argmax_lowest, Network, NetworkSplit, T3_PROBES};
pub use train::{inserted_error, train, train_inserted, CurvePoint, Sgd, TrainConfig, TrainReport};
