//! Pose estimation by structured max-margin regression, scoring poses either
//! directly on warped images or through precomputed transformed templates.

mod bench;
mod model;
mod poses;

pub use bench::{bench, BenchOptions, BenchRow, PoseBenchmark};
pub use model::{
    learn_pose_maps, loss_matrix, pose_label, predict_pose, structured_objective, train_pose_model, PoseModel,
    PoseTrainConfig, ScoringMode,
};
pub use poses::{
    build_pose_set, circular_distance, keypoint_distance, median_pose, nearest_pose, pose_error, pose_loss,
    PoseFamily, AFFINE_POSES,
};
