//! Invariance quantification, compensated classification and reports.

mod classifier;
mod compensate;
mod invariance;
mod report;

pub use classifier::{LinearClassifier, LinearConfig};
pub use compensate::{compensated_classification, CompensationPoint};
pub use invariance::{
    invariance_scores, invariant_replacement, max_invariant_set, max_invariant_set_cached, ranked_channels,
    InvarianceEvaluation, InvarianceReport, INVARIANCE_SENTINEL,
};
pub use report::{report_file_name, write_csv, write_json};
