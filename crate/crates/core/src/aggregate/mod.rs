//! Answer aggregation: majority vote, round-discounted weighted vote, and the
//! confusion-matrix EM fits that feed posterior decoding.

mod calibration;
mod counts;
mod decode;
pub mod em;
mod majority;
mod weighted;

pub use calibration::{calibration_report, matrix_stats, AgentCalibration, CalibrationReport, MatrixStats};
pub use counts::{answer_class, build_counts, RoundSelector, VoteCounts, WEIGHT_CLASSES};
pub use decode::{posterior_decode, DecodedRound};
pub use em::{
    classic_ds_em, wise_ds_em, ClassicDs, ConfusionModel, EmFit, EmOptions, EmStepper, IterationStats,
    Responsibilities, WeightInit, WiseDs,
};
pub use majority::{cluster_free_form, majority_vote, majority_vote_free_form};
pub use weighted::{aggregate_rounds, round_discount, select_option, AggregatedWeights, RoundBallots};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("no non-abstaining answers")]
    NoBallots,
    #[error("judge failed: {0}")]
    Judge(String),
}
