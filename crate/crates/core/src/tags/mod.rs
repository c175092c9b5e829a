//! Classical analysis of time-tag streams: delay search, coincidence
//! matching, count matrices and the correlation/CHSH estimators built on them.

mod coincidence;
mod delay;
mod estimate;
mod stream;

pub use coincidence::{
    build_matrix, match_coincidences, match_times, CoincidenceMatrix, CoincidencePair,
};
pub use delay::{
    estimate_delay, estimate_delay_times, DelayEstimate, DelaySearch, DEFAULT_DELAY_BIN_PS,
};
pub use estimate::{
    accidental_coincidences, chsh_from_counts, correlation_from_counts, window_sweep,
    write_estimates_csv, ChshEstimate, ChshLayout, CorrelationTerm, EstimatedCorrelation,
    WindowPoint,
};
pub use stream::{TagStream, TimeTag};

use thiserror::Error;

use crate::quantum::{DetectorId, Party};

#[derive(Debug, Error)]
pub enum TagsError {
    #[error("tags out of time order at index {index}")]
    Unsorted { index: usize },
    #[error("{party} stream contains undeclared channel {channel}")]
    UnknownChannel { party: Party, channel: DetectorId },
    #[error("tag dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no correlation peak: max bin {peak} vs mean {mean:.3} (threshold {threshold:.3})")]
    NoCorrelation { peak: u64, mean: f64, threshold: f64 },
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
