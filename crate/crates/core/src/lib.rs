//! Post-hoc confidence calibration of classifier logits by recursive,
//! group-wise temperature scaling.
//!
//! Samples are grouped by how their prediction and confidence react to a
//! lossy label-invariant transformation of the input (one that removes
//! information without changing the true class, such as zooming out or
//! darkening an image). Each group gets its own temperature, the groups are
//! re-formed with another transformation, and the process repeats until
//! the validation ECE stops moving. Every update divides whole rows by a
//! positive scalar, so predictions never change.
//!
//! The crate works on logits only: producing logits for transformed inputs
//! is left to the caller's model, or to [`synth`] for experiments.

pub mod error;
pub mod grouping;
pub mod map;
pub mod metrics;
pub mod recal;
pub mod synth;
pub mod table;
pub mod temperature;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use grouping::{
    group_ece_table, group_inputs, group_number, ConfidenceComparisonMode, GroupPartition,
    GroupStat,
};
pub use map::{
    build_pool, load_map, save_map, CalibrationConfig, CalibrationIteration, CalibrationMap,
    PoolSpec, TransformKind, TransformationPool, TransformationSpec,
};
pub use metrics::{
    brier_normalized, ece, error_rate, group_rank_analysis, nll, softmax, MetricsReport,
    RankDistribution, ReliabilityBins,
};
pub use recal::{
    apply, apply_checked, apply_referenced, fit, fit_global_temperature, FitOutcome, FitState,
};
pub use table::{read_logits_csv, write_logits_csv, LogitsTable};
pub use temperature::{
    apply_temperature, fit_temperature, shrink_temperature, TemperatureFitConfig,
};
pub use tensor::{read_tensor, write_tensor, ImageTensorSet};
