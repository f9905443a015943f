//! Objective scores for restored speech, paired t-tests, external scorer
//! adapters and report generation.

mod external;
mod native;
mod report;
mod stats;

pub use external::{external_metric, DEFAULT_SCORE_PATTERN, EXTERNAL_METRIC_ENV};
pub use native::{lsd, mcd, mcd_with, si_sdr, LSD_EPSILON, MCD_COEFFS, SI_SDR_CAP_DB};
pub use report::{
    evaluate_systems, select_subset, AggregateRow, ComparisonRow, EvalItem, MetricReport,
    MetricSpec, ScoreRow,
};
pub use stats::{paired_t_test, student_t_two_sided, PairedTTest};
