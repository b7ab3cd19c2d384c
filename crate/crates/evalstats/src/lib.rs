//! Aggregation and statistics for human ratings of generated films.
//!
//! Twelve 1-5 questionnaire items are averaged into six dimensions, then
//! compared across models with Friedman tests, Wilcoxon signed-rank tests
//! (Holm-adjusted) and a pooled baselines-versus-ours contrast. Also builds
//! Latin and Williams counterbalancing designs.

pub mod aggregate;
pub mod compare;
pub mod design;
pub mod ratings;
pub mod report;
pub mod stats;

pub use aggregate::{cohort_pool, subject_prompt_average, ScoreTable, Summary};
pub use compare::{baseline_vs_ours, ComparisonResult};
pub use design::{counterbalance_design, Design, DesignKind};
pub use ratings::{dimension_scores, read_ratings, Cohort, Dimension, DimensionScores, RatingRecord};
pub use report::{evaluate, EvalOptions, EvalReport, GroupBy, TestKind};
pub use stats::{cohen_kappa, friedman_test, holm_adjust, wilcoxon_signed_rank, TestResult, ZeroMethod};
