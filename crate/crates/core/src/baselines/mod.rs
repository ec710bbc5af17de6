//! Comparison imputers: per-stream natural cubic splines over time and
//! soft-impute matrix completion over the segment x (stream, time) matrix.

mod layout;
mod soft_impute;
mod spline;
mod svd;

pub use layout::{cohort_to_matrix, matrix_to_cohort};
pub use soft_impute::{default_lambda_schedule, soft_impute, SoftImputeConfig, SoftImputeOutcome, StageReport};
pub use spline::{spline_impute, NaturalCubicSpline};
pub use svd::{svd, Svd};
