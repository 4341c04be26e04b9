//! TOKON: tokenization-optimized normalization of numeric time series for
//! zero-shot forecasting with large language models.
//!
//! Values are rescaled, rounded and clipped into an integer range whose
//! every element is a single vocabulary token. The crate also provides the
//! golden-section search for the target scale, the forecasting prompts,
//! forecaster backends, token counting, dataset ingestion and evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.
// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod forecaster;
pub mod normalization;
pub mod pipeline;
pub mod prompting;
pub mod scalar;
pub mod search;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TimeSeriesF64 = normalization::TimeSeries<f64>;
pub type TimeSeriesF32 = normalization::TimeSeries<f32>;
pub type DomainStatsF64 = normalization::DomainStats<f64>;
pub type DomainStatsF32 = normalization::DomainStats<f32>;
pub type TargetParamsF64 = normalization::TargetParams<f64>;
pub type TargetParamsF32 = normalization::TargetParams<f32>;
pub type NormalizationParamsF64 = normalization::NormalizationParams<f64>;
pub type NormalizationParamsF32 = normalization::NormalizationParams<f32>;
pub type SearchConfigF64 = search::SearchConfig<f64>;
pub type SearchTraceF64 = search::SearchTrace<f64>;
pub type MetricReportF64 = evaluation::MetricReport<f64>;
pub type MetricReportF32 = evaluation::MetricReport<f32>;
