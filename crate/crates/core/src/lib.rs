//! Multi-source transfer learning for univariate financial time-series
//! forecasting: per-source pre-training, target fine-tuning and four
//! ensemble combiners (average, similarity-weighted, forward selection and
//! TPE-optimized selection), plus the general TPE optimizer and the four
//! series-similarity measures behind the weighting.

pub mod data;
pub mod ensemble;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod similarity;
pub mod tpe;
pub mod transfer;
