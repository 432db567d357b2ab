//! Motif-based tokenization for univariate real-valued time series.
//!
//! The pipeline has two stages: series are z-normalized and discretized into
//! `M` equiprobable bins, then recurring adjacent symbol pairs are merged into
//! motif tokens using an ordered list of pair-merge rules. Merging is exactly
//! invertible at the symbol level, so the only loss is the quantization error,
//! which is bounded for truncated-uniform bins and can be further reduced with
//! a conditional decoding table fitted on (value, symbol) pairs.
//!
//! Crate layout mirrors the pipeline:
//!
//! - [`series`]: corpus ingestion, normalization, synthetic generators, and
//!   robustness augmentations
//! - [`quant`]: bin construction, quantize/dequantize, error bounds
//! - [`vocab`]: merge-rule training and motif introspection
//! - [`codec`]: applying/inverting merge rules and compression metrics
//! - [`cdec`]: the conditional dequantization table
//! - [`forecast`]: a count-based Markov model over the token vocabulary
//! - [`eval`]: corpus-level reports, baselines, and robustness sweeps

pub mod cdec;
pub mod codec;
pub mod eval;
pub mod forecast;
pub mod quant;
pub mod series;
pub mod vocab;

mod error;

pub use error::{Error, Result};
