//! Desk-scale laboratory for cross-architecture knowledge distillation in
//! neural passage ranking.
//!
//! The crate bundles:
//! - a minimal reverse-mode autodiff engine ([`autodiff`]),
//! - a small transformer encoder with vocabulary/tokenization ([`encoder`]),
//! - five ranking architectures with cacheable passage representations
//!   ([`scorers`]),
//! - the distillation losses ([`losses`]),
//! - file formats and a synthetic corpus generator ([`data`]),
//! - IR metrics and margin statistics ([`eval`]),
//! - the teacher/score-file/student training pipeline ([`pipeline`]),
//! - a query-latency benchmark harness ([`bench`]).
//!
//! The numeric core is generic over the scalar type (f32/f64 via
//! [`scalar::Scalar`]); everything shipped by the pipeline and the file
//! formats is pinned to f64 through the aliases below.

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod losses;
pub mod params;
pub mod scalar;
pub mod scorers;

pub use scalar::Scalar;

/// Scalar type used by the shipped pipeline and all file formats.
pub type DefaultScalar = f64;

pub type Tensor = autodiff::Tensor<DefaultScalar>;
pub type Graph = autodiff::Graph<DefaultScalar>;
pub type EncoderStack = encoder::EncoderStack<DefaultScalar>;
pub type Model = scorers::Model<DefaultScalar>;
pub type PassageCache = scorers::PassageCache<DefaultScalar>;
