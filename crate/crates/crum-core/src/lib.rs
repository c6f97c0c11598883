//! Counterfactual reranking with a utility-oriented evaluator.
//!
//! The crate implements a complete evaluation-after-reranking pipeline:
//!
//! 1. [`data`] ingests LETOR-format ranking data or generates a synthetic
//!    desk-scale dataset.
//! 2. [`ranker`] trains a pointwise neural initial ranker (plus random and
//!    reverse adversarial rankers for robustness studies).
//! 3. [`click`] is the oracle click model: relevance x position decay x
//!    similarity-to-last-click. It samples training logs and computes exact
//!    expected clicks by dynamic programming.
//! 4. [`graph`] embeds each request's items with a position-aware graph
//!    attention network over the fully connected item graph.
//! 5. [`evaluator`] predicts per-item click probabilities under any
//!    counterfactual permutation (Bi-LSTM over the displayed order + MLP) and
//!    derives listwise utilities from logged clicks by inverse propensity
//!    weighting.
//! 6. [`rerank`] trains an O(n)-inference pairwise reranker that maximizes
//!    listwise utility with a delta-utility-weighted Lambda loss, guided by
//!    the frozen evaluator.
//! 7. [`metrics`], [`oracle`], [`pipeline`] and [`report`] evaluate, verify
//!    (brute-force permutation search, Monte Carlo, finite differences) and
//!    orchestrate staged experiment runs.
//!
//! All numeric code is generic over the scalar type via [`scalar::Scalar`];
//! [`Real`] fixes the pipeline default. Tests instantiate `f64` where tight
//! finite-difference tolerances demand it.

pub mod autodiff;
pub mod click;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod lstm;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod perm;
pub mod pipeline;
pub mod ranker;
pub mod report;
pub mod rerank;
pub mod scalar;
pub mod store;

pub use error::{CrumError, Result};
pub use perm::Permutation;
pub use scalar::Scalar;

/// Scalar type used by the shipped pipeline. `f32` keeps the dense layers in
/// the fast gemm path; verification code instantiates the same generics with
/// `f64` where tolerances require it.
pub type Real = f32;

/// Concrete dataset type used by the pipeline.
pub type Dataset = data::Dataset<Real>;
/// Concrete dataset type at double precision.
pub type Dataset64 = data::Dataset<f64>;
/// Concrete parameter container used by the pipeline.
pub type ParameterStore = store::ParameterStore<Real>;
/// Concrete parameter container at double precision.
pub type ParameterStore64 = store::ParameterStore<f64>;
