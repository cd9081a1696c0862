//! Bayesian nonparametric mixture of factor analyzers for spatial omics.
//!
//! Spots (columns of a genes × spots matrix) are clustered through a
//! low-dimensional factor model whose cluster memberships follow a
//! Gibbs-type partition prior (DP, Pitman-Yor or mixture of finite
//! mixtures) tilted by a Markov random field on the spatial neighbor graph.
//!
//! The typical pipeline is [`ingest`] → [`sampler::run_chain`] →
//! [`summarize`], with [`summarize::select_d`] choosing the MRF strength by
//! ICL. [`simulate`] produces Potts-patterned synthetic data and
//! [`identifiability`] checks the partition-score invariance numerically.

pub mod diagnostics;
pub mod error;
pub mod identifiability;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod priors;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod summarize;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    AdjacencyGraph, ChainState, ChainTrace, ComponentPrior, CovPrior, ExpressionMatrix, FactorModelParams, HyperParams,
    LatentFactors, MrfField, PartitionState, PriorConfig, PriorFamily, SpatialCoords, SpdMatrix, TraceRecord,
};
