use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::priors::{log_partition_prior, LogWeightTable};
use crate::types::{AdjacencyGraph, ChainState, ExpressionMatrix};

/// Components of the complete-data log score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParts {
    /// `Σ_i log N(x_i; W y_i, Λ)`.
    pub data: f64,
    /// `Σ_i log N(y_i; μ_{z_i}, Σ)`.
    pub latent: f64,
    /// Unnormalized `log P(z)`.
    pub prior: f64,
}

impl ScoreParts {
    pub fn total(&self) -> f64 {
        self.data + self.latent + self.prior
    }
}

/// `Σ_i log N(x_i; W y_i, Λ)` with diagonal Λ.
pub fn data_log_likelihood(state: &ChainState, x: &ExpressionMatrix) -> f64 {
    let residual: DMatrix<f64> = x.values() - &state.params.loadings * &state.factors.0;
    let n = x.n_spots() as f64;
    residual
        .row_iter()
        .zip(state.params.noise_var.iter())
        .map(|(r, &s2)| -0.5 * (n * (2.0 * PI * s2).ln() + r.norm_squared() / s2))
        .sum()
}

/// `Σ_i log N(y_i; μ_{z_i}, Σ)`.
pub fn latent_log_likelihood(state: &ChainState) -> f64 {
    let cov = &state.params.cov;
    let y = &state.factors.0;
    let q = y.nrows() as f64;
    let white_y = cov
        .lower()
        .solve_lower_triangular(y)
        .expect("cholesky factor has positive diagonal");
    let white_mu: Vec<_> = state.params.means.iter().map(|m| cov.whiten(m)).collect();
    let constant = -0.5 * (q * (2.0 * PI).ln() + cov.log_det());
    state
        .partition
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &h)| constant - 0.5 * (white_y.column(i) - &white_mu[h]).norm_squared())
        .sum()
}

pub fn complete_log_score_parts(
    state: &ChainState,
    x: &ExpressionMatrix,
    graph: &AdjacencyGraph,
    table: &LogWeightTable,
) -> Result<ScoreParts> {
    state.check_consistency(x)?;
    Ok(ScoreParts {
        data: data_log_likelihood(state, x),
        latent: latent_log_likelihood(state),
        prior: log_partition_prior(&state.partition, graph, table)?,
    })
}

/// `log P(X | W, Y, Λ) + log P(Y | z, μ, Σ) + log P(z)`, the last term
/// without the MRF normalizing constant.
pub fn complete_log_score(
    state: &ChainState,
    x: &ExpressionMatrix,
    graph: &AdjacencyGraph,
    table: &LogWeightTable,
) -> Result<f64> {
    complete_log_score_parts(state, x, graph, table).map(|p| p.total())
}
