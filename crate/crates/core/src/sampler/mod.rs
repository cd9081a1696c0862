//! Collapsed Gibbs sampler.
//!
//! One sweep updates, in order: latent factors `Y`, loadings `W`, noise
//! variances `Λ`, cluster means `μ_h`, the shared covariance `Σ`, and finally
//! memberships `z` one spot at a time. The first five blocks are
//! conditionally independent across spots or genes and run in parallel;
//! every draw takes its randomness from a substream keyed by
//! `(seed, iteration, step, index)` so output is independent of thread count.

mod conditionals;
mod init;
mod score;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use conditionals::{
    canonicalize, covariance_posterior, draw_categorical, draw_inverse_gamma, draw_mean, noise_var_posterior,
    sample_mu, sample_sigma, sample_sigma2, sample_w_row, sample_y, sample_z, LatentPosterior, LoadingPosterior,
};
pub use init::{initialize, kmeans, Init};
pub use score::{complete_log_score, complete_log_score_parts, data_log_likelihood, latent_log_likelihood, ScoreParts};

use crate::error::{Error, Result};
use crate::priors::{LogWeightTable, Urn};
use crate::rng::{substream, Step};
use crate::types::{AdjacencyGraph, ChainState, ChainTrace, ExpressionMatrix, HyperParams, PriorConfig, TraceRecord};
use conditionals::{reassign, MembershipWorkspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total sweeps `U`, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: Init,
    /// Worker threads for the parallel blocks.
    pub parallel_width: usize,
    /// Visit spots in a fresh random order each sweep instead of index order.
    #[serde(default)]
    pub randomize_order: bool,
    /// Keep the full state of every recorded iteration.
    #[serde(default)]
    pub record_states: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burn_in: 1000,
            thin: 5,
            seed: 1,
            init: Init::default(),
            parallel_width: 1,
            randomize_order: false,
            record_states: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::config(
                "sampler.burn_in",
                format!("burn-in {} must be below iterations {}", self.burn_in, self.iterations),
            ));
        }
        if self.thin < 1 || self.thin > self.iterations - self.burn_in {
            return Err(Error::config(
                "sampler.thin",
                format!(
                    "must be between 1 and iterations - burn_in = {}",
                    self.iterations - self.burn_in
                ),
            ));
        }
        if self.parallel_width < 1 {
            return Err(Error::config("sampler.threads", "must be >= 1"));
        }
        Ok(())
    }

    /// Whether iteration `it` (1-based) is recorded.
    pub fn keeps(&self, it: usize) -> bool {
        it > self.burn_in && (it - self.burn_in) % self.thin == 0
    }
}

/// Sweep driver bound to one dataset and prior.
pub struct GibbsSampler<'a> {
    x: &'a ExpressionMatrix,
    graph: &'a AdjacencyGraph,
    hyper: &'a HyperParams,
    table: LogWeightTable,
    seed: u64,
    randomize_order: bool,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        x: &'a ExpressionMatrix,
        graph: &'a AdjacencyGraph,
        config: &PriorConfig,
        hyper: &'a HyperParams,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        if graph.n() != x.n_spots() {
            return Err(Error::InvalidInput(format!(
                "graph has {} spots, expression matrix {}",
                graph.n(),
                x.n_spots()
            )));
        }
        if hyper.q >= x.n_genes() || hyper.q >= x.n_spots() {
            return Err(Error::config(
                "hyper.q",
                format!(
                    "latent dimension {} must be below p = {} and n = {}",
                    hyper.q,
                    x.n_genes(),
                    x.n_spots()
                ),
            ));
        }
        Ok(Self {
            x,
            graph,
            hyper,
            table: LogWeightTable::new(config, x.n_spots())?,
            seed,
            randomize_order: false,
        })
    }

    pub fn with_random_order(mut self, on: bool) -> Self {
        self.randomize_order = on;
        self
    }

    pub fn table(&self) -> &LogWeightTable {
        &self.table
    }

    pub fn score(&self, state: &ChainState) -> Result<f64> {
        complete_log_score(state, self.x, self.graph, &self.table)
    }

    /// One full sweep; `iteration` keys the random substreams.
    pub fn sweep(&self, state: &mut ChainState, iteration: usize) -> Result<()> {
        let it = iteration as u64;
        self.update_latent(state, it)?;
        self.update_loadings(state, it)?;
        self.update_noise(state, it);
        self.update_means(state, it);
        self.update_covariance(state, it)?;
        self.update_membership(state, it);
        canonicalize(state);
        Ok(())
    }

    pub fn update_latent(&self, state: &mut ChainState, it: u64) -> Result<()> {
        let post = LatentPosterior::new(&state.params)?;
        let projected = post.project(self.x.values());
        let cov_inv_mu: Vec<DVector<f64>> = state.params.means.iter().map(|m| post.cov_inv() * m).collect();
        let labels = state.partition.labels();
        let cols: Vec<DVector<f64>> = (0..self.x.n_spots())
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(self.seed, it, Step::Latent, i as u64);
                post.draw(projected.column(i), &cov_inv_mu[labels[i]], &mut rng)
            })
            .collect();
        state.factors.0 = DMatrix::from_columns(&cols);
        Ok(())
    }

    pub fn update_loadings(&self, state: &mut ChainState, it: u64) -> Result<()> {
        let y = &state.factors.0;
        let post = LoadingPosterior::new(y, self.hyper.tau_w)?;
        let yx = y * self.x.values().transpose();
        let noise = &state.params.noise_var;
        let rows: Vec<DVector<f64>> = (0..self.x.n_genes())
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(self.seed, it, Step::Loadings, j as u64);
                post.draw(&yx.column(j).into_owned(), noise[j], &mut rng)
            })
            .collect();
        let w = &mut state.params.loadings;
        for (j, r) in rows.iter().enumerate() {
            w.set_row(j, &r.transpose());
        }
        Ok(())
    }

    pub fn update_noise(&self, state: &mut ChainState, it: u64) {
        let w = &state.params.loadings;
        let residual = self.x.values() - w * &state.factors.0;
        let n = self.x.n_spots();
        let draws: Vec<f64> = (0..self.x.n_genes())
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(self.seed, it, Step::NoiseVar, j as u64);
                let (shape, scale) =
                    noise_var_posterior(residual.row(j).norm_squared(), w.row(j).norm_squared(), n, self.hyper);
                draw_inverse_gamma(shape, scale, &mut rng)
            })
            .collect();
        state.params.noise_var = DVector::from_vec(draws);
    }

    pub fn update_means(&self, state: &mut ChainState, it: u64) {
        let y = &state.factors.0;
        let h = state.partition.n_clusters();
        let mut sums = vec![DVector::zeros(y.nrows()); h];
        for (i, &l) in state.partition.labels().iter().enumerate() {
            sums[l] += y.column(i);
        }
        let counts = state.partition.counts();
        let cov = &state.params.cov;
        state.params.means = sums
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mut rng = substream(self.seed, it, Step::Means, k as u64);
                draw_mean(s, counts[k], cov, self.hyper.tau_mu, &mut rng)
            })
            .collect();
    }

    pub fn update_covariance(&self, state: &mut ChainState, it: u64) -> Result<()> {
        let mut rng = substream(self.seed, it, Step::Covariance, 0);
        state.params.cov = sample_sigma(state, self.hyper, &mut rng)?;
        Ok(())
    }

    pub fn update_membership(&self, state: &mut ChainState, it: u64) {
        let mut rng = substream(self.seed, it, Step::Membership, 0);
        let urn = Urn::new(&self.table);
        let mut ws = MembershipWorkspace::new(state);
        let n = self.x.n_spots();
        if self.randomize_order {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut substream(self.seed, it, Step::VisitOrder, 0));
            for i in order {
                reassign(i, state, &mut ws, self.graph, &urn, self.hyper, &mut rng);
            }
        } else {
            for i in 0..n {
                reassign(i, state, &mut ws, self.graph, &urn, self.hyper, &mut rng);
            }
        }
    }
}

/// Run one chain from the configured initialization.
pub fn run_chain(
    x: &ExpressionMatrix,
    graph: &AdjacencyGraph,
    config: &PriorConfig,
    hyper: &HyperParams,
    cfg: &SamplerConfig,
) -> Result<ChainTrace> {
    cfg.validate()?;
    let sampler = GibbsSampler::new(x, graph, config, hyper, cfg.seed)?.with_random_order(cfg.randomize_order);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel_width)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        let state = initialize(x, hyper, cfg.init, cfg.seed)?;
        run_from_state(&sampler, state, cfg)
    })
}

/// Continue sampling from a given state; iterations are numbered from 1.
pub fn run_from_state(sampler: &GibbsSampler<'_>, mut state: ChainState, cfg: &SamplerConfig) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut states = cfg.record_states.then(Vec::new);
    let mut last_kept = None;
    for it in 1..=cfg.iterations {
        sampler.sweep(&mut state, it).map_err(|e| e.at_iteration(it))?;
        if cfg.keeps(it) {
            let log_score = sampler.score(&state).map_err(|e| e.at_iteration(it))?;
            debug!("iteration {it}: H = {}, log score = {log_score:.3}", state.n_clusters());
            records.push(TraceRecord {
                iteration: it,
                n_clusters: state.n_clusters(),
                labels: state.partition.labels().to_vec(),
                log_score,
            });
            if let Some(s) = states.as_mut() {
                s.push(state.clone());
            }
            last_kept = Some(state.clone());
        }
    }
    Ok(ChainTrace {
        records,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        seed: cfg.seed,
        final_state: last_kept,
        states,
    })
}
