//! Gibbs-type partition priors with the MRF subgraph modifier.
//!
//! The unnormalized prior mass of a partition `z` with `H` non-empty clusters is
//!
//! ```text
//! V_n(H) · Π_h ψ(G_h) · (1 − δ)_{n_h − 1},   ψ(G_h) = exp(n_h g_h + d |E_h|)
//! ```
//!
//! where `|E_h|` counts graph edges inside cluster `h` and `(a)_k` is the
//! ascending factorial. All quantities are handled in log space.

use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::types::{AdjacencyGraph, ComponentPrior, PartitionState, PriorConfig, PriorFamily};

/// Relative tail tolerance for the MFM series.
pub const MFM_TRUNCATION_TOL: f64 = 1e-12;

const MFM_MAX_TERMS: usize = 1_000_000;

/// `ln (a)_k = ln Γ(a + k) − ln Γ(a)`.
pub fn ln_rising(a: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        ln_gamma(a + k as f64) - ln_gamma(a)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log V_n(H)` for the configured family.
pub fn log_vn(config: &PriorConfig, n: usize, h: usize) -> Result<f64> {
    config.validate()?;
    if h < 1 || h > n {
        return Err(Error::InvalidInput(format!(
            "V_n(H) needs 1 <= H <= n, got n={n}, H={h}"
        )));
    }
    Ok(log_vn_unchecked(config, n, h, MFM_TRUNCATION_TOL))
}

fn log_vn_unchecked(config: &PriorConfig, n: usize, h: usize, tol: f64) -> f64 {
    let beta = config.beta;
    match config.family {
        PriorFamily::Dp => h as f64 * beta.ln() - ln_rising(beta, n),
        PriorFamily::Py => {
            let mut num = 0.0;
            for k in 1..h {
                let f = beta + k as f64 * config.delta;
                if f <= 0.0 {
                    // Only reachable for delta < 0: at most beta/|delta| clusters.
                    return f64::NEG_INFINITY;
                }
                num += f.ln();
            }
            num - ln_rising(beta + 1.0, n - 1)
        }
        PriorFamily::Mfm => mfm_log_vn(beta, &config.component_prior, n, h, tol),
    }
}

/// Log of the MFM term for `m` components.
fn mfm_log_term(beta: f64, prior: &ComponentPrior, n: usize, h: usize, m: usize) -> f64 {
    // Π_{k=1}^{H-1} (m - k) = Γ(m) / Γ(m - H + 1)
    let falling = ln_gamma(m as f64) - ln_gamma((m - h + 1) as f64);
    prior.ln_pmf(m) + h as f64 * beta.ln() + falling - ln_rising(m as f64 * beta + 1.0, n - 1)
}

/// `log Σ_{m ≥ H} p(m) β^H Π_{k<H}(m − k) / (mβ + 1)_{n−1}`.
///
/// Summation stops once successive terms shrink and the geometric tail bound
/// drops below `tol` times the running sum.
pub fn mfm_log_vn(beta: f64, prior: &ComponentPrior, n: usize, h: usize, tol: f64) -> f64 {
    let last = match prior {
        ComponentPrior::Pmf(p) => p.len(),
        ComponentPrior::ShiftedPoisson { .. } => h + MFM_MAX_TERMS,
    };
    let mut sum = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    let ln_tol = tol.ln();
    for m in h..=last {
        let t = mfm_log_term(beta, prior, n, h, m);
        sum = log_add(sum, t);
        if matches!(prior, ComponentPrior::ShiftedPoisson { .. }) && prev.is_finite() {
            let log_ratio = t - prev;
            if log_ratio < 0.0 {
                let r = log_ratio.exp();
                let tail = t + (r / (1.0 - r)).ln();
                if tail < sum + ln_tol {
                    break;
                }
            }
        }
        prev = t;
    }
    sum
}

/// Memoized `log V_n(H)` for a fixed `n`.
#[derive(Debug)]
pub struct LogWeightTable {
    config: PriorConfig,
    n: usize,
    cache: Vec<OnceLock<f64>>,
}

impl LogWeightTable {
    pub fn new(config: &PriorConfig, n: usize) -> Result<Self> {
        config.validate()?;
        if n == 0 {
            return Err(Error::InvalidInput("weight table needs n >= 1".into()));
        }
        Ok(Self {
            config: config.clone(),
            n,
            cache: (0..=n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }

    /// `log V_n(H)`; `-inf` for `H` outside `1..=n`.
    pub fn log_vn(&self, h: usize) -> f64 {
        if h < 1 || h > self.n {
            return f64::NEG_INFINITY;
        }
        *self.cache[h].get_or_init(|| log_vn_unchecked(&self.config, self.n, h, MFM_TRUNCATION_TOL))
    }

    /// `log V_n(H + 1) − log V_n(H)`.
    pub fn log_new_cluster_ratio(&self, h: usize) -> f64 {
        self.log_vn(h + 1) - self.log_vn(h)
    }
}

/// `log ψ(G_h) = n_h g_h + d |E_h|`.
pub fn log_psi(subgraph_edges: usize, n_h: usize, g_h: f64, d: f64) -> f64 {
    n_h as f64 * g_h + d * subgraph_edges as f64
}

/// Unnormalized log prior mass of a partition.
pub fn log_partition_prior(z: &PartitionState, graph: &AdjacencyGraph, table: &LogWeightTable) -> Result<f64> {
    if z.len() != graph.n() || z.len() != table.n() {
        return Err(Error::InvalidInput(format!(
            "partition of {} spots, graph of {}, weights for n = {}",
            z.len(),
            graph.n(),
            table.n()
        )));
    }
    let config = table.config();
    let edges = z.within_cluster_edges(graph);
    let mut total = table.log_vn(z.n_clusters());
    for (h, (&n_h, &e_h)) in z.counts().iter().zip(&edges).enumerate() {
        total += log_psi(e_h, n_h, config.mrf_g.g(h), config.mrf_d);
        total += ln_rising(1.0 - config.delta, n_h - 1);
    }
    Ok(total)
}

/// Prior-only reassignment weights for one spot.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnWeights {
    /// Cluster sizes with the spot removed, empty clusters dropped.
    pub counts: Vec<usize>,
    /// Log weights: one per entry of `counts`, then the new-cluster weight.
    pub log_weights: Vec<f64>,
    /// Original label of each retained cluster.
    pub source_labels: Vec<usize>,
}

/// Urn scheme bound to a weight table; the sampler's inner loop calls this.
#[derive(Debug, Clone, Copy)]
pub struct Urn<'a> {
    pub table: &'a LogWeightTable,
}

impl<'a> Urn<'a> {
    pub fn new(table: &'a LogWeightTable) -> Self {
        Self { table }
    }

    /// `log(n_{h,-i} − δ) + d · (#neighbours in h) + g_h`.
    #[inline]
    pub fn existing(&self, count_without: usize, neighbours_in_cluster: usize, h: usize) -> f64 {
        let c = self.table.config();
        let base = count_without as f64 - c.delta;
        assert!(base > 0.0, "n_h,-i - delta must be positive");
        base.ln() + c.mrf_d * neighbours_in_cluster as f64 + c.mrf_g.g(h)
    }

    /// `log V_n(H+1) − log V_n(H) + g_{H+1}` for `H` remaining clusters.
    #[inline]
    pub fn new_cluster(&self, remaining: usize) -> f64 {
        let c = self.table.config();
        if remaining == 0 {
            return c.mrf_g.g(0);
        }
        self.table.log_new_cluster_ratio(remaining) + c.mrf_g.g(remaining)
    }
}

/// Prior urn weights for moving spot `i`, computed from scratch.
pub fn urn_log_weights(
    i: usize,
    z: &PartitionState,
    graph: &AdjacencyGraph,
    table: &LogWeightTable,
) -> Result<UrnWeights> {
    if z.len() != graph.n() || z.len() != table.n() || i >= z.len() {
        return Err(Error::InvalidInput("urn weights: inconsistent sizes".into()));
    }
    let own = z.labels()[i];
    let mut source_labels = Vec::new();
    let mut counts = Vec::new();
    let mut remap = vec![usize::MAX; z.n_clusters()];
    for (h, &c) in z.counts().iter().enumerate() {
        let c = if h == own { c - 1 } else { c };
        if c > 0 {
            remap[h] = counts.len();
            counts.push(c);
            source_labels.push(h);
        }
    }
    let mut nbr = vec![0usize; counts.len()];
    for &j in graph.neighbors(i) {
        let k = remap[z.labels()[j]];
        if k != usize::MAX {
            nbr[k] += 1;
        }
    }
    let urn = Urn::new(table);
    let mut log_weights: Vec<f64> = counts
        .iter()
        .zip(&nbr)
        .enumerate()
        .map(|(k, (&c, &e))| urn.existing(c, e, k))
        .collect();
    log_weights.push(urn.new_cluster(counts.len()));
    Ok(UrnWeights {
        counts,
        log_weights,
        source_labels,
    })
}
