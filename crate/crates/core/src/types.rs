//! Domain types shared by every stage of the pipeline.
//!
//! Indices are 0-based throughout the library. Cluster labels are stored
//! 0-based and canonicalized to order of first appearance; file writers add 1.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Observed p × n profile: genes in rows, spots in columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMatrix {
    values: DMatrix<f64>,
    gene_ids: Vec<String>,
    spot_ids: Vec<String>,
}

impl ExpressionMatrix {
    pub fn new(values: DMatrix<f64>, gene_ids: Vec<String>, spot_ids: Vec<String>) -> Result<Self> {
        let (p, n) = values.shape();
        if p < 1 {
            return Err(Error::InvalidInput("expression matrix needs at least one gene".into()));
        }
        if n < 2 {
            return Err(Error::InvalidInput("expression matrix needs at least two spots".into()));
        }
        if gene_ids.len() != p || spot_ids.len() != n {
            return Err(Error::InvalidInput(format!(
                "{p}x{n} matrix with {} gene ids and {} spot ids",
                gene_ids.len(),
                spot_ids.len()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at gene {}, spot {}",
                gene_ids[idx % p],
                spot_ids[idx / p]
            )));
        }
        if let Some(dup) = first_duplicate(&gene_ids) {
            return Err(Error::InvalidInput(format!("duplicate gene id `{dup}`")));
        }
        if let Some(dup) = first_duplicate(&spot_ids) {
            return Err(Error::InvalidInput(format!("duplicate spot id `{dup}`")));
        }
        Ok(Self {
            values,
            gene_ids,
            spot_ids,
        })
    }

    /// Wrap a matrix with ids `g1..gp` and `s1..sn`.
    pub fn with_generated_ids(values: DMatrix<f64>) -> Result<Self> {
        let genes = (1..=values.nrows()).map(|j| format!("g{j}")).collect();
        let spots = (1..=values.ncols()).map(|i| format!("s{i}")).collect();
        Self::new(values, genes, spots)
    }

    pub fn n_genes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_spots(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn spot_ids(&self) -> &[String] {
        &self.spot_ids
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Vec<String>, Vec<String>) {
        (self.values, self.gene_ids, self.spot_ids)
    }
}

pub(crate) fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.iter().find(|id| !seen.insert(id.as_str())).map(String::as_str)
}

/// Spot positions, one `[x, y]` row per spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialCoords {
    points: Vec<[f64; 2]>,
}

impl SpatialCoords {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate for spot {i}")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }
}

/// Undirected neighbour graph over spots, without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    n: usize,
    /// Sorted, deduplicated, each pair stored once with `i < j`.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({a}, {b}) out of range for {n} spots"
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at spot {a}")));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        list.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &list {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self {
            n,
            edges: list,
            neighbors,
        })
    }

    /// Graph with no edges; the MRF term vanishes on it.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }
}

/// Cluster assignment with labels `0..H` in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartitionState {
    pub(crate) labels: Vec<usize>,
    pub(crate) counts: Vec<usize>,
}

impl PartitionState {
    /// Canonicalize arbitrary labels.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map: HashMap<usize, usize> = HashMap::new();
        let mut counts = Vec::new();
        let labels = raw
            .iter()
            .map(|&l| {
                let next = map.len();
                let c = *map.entry(l).or_insert(next);
                if c == counts.len() {
                    counts.push(0);
                }
                counts[c] += 1;
                c
            })
            .collect();
        Self { labels, counts }
    }

    pub fn single(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            counts: if n > 0 { vec![n] } else { Vec::new() },
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels shifted to `1..=H` for output.
    pub fn one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    /// Number of graph edges with both endpoints in each cluster.
    pub fn within_cluster_edges(&self, graph: &AdjacencyGraph) -> Vec<usize> {
        let mut out = vec![0; self.n_clusters()];
        for &(a, b) in graph.edges() {
            if self.labels[a] == self.labels[b] {
                out[self.labels[a]] += 1;
            }
        }
        out
    }

    /// Whether `labels` is already in first-appearance order with no gaps.
    pub fn is_canonical(labels: &[usize]) -> bool {
        let mut next = 0;
        for &l in labels {
            if l == next {
                next += 1;
            } else if l > next {
                return false;
            }
        }
        true
    }
}

/// Symmetric positive-definite matrix with its lower Cholesky factor cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
    log_det: f64,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput("covariance must be square".into()));
        }
        let lower =
            linalg::cholesky_lower(&matrix).ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
        let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { matrix, lower, log_det })
    }

    pub fn identity(q: usize) -> Self {
        Self {
            matrix: DMatrix::identity(q, q),
            lower: DMatrix::identity(q, q),
            log_det: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `L⁻¹ v` for the cached factor `L`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(v)
            .expect("cholesky factor has positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        linalg::spd_inverse_from_lower(&self.lower)
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SpdMatrix::new(m)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(s: SpdMatrix) -> Self {
        s.matrix
    }
}

/// Loadings, noise variances, cluster means and shared latent covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelParams {
    /// p × q.
    pub loadings: DMatrix<f64>,
    /// Diagonal of Λ, length p.
    pub noise_var: DVector<f64>,
    /// One length-q mean per cluster.
    pub means: Vec<DVector<f64>>,
    pub cov: SpdMatrix,
}

impl FactorModelParams {
    pub fn n_genes(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.loadings.ncols()
    }
}

/// q × n latent factors, column i is `y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFactors(pub DMatrix<f64>);

impl LatentFactors {
    pub fn latent_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_spots(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorFamily {
    #[serde(rename = "DP")]
    Dp,
    #[serde(rename = "PY")]
    Py,
    #[serde(rename = "MFM")]
    Mfm,
}

impl fmt::Display for PriorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorFamily::Dp => "DP",
            PriorFamily::Py => "PY",
            PriorFamily::Mfm => "MFM",
        })
    }
}

impl FromStr for PriorFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "DP" => Ok(PriorFamily::Dp),
            "PY" => Ok(PriorFamily::Py),
            "MFM" => Ok(PriorFamily::Mfm),
            other => Err(format!("unknown prior family `{other}` (expected DP, PY or MFM)")),
        }
    }
}

/// Prior on the number of mixture components `m ≥ 1` for MFM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComponentPrior {
    /// `m − 1 ~ Poisson(lambda)`.
    ShiftedPoisson { lambda: f64 },
    /// Explicit pmf; entry `k` is `p(m = k + 1)`.
    Pmf(Vec<f64>),
}

impl Default for ComponentPrior {
    fn default() -> Self {
        ComponentPrior::ShiftedPoisson { lambda: 1.0 }
    }
}

impl ComponentPrior {
    /// `ln p(m)`, `-inf` outside the support.
    pub fn ln_pmf(&self, m: usize) -> f64 {
        if m == 0 {
            return f64::NEG_INFINITY;
        }
        match self {
            ComponentPrior::ShiftedPoisson { lambda } => {
                let k = (m - 1) as f64;
                k * lambda.ln() - lambda - statrs::function::gamma::ln_gamma(k + 1.0)
            }
            ComponentPrior::Pmf(p) => p.get(m - 1).map_or(f64::NEG_INFINITY, |v| v.ln()),
        }
    }
}

/// Cluster-abundance field `g_h` of the MRF term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrfField {
    pub default_g: f64,
    /// Overrides for the first clusters; later clusters use `default_g`.
    #[serde(default)]
    pub per_cluster: Vec<f64>,
}

impl MrfField {
    pub fn uniform(g: f64) -> Self {
        Self {
            default_g: g,
            per_cluster: Vec::new(),
        }
    }

    pub fn g(&self, h: usize) -> f64 {
        self.per_cluster.get(h).copied().unwrap_or(self.default_g)
    }
}

impl Default for MrfField {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

/// Gibbs-type partition prior plus MRF modifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub family: PriorFamily,
    pub beta: f64,
    pub delta: f64,
    #[serde(default)]
    pub component_prior: ComponentPrior,
    pub mrf_d: f64,
    #[serde(default)]
    pub mrf_g: MrfField,
    /// Admit PY with `delta < 0` and evaluate its weights as written.
    #[serde(default)]
    pub allow_nonstandard_py: bool,
}

impl PriorConfig {
    pub fn dp(beta: f64) -> Self {
        Self {
            family: PriorFamily::Dp,
            beta,
            delta: 0.0,
            component_prior: ComponentPrior::default(),
            mrf_d: 0.0,
            mrf_g: MrfField::default(),
            allow_nonstandard_py: false,
        }
    }

    pub fn py(beta: f64, delta: f64) -> Self {
        Self {
            family: PriorFamily::Py,
            delta,
            ..Self::dp(beta)
        }
    }

    /// MFM with `delta = -beta` and `H - 1 ~ Poisson(1)`.
    pub fn mfm(beta: f64) -> Self {
        Self {
            family: PriorFamily::Mfm,
            delta: -beta,
            ..Self::dp(beta)
        }
    }

    pub fn with_mrf(mut self, d: f64) -> Self {
        self.mrf_d = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::config("prior.beta", "must be finite"));
        }
        if !self.delta.is_finite() || self.delta >= 1.0 {
            return Err(Error::config("prior.delta", format!("must be < 1, got {}", self.delta)));
        }
        match self.family {
            PriorFamily::Dp => {
                if self.delta != 0.0 {
                    return Err(Error::config("prior.delta", "DP requires delta = 0"));
                }
                if self.beta <= 0.0 {
                    return Err(Error::config("prior.beta", "DP requires beta > 0"));
                }
            }
            PriorFamily::Py => {
                if self.delta < 0.0 {
                    if !self.allow_nonstandard_py {
                        return Err(Error::config(
                            "prior.delta",
                            format!(
                                "PY requires delta in [0, 1), got {} (pass --allow-nonstandard-py to accept)",
                                self.delta
                            ),
                        ));
                    }
                    if self.beta <= 0.0 {
                        return Err(Error::config("prior.beta", "PY with delta < 0 requires beta > 0"));
                    }
                } else if self.beta <= -self.delta {
                    return Err(Error::config("prior.beta", "PY requires beta > -delta"));
                }
            }
            PriorFamily::Mfm => {
                if self.beta <= 0.0 {
                    return Err(Error::config("prior.beta", "MFM requires beta > 0"));
                }
                if self.delta != -self.beta {
                    return Err(Error::config("prior.delta", "MFM requires delta = -beta"));
                }
                match &self.component_prior {
                    ComponentPrior::ShiftedPoisson { lambda } => {
                        if !(lambda.is_finite() && *lambda > 0.0) {
                            return Err(Error::config("prior.mfm_lambda", "must be > 0"));
                        }
                    }
                    ComponentPrior::Pmf(p) => {
                        if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                            return Err(Error::config("prior.mfm_pmf", "entries must be finite and >= 0"));
                        }
                        let total: f64 = p.iter().sum();
                        if (total - 1.0).abs() > 1e-12 {
                            return Err(Error::config("prior.mfm_pmf", format!("sums to {total}, not 1")));
                        }
                    }
                }
            }
        }
        if !self.mrf_d.is_finite() || self.mrf_d < 0.0 {
            return Err(Error::config("prior.d", format!("must be >= 0, got {}", self.mrf_d)));
        }
        if !self.mrf_g.default_g.is_finite() || self.mrf_g.per_cluster.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("prior.g", "must be finite"));
        }
        Ok(())
    }
}

/// Prior on the shared latent covariance Σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum CovPrior {
    /// `p(Σ) ∝ |Σ|^{-(q+1)/2}`.
    #[default]
    Jeffreys,
    /// Proper inverse-Wishart; Jeffreys is the `scale → 0, dof → 0` limit.
    InverseWishart { scale: DMatrix<f64>, dof: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Loadings precision scale: `w_jl ~ N(0, σ_j² / tau_w)`.
    pub tau_w: f64,
    /// Mean precision scale: `μ_h ~ N(0, Σ / tau_mu)`.
    pub tau_mu: f64,
    /// Inverse-gamma shape for σ_j².
    pub a: f64,
    /// Inverse-gamma scale for σ_j².
    pub b: f64,
    /// Latent dimension.
    pub q: usize,
    #[serde(default)]
    pub cov_prior: CovPrior,
}

impl HyperParams {
    pub fn new(q: usize) -> Self {
        Self {
            tau_w: 1.0,
            tau_mu: 1.0,
            a: 1.0,
            b: 1.0,
            q,
            cov_prior: CovPrior::Jeffreys,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("hyper.tau_w", self.tau_w),
            ("hyper.tau_mu", self.tau_mu),
            ("hyper.a", self.a),
            ("hyper.b", self.b),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be > 0, got {v}")));
            }
        }
        if self.q < 1 {
            return Err(Error::config("hyper.q", "must be >= 1"));
        }
        if let CovPrior::InverseWishart { scale, dof } = &self.cov_prior {
            if scale.shape() != (self.q, self.q) {
                return Err(Error::config("hyper.cov_prior", "scale must be q x q"));
            }
            if !(dof.is_finite() && *dof >= 0.0) {
                return Err(Error::config("hyper.cov_prior", "dof must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Full sampler state for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub partition: PartitionState,
    pub factors: LatentFactors,
    pub params: FactorModelParams,
}

impl ChainState {
    pub fn n_clusters(&self) -> usize {
        self.partition.n_clusters()
    }

    pub fn check_consistency(&self, x: &ExpressionMatrix) -> Result<()> {
        let (p, n) = (x.n_genes(), x.n_spots());
        let q = self.params.latent_dim();
        let ok = self.partition.len() == n
            && self.factors.0.shape() == (q, n)
            && self.params.loadings.nrows() == p
            && self.params.noise_var.len() == p
            && self.params.cov.dim() == q
            && self.params.means.len() == self.partition.n_clusters()
            && self.params.means.iter().all(|m| m.len() == q);
        if !ok {
            return Err(Error::InvalidInput(format!(
                "chain state dimensions do not match a {p}x{n} expression matrix"
            )));
        }
        if self.params.noise_var.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput("noise variances must be > 0".into()));
        }
        Ok(())
    }
}

/// One kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub n_clusters: usize,
    /// Canonical 0-based labels.
    pub labels: Vec<usize>,
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub records: Vec<TraceRecord>,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// State at the last kept iteration.
    pub final_state: Option<ChainState>,
    /// Full state per record, when requested.
    pub states: Option<Vec<ChainState>>,
}

impl ChainTrace {
    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        Self {
            records,
            burn_in: 0,
            thin: 1,
            seed: 0,
            final_state: None,
            states: None,
        }
    }

    pub fn n_spots(&self) -> Option<usize> {
        self.records.first().map(|r| r.labels.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn expression_rejects_duplicate_spot() {
        let err = ExpressionMatrix::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            vec!["g1".into()],
            vec!["s1".into(), "s1".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("s1"));
    }

    #[test]
    fn graph_dedups_and_symmetrizes() {
        let g = AdjacencyGraph::new(3, [(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert!(g.has_edge(1, 0));
        assert!(AdjacencyGraph::new(2, [(1, 1)]).is_err());
        assert!(AdjacencyGraph::new(2, [(0, 2)]).is_err());
    }

    #[test]
    fn within_cluster_edges_counts() {
        let g = AdjacencyGraph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let z = PartitionState::from_labels(&[7, 7, 3, 3]);
        assert_eq!(z.labels(), &[0, 0, 1, 1]);
        assert_eq!(z.within_cluster_edges(&g), vec![1, 1]);
    }

    #[test]
    fn prior_validation_names_keys() {
        let mut c = PriorConfig::dp(1.0);
        c.delta = 0.2;
        assert!(c.validate().unwrap_err().to_string().contains("prior.delta"));
        let py = PriorConfig::py(1.0, -0.1);
        assert!(py.validate().is_err());
        let py = PriorConfig {
            allow_nonstandard_py: true,
            ..py
        };
        py.validate().unwrap();
        assert!(PriorConfig::py(-0.3, 0.25).validate().is_err());
        let mut m = PriorConfig::mfm(1.0);
        m.delta = -0.5;
        assert!(m.validate().is_err());
        assert!(PriorConfig::mfm(1.0).with_mrf(-1.0).validate().is_err());
        let mut m = PriorConfig::mfm(1.0);
        m.component_prior = ComponentPrior::Pmf(vec![0.5, 0.4]);
        assert!(m.validate().unwrap_err().to_string().contains("prior.mfm_pmf"));
    }

    #[test]
    fn spd_roundtrip_is_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let s = SpdMatrix::new(m).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: SpdMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        assert!(SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(raw in proptest::collection::vec(0usize..6, 1..40)) {
            let once = PartitionState::from_labels(&raw);
            let twice = PartitionState::from_labels(once.labels());
            prop_assert_eq!(&once, &twice);
            prop_assert!(PartitionState::is_canonical(once.labels()));
            prop_assert_eq!(once.counts().iter().sum::<usize>(), raw.len());
            // Same induced set partition.
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    prop_assert_eq!(raw[i] == raw[j], once.labels()[i] == once.labels()[j]);
                }
            }
        }
    }
}
