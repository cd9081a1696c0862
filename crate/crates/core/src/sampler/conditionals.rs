//! Full conditional draws for the six blocks of the Gibbs sweep.
//!
//! The free functions (`sample_y`, `sample_w_row`, ...) evaluate one
//! conditional from a [`ChainState`] snapshot. The sweep uses the
//! `*Posterior` helpers so that factorizations shared across spots or genes
//! are computed once.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_lower, draw_with_covariance, draw_with_precision};
use crate::priors::Urn;
use crate::types::{AdjacencyGraph, ChainState, CovPrior, ExpressionMatrix, FactorModelParams, HyperParams, SpdMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Conditional of `y_i` given everything else:
/// precision `WᵀΛ⁻¹W + Σ⁻¹`, linear term `WᵀΛ⁻¹x_i + Σ⁻¹μ_h`.
#[derive(Debug, Clone)]
pub struct LatentPosterior {
    precision_lower: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    /// `WᵀΛ⁻¹`, q × p.
    projection: DMatrix<f64>,
}

impl LatentPosterior {
    pub fn new(params: &FactorModelParams) -> Result<Self> {
        let mut projection = params.loadings.transpose();
        for (j, mut col) in projection.column_iter_mut().enumerate() {
            col /= params.noise_var[j];
        }
        let cov_inv = params.cov.inverse();
        let precision = &projection * &params.loadings + &cov_inv;
        let precision_lower = cholesky_lower(&precision)
            .ok_or_else(|| Error::numerical("latent-factor precision is not positive definite"))?;
        Ok(Self {
            precision_lower,
            cov_inv,
            projection,
        })
    }

    /// `WᵀΛ⁻¹X` for all spots at once.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.projection * x
    }

    pub fn cov_inv(&self) -> &DMatrix<f64> {
        &self.cov_inv
    }

    /// Posterior covariance `Σ*`.
    pub fn covariance(&self) -> DMatrix<f64> {
        linalg::spd_inverse_from_lower(&self.precision_lower)
    }

    /// Posterior mean `Σ*(WᵀΛ⁻¹x_i + Σ⁻¹μ_h)` from a projected column.
    pub fn mean(&self, projected: DVectorView<'_, f64>, cov_inv_mu: &DVector<f64>) -> DVector<f64> {
        linalg::solve_with_lower(&self.precision_lower, &(projected + cov_inv_mu))
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        projected: DVectorView<'_, f64>,
        cov_inv_mu: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        draw_with_precision(&self.precision_lower, &(projected + cov_inv_mu), 1.0, rng)
    }
}

/// Draw `y_i ~ N(μ*, Σ*)`.
pub fn sample_y<R: Rng + ?Sized>(
    i: usize,
    state: &ChainState,
    x: &ExpressionMatrix,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let post = LatentPosterior::new(&state.params)?;
    let projected = &post.projection * x.values().column(i);
    let h = state.partition.labels()[i];
    let cov_inv_mu = &post.cov_inv * &state.params.means[h];
    Ok(post.draw(projected.column(0), &cov_inv_mu, rng))
}

/// Conditional of a loadings row: precision `(YYᵀ + τ_w I) / σ_j²`.
#[derive(Debug, Clone)]
pub struct LoadingPosterior {
    precision_lower: DMatrix<f64>,
}

impl LoadingPosterior {
    pub fn new(y: &DMatrix<f64>, tau_w: f64) -> Result<Self> {
        let q = y.nrows();
        let a = y * y.transpose() + DMatrix::identity(q, q) * tau_w;
        let precision_lower =
            cholesky_lower(&a).ok_or_else(|| Error::numerical("YYᵀ + τ_w I is not positive definite"))?;
        Ok(Self { precision_lower })
    }

    pub fn mean(&self, y_xj: &DVector<f64>) -> DVector<f64> {
        linalg::solve_with_lower(&self.precision_lower, y_xj)
    }

    /// Draw given `Y x_jᵀ` and the current `σ_j²`.
    pub fn draw<R: Rng + ?Sized>(&self, y_xj: &DVector<f64>, sigma2: f64, rng: &mut R) -> DVector<f64> {
        draw_with_precision(&self.precision_lower, y_xj, sigma2.sqrt(), rng)
    }
}

/// Draw `w_j· ~ N((YYᵀ + τ_w I)⁻¹ Y x_j·ᵀ, σ_j² (YYᵀ + τ_w I)⁻¹)`.
pub fn sample_w_row<R: Rng + ?Sized>(
    j: usize,
    state: &ChainState,
    x: &ExpressionMatrix,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let y = &state.factors.0;
    let post = LoadingPosterior::new(y, hyper.tau_w)?;
    let y_xj = y * x.values().row(j).transpose();
    Ok(post.draw(&y_xj, state.params.noise_var[j], rng))
}

/// Inverse-gamma parameters `(a*, b*)` for σ_j².
pub fn noise_var_posterior(residual_ss: f64, loading_norm2: f64, n: usize, hyper: &HyperParams) -> (f64, f64) {
    let shape = (hyper.q + n) as f64 / 2.0 + hyper.a;
    let scale = 0.5 * (residual_ss + hyper.tau_w * loading_norm2) + hyper.b;
    (shape, scale)
}

/// Draw from `IG(shape, scale)` (density ∝ x^{-shape-1} e^{-scale/x}).
pub fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive inverse-gamma parameters");
    1.0 / g.sample(rng)
}

/// Draw `σ_j² ~ IG(a*, b*)`.
pub fn sample_sigma2<R: Rng + ?Sized>(
    j: usize,
    state: &ChainState,
    x: &ExpressionMatrix,
    hyper: &HyperParams,
    rng: &mut R,
) -> f64 {
    let w = state.params.loadings.row(j);
    let fitted = w * &state.factors.0;
    let residual = x.values().row(j) - fitted;
    let (shape, scale) = noise_var_posterior(residual.norm_squared(), w.norm_squared(), x.n_spots(), hyper);
    draw_inverse_gamma(shape, scale, rng)
}

/// Draw `μ ~ N(Σ y / (n_h + τ_μ), Σ / (n_h + τ_μ))` from the cluster's sum of factors.
pub fn draw_mean<R: Rng + ?Sized>(
    sum_y: &DVector<f64>,
    n_h: usize,
    cov: &SpdMatrix,
    tau_mu: f64,
    rng: &mut R,
) -> DVector<f64> {
    let k = n_h as f64 + tau_mu;
    draw_with_covariance(&(sum_y / k), cov, 1.0 / k.sqrt(), rng)
}

/// Draw `μ_h` for a non-empty cluster.
pub fn sample_mu<R: Rng + ?Sized>(
    h: usize,
    state: &ChainState,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n_h = *state
        .partition
        .counts()
        .get(h)
        .filter(|&&c| c > 0)
        .ok_or_else(|| Error::InvalidInput(format!("cluster {h} is empty or absent")))?;
    let y = &state.factors.0;
    let mut sum = DVector::zeros(y.nrows());
    for (i, &l) in state.partition.labels().iter().enumerate() {
        if l == h {
            sum += y.column(i);
        }
    }
    Ok(draw_mean(&sum, n_h, &state.params.cov, hyper.tau_mu, rng))
}

/// Inverse-Wishart parameters `(Φ, ν)` for Σ:
/// `Φ = Σ_h [Σ_{z_i=h} (y_i − μ_h)(y_i − μ_h)ᵀ + τ_μ μ_h μ_hᵀ]`, `ν = n + H`,
/// plus the proper-prior scale and degrees of freedom when configured.
pub fn covariance_posterior(state: &ChainState, hyper: &HyperParams) -> (DMatrix<f64>, f64) {
    let y = &state.factors.0;
    let q = y.nrows();
    let means = &state.params.means;
    let mut phi = DMatrix::zeros(q, q);
    for (i, &h) in state.partition.labels().iter().enumerate() {
        let r = y.column(i) - &means[h];
        phi.ger(1.0, &r, &r, 1.0);
    }
    for mu in means {
        phi.ger(hyper.tau_mu, mu, mu, 1.0);
    }
    let mut dof = (y.ncols() + means.len()) as f64;
    if let CovPrior::InverseWishart { scale, dof: nu0 } = &hyper.cov_prior {
        phi += scale;
        dof += nu0;
    }
    (phi, dof)
}

/// Draw `Σ ~ IW(Φ, ν)`.
pub fn sample_sigma<R: Rng + ?Sized>(state: &ChainState, hyper: &HyperParams, rng: &mut R) -> Result<SpdMatrix> {
    let (phi, dof) = covariance_posterior(state, hyper);
    linalg::inverse_wishart(&phi, dof, rng).map_err(|e| match e {
        Error::Numerical { message, iteration } => Error::Numerical {
            iteration,
            message: format!("degenerate latent configuration: {message}"),
        },
        other => other,
    })
}

/// Scratch space for the membership step, valid while Σ is fixed.
#[derive(Debug, Clone)]
pub(crate) struct MembershipWorkspace {
    /// `L⁻¹ y_i` per spot.
    white_y: DMatrix<f64>,
    /// `L⁻¹ μ_h` per cluster.
    white_mu: Vec<DVector<f64>>,
    log_det: f64,
    neighbours: Vec<usize>,
    log_weights: Vec<f64>,
}

impl MembershipWorkspace {
    pub(crate) fn new(state: &ChainState) -> Self {
        let cov = &state.params.cov;
        let white_y = cov
            .lower()
            .solve_lower_triangular(&state.factors.0)
            .expect("cholesky factor has positive diagonal");
        let white_mu = state.params.means.iter().map(|m| cov.whiten(m)).collect();
        Self {
            white_y,
            white_mu,
            log_det: cov.log_det(),
            neighbours: Vec::new(),
            log_weights: Vec::new(),
        }
    }
}

/// Categorical draw from unnormalized log weights.
pub fn draw_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in log_weights.iter().enumerate() {
        u -= (w - max).exp();
        if u < 0.0 {
            return k;
        }
    }
    // Rounding fallthrough: last index with non-zero weight.
    log_weights.iter().rposition(|w| w.is_finite()).unwrap_or(0)
}

/// Reassign spot `i`. Removing `i` from a singleton drops that cluster
/// (labels above it shift down); opening a new cluster draws its mean
/// immediately. Returns the new label.
pub(crate) fn reassign<R: Rng + ?Sized>(
    i: usize,
    state: &mut ChainState,
    ws: &mut MembershipWorkspace,
    graph: &AdjacencyGraph,
    urn: &Urn<'_>,
    hyper: &HyperParams,
    rng: &mut R,
) -> usize {
    let q = state.factors.0.nrows() as f64;
    let part = &mut state.partition;
    let old = part.labels[i];
    part.counts[old] -= 1;
    if part.counts[old] == 0 {
        part.counts.remove(old);
        state.params.means.remove(old);
        ws.white_mu.remove(old);
        for l in part.labels.iter_mut() {
            if *l > old && *l != usize::MAX {
                *l -= 1;
            }
        }
        part.labels[i] = usize::MAX;
    }
    let h_count = part.counts.len();

    ws.neighbours.clear();
    ws.neighbours.resize(h_count, 0);
    for &j in graph.neighbors(i) {
        let l = part.labels[j];
        if l < h_count {
            ws.neighbours[l] += 1;
        }
    }

    let yi = ws.white_y.column(i);
    let base = -0.5 * (q * LN_2PI + ws.log_det);
    ws.log_weights.clear();
    for h in 0..h_count {
        let d2 = (yi - &ws.white_mu[h]).norm_squared();
        ws.log_weights
            .push(urn.existing(part.counts[h], ws.neighbours[h], h) + base - 0.5 * d2);
    }
    // Marginal of y_i under a fresh mean: N(0, (1 + 1/τ_μ) Σ).
    let c = 1.0 + 1.0 / hyper.tau_mu;
    ws.log_weights
        .push(urn.new_cluster(h_count) + base - 0.5 * (q * c.ln() + yi.norm_squared() / c));

    let k = draw_categorical(&ws.log_weights, rng);
    if k == h_count {
        let y_i: DVector<f64> = state.factors.0.column(i).into_owned();
        let mu = draw_mean(&y_i, 1, &state.params.cov, hyper.tau_mu, rng);
        ws.white_mu.push(state.params.cov.whiten(&mu));
        state.params.means.push(mu);
        part.counts.push(1);
    } else {
        part.counts[k] += 1;
    }
    part.labels[i] = k;
    k
}

/// Draw a new label for spot `i` and apply it to `state`.
pub fn sample_z<R: Rng + ?Sized>(
    i: usize,
    state: &mut ChainState,
    graph: &AdjacencyGraph,
    urn: &Urn<'_>,
    hyper: &HyperParams,
    rng: &mut R,
) -> usize {
    let mut ws = MembershipWorkspace::new(state);
    reassign(i, state, &mut ws, graph, urn, hyper, rng)
}

/// Relabel clusters in order of first appearance, permuting means to match.
pub fn canonicalize(state: &mut ChainState) {
    let part = &mut state.partition;
    let h = part.counts.len();
    let mut map = vec![usize::MAX; h];
    let mut next = 0;
    for l in part.labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    debug_assert_eq!(next, h, "empty cluster survived compaction");
    let mut counts = vec![0; h];
    let mut means = vec![DVector::zeros(0); h];
    for (old, new) in map.iter().enumerate() {
        counts[*new] = part.counts[old];
        means[*new] = std::mem::replace(&mut state.params.means[old], DVector::zeros(0));
    }
    part.counts = counts;
    state.params.means = means;
}
