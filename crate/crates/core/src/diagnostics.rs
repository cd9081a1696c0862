//! Self-checks for the prior and the sampler.
//!
//! Two kinds: exact enumeration of the partition prior over every set
//! partition of a few items, and Monte Carlo comparisons of each Gibbs
//! conditional against a reference built independently from the model
//! densities (normalized on a grid for continuous blocks, enumerated for
//! memberships).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::log_normal;
use crate::priors::{log_partition_prior, log_vn, LogWeightTable, Urn};
use crate::sampler::{sample_mu, sample_sigma, sample_sigma2, sample_w_row, sample_y, sample_z};
use crate::types::{
    AdjacencyGraph, ChainState, ExpressionMatrix, FactorModelParams, HyperParams, LatentFactors, PartitionState,
    PriorConfig, SpdMatrix,
};

/// All set partitions of `n` items as restricted growth strings, in
/// lexicographic order. There are Bell(n) of them.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for l in 0..=max + 1 {
            prefix.push(l);
            grow(prefix, max.max(l), n, out);
            prefix.pop();
        }
    }
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut prefix = vec![0];
    grow(&mut prefix, 0, n, &mut out);
    out
}

fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    logs.iter().map(|l| (l - max).exp() / total).collect()
}

/// Partition prior normalized over [`set_partitions`]`(n)`, ignoring space.
pub fn exact_partition_pmf(config: &PriorConfig, n: usize) -> Result<Vec<f64>> {
    let graph = AdjacencyGraph::empty(n);
    let table = LogWeightTable::new(config, n)?;
    let logs: Vec<f64> = set_partitions(n)
        .iter()
        .map(|z| log_partition_prior(&PartitionState::from_labels(z), &graph, &table))
        .collect::<Result<_>>()?;
    Ok(normalize_log(&logs))
}

/// Same pmf built by seating items one at a time with the predictive
/// rule: after `m` items in `H` clusters, join cluster `h` with weight
/// `(n_h − δ) V_{m+1}(H) / V_m(H)` or open one with `V_{m+1}(H+1) / V_m(H)`.
/// Each step is normalized on its own, so agreement with
/// [`exact_partition_pmf`] checks the recursion linking the weights.
pub fn urn_partition_pmf(config: &PriorConfig, n: usize) -> Result<Vec<f64>> {
    if config.mrf_d != 0.0 {
        return Err(Error::config("prior.d", "sequential urn composition needs d = 0"));
    }
    config.validate()?;
    let vn = |m: usize, h: usize| log_vn(config, m, h);
    set_partitions(n)
        .iter()
        .map(|z| {
            let mut counts: Vec<usize> = Vec::new();
            let mut log_p = 0.0;
            for (m, &l) in z.iter().enumerate() {
                if m == 0 {
                    counts.push(1);
                    continue;
                }
                let h = counts.len();
                let stay = vn(m + 1, h)? - vn(m, h)?;
                let mut logs: Vec<f64> = counts.iter().map(|&c| (c as f64 - config.delta).ln() + stay).collect();
                logs.push(vn(m + 1, h + 1)? - vn(m, h)?);
                log_p += normalize_log(&logs)[l].ln();
                if l == h {
                    counts.push(1);
                } else {
                    counts[l] += 1;
                }
            }
            Ok(log_p.exp())
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between the sample and `cdf`. Sorts `samples`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a one-sample KS distance over `n` draws.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// Pearson goodness-of-fit p-value; categories with zero probability must
/// be empty.
pub fn chi_square_pvalue(observed: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut df = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p > 0.0 {
            let e = p * n as f64;
            stat += (o as f64 - e).powi(2) / e;
            df += 1;
        } else if o > 0 {
            return 0.0;
        }
    }
    if df < 2 {
        return 1.0;
    }
    1.0 - ChiSquared::new((df - 1) as f64).expect("df >= 1").cdf(stat)
}

/// Distribution function of an unnormalized log density, tabulated by the
/// trapezoid rule on an even grid.
#[derive(Debug, Clone)]
pub struct GridCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    pub fn new(lo: f64, hi: f64, points: usize, log_density: impl Fn(f64) -> f64) -> Self {
        assert!(hi > lo && points >= 3);
        let step = (hi - lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|k| lo + step * k as f64).collect();
        let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let mut cdf = Vec::with_capacity(points);
        cdf.push(0.0);
        for k in 1..points {
            cdf.push(cdf[k - 1] + 0.5 * step * (dens[k - 1] + dens[k]));
        }
        let total = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { xs, cdf }
    }

    /// Grid over the sample range widened by a fifth on each side.
    pub fn around(samples: &[f64], positive: bool, log_density: impl Fn(f64) -> f64) -> Self {
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.2 * (hi - lo);
        let lo = if positive { (lo - pad).max(lo * 1e-3) } else { lo - pad };
        Self::new(lo, hi + pad, 200_001, log_density)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let step = self.xs[1] - self.xs[0];
        let k = (((x - self.xs[0]) / step) as usize).min(n - 2);
        let t = (x - self.xs[k]) / step;
        self.cdf[k] + t * (self.cdf[k + 1] - self.cdf[k])
    }
}

/// Outcome of one distributional check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// KS distance or Pearson statistic's p-value source.
    pub statistic: f64,
    pub p_value: f64,
}

/// Outcome of one moment check.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentOutcome {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    /// Allowed deviation.
    pub tolerance: f64,
}

impl MomentOutcome {
    pub fn passed(&self) -> bool {
        (self.estimate - self.target).abs() <= self.tolerance
    }
}

/// One-dimensional toy: p = 2 genes, q = 1, n = 3 spots on a path,
/// labels (0, 0, 1).
struct Toy {
    x: ExpressionMatrix,
    state: ChainState,
    hyper: HyperParams,
    graph: AdjacencyGraph,
    config: PriorConfig,
}

impl Toy {
    fn new() -> Self {
        let x = DMatrix::from_row_slice(2, 3, &[1.2, -0.4, 2.0, 0.3, 0.9, -1.1]);
        let state = ChainState {
            partition: PartitionState::from_labels(&[0, 0, 1]),
            factors: LatentFactors(DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 1.5])),
            params: FactorModelParams {
                loadings: DMatrix::from_row_slice(2, 1, &[0.8, -1.3]),
                noise_var: DVector::from_vec(vec![0.7, 1.5]),
                means: vec![DVector::from_vec(vec![0.2]), DVector::from_vec(vec![1.1])],
                cov: SpdMatrix::new(DMatrix::from_element(1, 1, 0.9)).expect("positive"),
            },
        };
        let hyper = HyperParams {
            tau_w: 1.3,
            tau_mu: 0.8,
            a: 2.0,
            b: 1.5,
            ..HyperParams::new(1)
        };
        Self {
            x: ExpressionMatrix::with_generated_ids(x).expect("finite"),
            state,
            hyper,
            graph: AdjacencyGraph::new(3, [(0, 1), (1, 2)]).expect("valid edges"),
            config: PriorConfig::mfm(1.0).with_mrf(0.7),
        }
    }

    fn w(&self, j: usize) -> f64 {
        self.state.params.loadings[(j, 0)]
    }

    fn y(&self, i: usize) -> f64 {
        self.state.factors.0[(0, i)]
    }

    fn mu(&self, h: usize) -> f64 {
        self.state.params.means[h][0]
    }

    fn sigma(&self) -> f64 {
        self.state.params.cov.matrix()[(0, 0)]
    }

    fn x(&self, j: usize, i: usize) -> f64 {
        self.x.values()[(j, i)]
    }
}

fn ks_check(name: &'static str, mut draws: Vec<f64>, positive: bool, log_density: impl Fn(f64) -> f64) -> CheckOutcome {
    let grid = GridCdf::around(&draws, positive, log_density);
    let d = ks_statistic(&mut draws, |v| grid.cdf(v));
    CheckOutcome {
        name,
        statistic: d,
        p_value: ks_pvalue(d, draws.len()),
    }
}

fn log_inverse_gamma(s: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * s.ln() - scale / s
}

/// Each conditional of the sweep against its reference on the toy model,
/// `draws` samples apiece.
pub fn conditional_checks(draws: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let toy = Toy::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // y_1 given everything else; spot 1 sits in cluster 0.
    let ys: Vec<f64> = (0..draws)
        .map(|_| sample_y(1, &toy.state, &toy.x, &mut rng).map(|v| v[0]))
        .collect::<Result<_>>()?;
    out.push(ks_check("latent factor y_i", ys, false, |y| {
        log_normal(y, toy.mu(0), toy.sigma())
            + (0..2)
                .map(|j| log_normal(toy.x(j, 1), toy.w(j) * y, toy.state.params.noise_var[j]))
                .sum::<f64>()
    }));

    // Loadings row 1.
    let s2 = toy.state.params.noise_var[1];
    let ws: Vec<f64> = (0..draws)
        .map(|_| sample_w_row(1, &toy.state, &toy.x, &toy.hyper, &mut rng).map(|v| v[0]))
        .collect::<Result<_>>()?;
    out.push(ks_check("loadings row w_j", ws, false, |w| {
        log_normal(w, 0.0, s2 / toy.hyper.tau_w)
            + (0..3).map(|i| log_normal(toy.x(1, i), w * toy.y(i), s2)).sum::<f64>()
    }));

    // Noise variance of gene 0.
    let ss: Vec<f64> = (0..draws)
        .map(|_| sample_sigma2(0, &toy.state, &toy.x, &toy.hyper, &mut rng))
        .collect();
    out.push(ks_check("noise variance sigma_j^2", ss, true, |s| {
        log_inverse_gamma(s, toy.hyper.a, toy.hyper.b)
            + log_normal(toy.w(0), 0.0, s / toy.hyper.tau_w)
            + (0..3)
                .map(|i| log_normal(toy.x(0, i), toy.w(0) * toy.y(i), s))
                .sum::<f64>()
    }));

    // Mean of cluster 0 (spots 0 and 1).
    let ms: Vec<f64> = (0..draws)
        .map(|_| sample_mu(0, &toy.state, &toy.hyper, &mut rng).map(|v| v[0]))
        .collect::<Result<_>>()?;
    let sig = toy.sigma();
    out.push(ks_check("cluster mean mu_h", ms, false, |m| {
        log_normal(m, 0.0, sig / toy.hyper.tau_mu) + log_normal(toy.y(0), m, sig) + log_normal(toy.y(1), m, sig)
    }));

    // Shared covariance, Jeffreys prior 1/s.
    let cs: Vec<f64> = (0..draws)
        .map(|_| sample_sigma(&toy.state, &toy.hyper, &mut rng).map(|c| c.matrix()[(0, 0)]))
        .collect::<Result<_>>()?;
    let labels = toy.state.partition.labels().to_vec();
    out.push(ks_check("latent covariance Sigma", cs, true, |s| {
        -s.ln()
            + (0..3).map(|i| log_normal(toy.y(i), toy.mu(labels[i]), s)).sum::<f64>()
            + (0..2)
                .map(|h| log_normal(toy.mu(h), 0.0, s / toy.hyper.tau_mu))
                .sum::<f64>()
    }));

    out.push(membership_check(&toy, draws, &mut rng)?);
    Ok(out)
}

/// Spot 0 of labels (0, 0, 1) can join spot 1, join spot 2, or open a new
/// cluster. Reference probabilities come from the full partition prior of
/// each outcome times the likelihood of `y_0`.
fn membership_check(toy: &Toy, draws: usize, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let table = LogWeightTable::new(&toy.config, 3)?;
    let sig = toy.sigma();
    let y0 = toy.y(0);
    let outcomes: [(Vec<usize>, f64); 3] = [
        (vec![0, 0, 1], log_normal(y0, toy.mu(0), sig)),
        (vec![1, 0, 1], log_normal(y0, toy.mu(1), sig)),
        (vec![2, 0, 1], log_normal(y0, 0.0, (1.0 + 1.0 / toy.hyper.tau_mu) * sig)),
    ];
    let logs: Vec<f64> = outcomes
        .iter()
        .map(|(z, lik)| Ok(log_partition_prior(&PartitionState::from_labels(z), &toy.graph, &table)? + lik))
        .collect::<Result<_>>()?;
    let probs = normalize_log(&logs);

    let urn = Urn::new(&table);
    let mut counts = [0u64; 3];
    for _ in 0..draws {
        let mut s = toy.state.clone();
        sample_z(0, &mut s, &toy.graph, &urn, &toy.hyper, rng);
        let l = s.partition.labels();
        let k = if l[0] == l[1] {
            0
        } else if l[0] == l[2] {
            1
        } else {
            2
        };
        counts[k] += 1;
    }
    let p = chi_square_pvalue(&counts, &probs);
    Ok(CheckOutcome {
        name: "cluster membership z_i",
        statistic: counts[0] as f64 / draws as f64 - probs[0],
        p_value: p,
    })
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn within_se(name: impl Into<String>, draws: &[f64], target: f64) -> MomentOutcome {
    let (m, se) = mean_and_se(draws);
    MomentOutcome {
        name: name.into(),
        estimate: m,
        target,
        tolerance: 3.0 * se,
    }
}

/// Moment identities of the conditionals in limiting or closed-form cases.
pub fn moment_checks(draws: usize, seed: u64) -> Result<Vec<MomentOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Near-noiseless genes carry no information: y_i concentrates at μ_h.
    {
        let (p, q, n) = (3, 2, 2);
        let state = ChainState {
            partition: PartitionState::single(n),
            factors: LatentFactors(DMatrix::zeros(q, n)),
            params: FactorModelParams {
                loadings: DMatrix::from_row_slice(p, q, &[1.0, 0.5, -0.3, 1.0, 0.2, 0.7]),
                noise_var: DVector::from_element(p, 1e12),
                means: vec![DVector::from_vec(vec![1.5, -2.0])],
                cov: SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]))?,
            },
        };
        let x = ExpressionMatrix::with_generated_ids(DMatrix::from_element(p, n, 3.0))?;
        let ys: Vec<DVector<f64>> = (0..draws)
            .map(|_| sample_y(0, &state, &x, &mut rng))
            .collect::<Result<_>>()?;
        for k in 0..q {
            let col: Vec<f64> = ys.iter().map(|v| v[k]).collect();
            out.push(within_se(
                format!("y_i mean -> mu_h [{k}] as noise -> inf"),
                &col,
                state.params.means[0][k],
            ));
        }
    }

    // Y = 0: loadings revert to the prior N(0, σ_j²/τ_w).
    {
        let hyper = HyperParams {
            tau_w: 2.0,
            ..HyperParams::new(2)
        };
        let state = ChainState {
            partition: PartitionState::single(4),
            factors: LatentFactors(DMatrix::zeros(2, 4)),
            params: FactorModelParams {
                loadings: DMatrix::zeros(3, 2),
                noise_var: DVector::from_vec(vec![0.5, 3.0, 1.0]),
                means: vec![DVector::zeros(2)],
                cov: SpdMatrix::identity(2),
            },
        };
        let x = ExpressionMatrix::with_generated_ids(DMatrix::from_fn(3, 4, |r, c| (r + 2 * c) as f64))?;
        let sq: Vec<f64> = (0..draws)
            .map(|_| sample_w_row(1, &state, &x, &hyper, &mut rng).map(|w| w[0] * w[0]))
            .collect::<Result<_>>()?;
        out.push(within_se("w_j variance at Y = 0", &sq, 3.0 / 2.0));
    }

    // Zero residual, zero loadings: σ_j² ~ IG((q+n)/2 + a, b).
    {
        let (q, n) = (3, 10);
        let hyper = HyperParams::new(q);
        let state = ChainState {
            partition: PartitionState::single(n),
            factors: LatentFactors(DMatrix::zeros(q, n)),
            params: FactorModelParams {
                loadings: DMatrix::zeros(4, q),
                noise_var: DVector::from_element(4, 1.0),
                means: vec![DVector::zeros(q)],
                cov: SpdMatrix::identity(q),
            },
        };
        let x = ExpressionMatrix::with_generated_ids(DMatrix::zeros(4, n))?;
        let s: Vec<f64> = (0..draws)
            .map(|_| sample_sigma2(2, &state, &x, &hyper, &mut rng))
            .collect();
        let shape = (q + n) as f64 / 2.0 + hyper.a;
        out.push(within_se(
            "sigma_j^2 mean at zero residual",
            &s,
            hyper.b / (shape - 1.0),
        ));
    }

    // μ_h covariance Σ / (n_h + τ_μ).
    {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, -0.6, -0.6, 1.0]);
        let state = ChainState {
            partition: PartitionState::from_labels(&[0, 0, 0, 1]),
            factors: LatentFactors(DMatrix::from_row_slice(
                2,
                4,
                &[1.0, 2.0, 0.0, 5.0, -1.0, 0.5, 0.5, 3.0],
            )),
            params: FactorModelParams {
                loadings: DMatrix::zeros(3, 2),
                noise_var: DVector::from_element(3, 1.0),
                means: vec![DVector::zeros(2), DVector::zeros(2)],
                cov: SpdMatrix::new(cov.clone())?,
            },
        };
        let hyper = HyperParams::new(2);
        let ms: Vec<DVector<f64>> = (0..draws)
            .map(|_| sample_mu(0, &state, &hyper, &mut rng))
            .collect::<Result<_>>()?;
        let n = draws as f64;
        let mean = ms.iter().fold(DVector::zeros(2), |a, m| a + m) / n;
        let mut emp = DMatrix::zeros(2, 2);
        for m in &ms {
            let r = m - &mean;
            emp.ger(1.0 / (n - 1.0), &r, &r, 1.0);
        }
        let target = cov / 4.0;
        out.push(MomentOutcome {
            name: "mu_h covariance, relative Frobenius error".into(),
            estimate: (&emp - &target).norm() / target.norm(),
            target: 0.0,
            tolerance: 0.05,
        });
    }

    // Σ for q = 1 is IG(ν/2, Φ/2) with mean Φ/(ν − 2); q = 3 has E[Σ] = Φ/(ν − q − 1).
    for (q, n_spots) in [(1usize, 6usize), (3, 9)] {
        let y = DMatrix::from_fn(q, n_spots, |r, c| {
            ((r * 3 + c * 5) % 7) as f64 * 0.5 - 1.0 + 0.1 * r as f64
        });
        let state = ChainState {
            partition: PartitionState::single(n_spots),
            factors: LatentFactors(y),
            params: FactorModelParams {
                loadings: DMatrix::zeros(q + 1, q),
                noise_var: DVector::from_element(q + 1, 1.0),
                means: vec![DVector::from_element(q, 0.25)],
                cov: SpdMatrix::identity(q),
            },
        };
        let hyper = HyperParams::new(q);
        let (phi, dof) = crate::sampler::covariance_posterior(&state, &hyper);
        let draws_q: Vec<DMatrix<f64>> = (0..draws)
            .map(|_| sample_sigma(&state, &hyper, &mut rng).map(|s| s.matrix().clone()))
            .collect::<Result<_>>()?;
        let denom = dof - q as f64 - 1.0;
        for k in 0..q {
            let col: Vec<f64> = draws_q.iter().map(|s| s[(k, k)]).collect();
            out.push(within_se(
                format!("Sigma[{k},{k}] mean, q = {q}, nu = {dof}"),
                &col,
                phi[(k, k)] / denom,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203, 877];
        for (n, &b) in bell.iter().enumerate() {
            assert_eq!(set_partitions(n).len(), b);
        }
        assert!(set_partitions(4).iter().all(|z| PartitionState::is_canonical(z)));
    }

    #[test]
    fn ks_pvalue_extremes() {
        assert!(ks_pvalue(0.001, 1000) > 0.99);
        assert!(ks_pvalue(0.2, 1000) < 1e-10);
    }

    #[test]
    fn grid_cdf_matches_normal() {
        let g = GridCdf::new(-10.0, 10.0, 20_001, |x| -0.5 * x * x);
        assert!((g.cdf(0.0) - 0.5).abs() < 1e-9);
        assert!((g.cdf(1.0) - 0.841_344_746_068_543).abs() < 1e-7);
    }

    #[test]
    fn chi_square_flags_mismatch() {
        assert!(chi_square_pvalue(&[500, 500], &[0.5, 0.5]) > 0.9);
        assert!(chi_square_pvalue(&[700, 300], &[0.5, 0.5]) < 1e-6);
        assert_eq!(chi_square_pvalue(&[1, 10], &[0.0, 1.0]), 0.0);
    }
}
