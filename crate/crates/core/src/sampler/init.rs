//! Chain initialization.
//!
//! Loadings start at the leading principal directions of `X`, factors at the
//! ridge projection `(WᵀΛ⁻¹W + I)⁻¹WᵀΛ⁻¹x_i`, and labels come from k-means on
//! those factors (or uniformly at random, or a single cluster).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_lower};
use crate::rng::{substream, Step};
use crate::types::{
    ChainState, ExpressionMatrix, FactorModelParams, HyperParams, LatentFactors, PartitionState, SpdMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Random(usize),
    KMeans(usize),
    Single,
}

impl Default for Init {
    fn default() -> Self {
        Init::KMeans(5)
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Init::Random(k) => write!(f, "random:{k}"),
            Init::KMeans(k) => write!(f, "kmeans:{k}"),
            Init::Single => f.write_str("single"),
        }
    }
}

impl FromStr for Init {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let count = || -> Result<usize, String> {
            let k: usize = arg
                .ok_or_else(|| format!("`{kind}` needs a cluster count, e.g. `{kind}:5`"))?
                .trim()
                .parse()
                .map_err(|e| format!("bad cluster count: {e}"))?;
            if k == 0 {
                return Err("cluster count must be >= 1".into());
            }
            Ok(k)
        };
        match kind.trim() {
            "single" => Ok(Init::Single),
            "random" => Ok(Init::Random(count()?)),
            "kmeans" => Ok(Init::KMeans(count()?)),
            other => Err(format!(
                "unknown init `{other}` (expected kmeans:K, random:K or single)"
            )),
        }
    }
}

const PCA_ITERATIONS: usize = 25;
const KMEANS_MAX_ITER: usize = 100;

pub fn initialize(x: &ExpressionMatrix, hyper: &HyperParams, init: Init, seed: u64) -> Result<ChainState> {
    let (p, n) = (x.n_genes(), x.n_spots());
    let q = hyper.q;
    if q >= p || q >= n {
        return Err(Error::config(
            "hyper.q",
            format!("latent dimension {q} must be below p = {p} and n = {n}"),
        ));
    }
    let mut rng = substream(seed, 0, Step::Init, 0);
    let xv = x.values();

    let loadings = linalg::leading_left_singular_vectors(xv, q, PCA_ITERATIONS, &mut rng);
    let scores = loadings.transpose() * xv;
    let residual = xv - &loadings * &scores;
    let raw_var: Vec<f64> = residual.row_iter().map(|r| r.norm_squared() / n as f64).collect();
    let mean_var = raw_var.iter().sum::<f64>() / p as f64;
    let floor = (1e-3 * mean_var).max(1e-8);
    let noise_var = DVector::from_iterator(p, raw_var.iter().map(|v| v.max(floor)));

    let mut projection = loadings.transpose();
    for (j, mut col) in projection.column_iter_mut().enumerate() {
        col /= noise_var[j];
    }
    let precision = &projection * &loadings + DMatrix::identity(q, q);
    let lower = cholesky_lower(&precision).ok_or_else(|| Error::numerical("initial projection is singular"))?;
    let rhs = &projection * xv;
    let tmp = lower.solve_lower_triangular(&rhs).expect("positive diagonal");
    let y = lower.tr_solve_lower_triangular(&tmp).expect("positive diagonal");

    let raw_labels = match init {
        Init::Single => vec![0; n],
        Init::Random(k) => (0..n).map(|_| rng.random_range(0..k)).collect(),
        Init::KMeans(k) => kmeans(&y, k.min(n), &mut rng),
    };
    let partition = PartitionState::from_labels(&raw_labels);

    let h = partition.n_clusters();
    let mut means = vec![DVector::zeros(q); h];
    for (i, &l) in partition.labels().iter().enumerate() {
        means[l] += y.column(i);
    }
    for (m, &c) in means.iter_mut().zip(partition.counts()) {
        *m /= c as f64;
    }
    let mut scatter = DMatrix::zeros(q, q);
    for (i, &l) in partition.labels().iter().enumerate() {
        let r = y.column(i) - &means[l];
        scatter.ger(1.0 / n as f64, &r, &r, 1.0);
    }
    let ridge = 1e-6 * (scatter.trace() / q as f64).max(1e-8);
    let cov = SpdMatrix::new(scatter + DMatrix::identity(q, q) * ridge).unwrap_or_else(|_| SpdMatrix::identity(q));

    Ok(ChainState {
        partition,
        factors: LatentFactors(y),
        params: FactorModelParams {
            loadings,
            noise_var,
            means,
            cov,
        },
    })
}

/// Lloyd's k-means on the columns of `data` with k-means++ seeding.
pub fn kmeans<R: Rng + ?Sized>(data: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.ncols();
    let k = k.clamp(1, n);
    let dist2 = |i: usize, c: &DVector<f64>| (data.column(i) - c).norm_squared();

    let mut centers: Vec<DVector<f64>> = vec![data.column(rng.random_range(0..n)).into_owned()];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            nearest
                .iter()
                .position(|&d| {
                    u -= d;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let c = data.column(pick).into_owned();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(i, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for iter in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(i, &centers[a]).total_cmp(&dist2(i, &centers[b])))
                .unwrap();
            if best != *label || iter == 0 {
                changed |= best != *label;
                *label = best;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![DVector::zeros(data.nrows()); k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums[l] += data.column(i);
            counts[l] += 1;
        }
        for ((c, s), &m) in centers.iter_mut().zip(sums).zip(&counts) {
            if m > 0 {
                *c = s / m as f64;
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_parses() {
        assert_eq!("kmeans:5".parse::<Init>().unwrap(), Init::KMeans(5));
        assert_eq!("random:3".parse::<Init>().unwrap(), Init::Random(3));
        assert_eq!("single".parse::<Init>().unwrap(), Init::Single);
        assert!("kmeans".parse::<Init>().is_err());
        assert!("kmeans:0".parse::<Init>().is_err());
        assert_eq!(Init::KMeans(4).to_string().parse::<Init>().unwrap(), Init::KMeans(4));
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = DMatrix::from_fn(2, 60, |r, c| {
            let centre = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)][c % 3];
            let base = if r == 0 { centre.0 } else { centre.1 };
            base + ((c * 7 + r * 3) % 5) as f64 * 0.1
        });
        let labels = kmeans(&data, 3, &mut rng);
        for c in 0..60 {
            assert_eq!(labels[c], labels[c % 3]);
        }
        let distinct: std::collections::HashSet<_> = labels.iter().collect();
        assert_eq!(distinct.len(), 3);
    }
}
