//! Collapsed partition score `f_τ` and its invariance under linear maps of
//! the latent factors.
//!
//! With `μ_h ~ N(0, Σ/τ)` and the Jeffreys prior on `Σ` integrated out,
//! the latent factors `Y₀` score a partition by
//!
//! ```text
//! log f_τ = Σ_h (q/2) log(τ / (τ + n_h)) − (n/2) log det Σ_h [S_h + c_h ȳ_h ȳ_hᵀ]
//! ```
//!
//! up to a constant shared by all partitions. Replacing `Y₀` by `M Y₀`
//! multiplies the determinant by `det(M)²`, the same factor for every
//! partition, so score differences do not change.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, standard_normal_vector};
use crate::types::PartitionState;

/// Weight `c_h` on `ȳ_h ȳ_hᵀ` in the pooled scatter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScatterWeight {
    /// `(n_h² + 2n_hτ − n_h − τ) / (n_h + τ)`, as the score is usually written.
    #[default]
    Expanded,
    /// `n_h τ / (n_h + τ)`, what integrating `μ_h` out actually gives.
    Conjugate,
}

impl ScatterWeight {
    pub fn coefficient(&self, n_h: usize, tau: f64) -> f64 {
        let n = n_h as f64;
        match self {
            ScatterWeight::Expanded => (n * n + 2.0 * n * tau - n - tau) / (n + tau),
            ScatterWeight::Conjugate => n * tau / (n + tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedScoreInput<'a> {
    /// `q × n`.
    pub y0: &'a DMatrix<f64>,
    pub partition: &'a PartitionState,
    pub tau: f64,
}

fn check(input: &CollapsedScoreInput<'_>) -> Result<()> {
    let (q, n) = input.y0.shape();
    if q >= n {
        return Err(Error::InvalidInput(format!(
            "collapsed score needs q < n, got q = {q}, n = {n}"
        )));
    }
    if input.partition.len() != n {
        return Err(Error::InvalidInput(format!(
            "partition covers {} spots, latent matrix {n}",
            input.partition.len()
        )));
    }
    if !(input.tau.is_finite() && input.tau > 0.0) {
        return Err(Error::config("tau", format!("must be > 0, got {}", input.tau)));
    }
    if input.y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("latent matrix has non-finite entries".into()));
    }
    Ok(())
}

/// `log f_τ` without the partition-independent constant.
pub fn log_f_tau(input: &CollapsedScoreInput<'_>, weight: ScatterWeight) -> Result<f64> {
    check(input)?;
    let y = input.y0;
    let (q, n) = y.shape();
    let h = input.partition.n_clusters();
    let counts = input.partition.counts();
    let mut means = vec![DVector::zeros(q); h];
    for (i, &l) in input.partition.labels().iter().enumerate() {
        means[l] += y.column(i);
    }
    for (m, &c) in means.iter_mut().zip(counts) {
        *m /= c as f64;
    }
    let mut total = DMatrix::zeros(q, q);
    for (i, &l) in input.partition.labels().iter().enumerate() {
        let r = y.column(i) - &means[l];
        total.ger(1.0, &r, &r, 1.0);
    }
    let mut log_prior = 0.0;
    for (m, &c) in means.iter().zip(counts) {
        total.ger(weight.coefficient(c, input.tau), m, m, 1.0);
        log_prior += 0.5 * q as f64 * (input.tau / (input.tau + c as f64)).ln();
    }
    let lower = cholesky_lower(&total)
        .ok_or_else(|| Error::numerical("pooled scatter is not positive definite (degenerate latent matrix)"))?;
    let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(log_prior - 0.5 * n as f64 * log_det)
}

/// Largest change in a pairwise score difference when `Y₀` becomes `M Y₀`.
pub fn invariance_check(
    y0: &DMatrix<f64>,
    m: &DMatrix<f64>,
    partitions: &[PartitionState],
    tau: f64,
    weight: ScatterWeight,
) -> Result<f64> {
    let q = y0.nrows();
    if m.shape() != (q, q) {
        return Err(Error::InvalidInput(format!("transform must be {q} x {q}")));
    }
    let det = m.determinant();
    if !(det.abs() > 1e-10) {
        return Err(Error::InvalidInput(format!(
            "transform is near-singular (det = {det:e})"
        )));
    }
    if partitions.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 partitions".into()));
    }
    let my0 = m * y0;
    let score = |y: &DMatrix<f64>, p: &PartitionState| {
        log_f_tau(
            &CollapsedScoreInput {
                y0: y,
                partition: p,
                tau,
            },
            weight,
        )
    };
    let before: Vec<f64> = partitions.iter().map(|p| score(y0, p)).collect::<Result<_>>()?;
    let after: Vec<f64> = partitions.iter().map(|p| score(&my0, p)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for a in 0..partitions.len() {
        for b in a + 1..partitions.len() {
            let dev = ((after[a] - after[b]) - (before[a] - before[b])).abs();
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

/// Settings for [`random_invariance_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceStudy {
    pub n: usize,
    pub q: usize,
    pub partitions: usize,
    pub transforms: usize,
    /// Transforms with a larger 2-norm condition number are redrawn.
    pub max_condition: f64,
    pub tau: f64,
    pub weight: ScatterWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub max_deviation: f64,
    /// Largest condition number among the accepted transforms.
    pub max_condition: f64,
    /// Draws rejected for exceeding the condition bound.
    pub rejected: usize,
}

const MAX_TRANSFORM_DRAWS: usize = 100_000;

/// Gaussian `Y₀`, partitions with up to four uniformly labelled clusters, and
/// Gaussian transforms below the condition bound, all from `seed`.
pub fn random_invariance_study(study: &InvarianceStudy, seed: u64) -> Result<InvarianceReport> {
    let (n, q) = (study.n, study.q);
    if q < 1 || n <= q || study.partitions < 2 || study.transforms < 1 {
        return Err(Error::InvalidInput(
            "need n > q >= 1, >= 2 partitions and >= 1 transform".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
        DMatrix::from_column_slice(r, c, standard_normal_vector(r * c, rng).as_slice())
    };
    let y0 = gaussian(q, n, &mut rng);
    let partitions: Vec<PartitionState> = (0..study.partitions)
        .map(|_| {
            let h = rng.random_range(1..=4.min(n));
            let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..h)).collect();
            PartitionState::from_labels(&raw)
        })
        .collect();
    let mut report = InvarianceReport {
        max_deviation: 0.0,
        max_condition: 0.0,
        rejected: 0,
    };
    let mut accepted = 0;
    for _ in 0..MAX_TRANSFORM_DRAWS {
        if accepted == study.transforms {
            break;
        }
        let m = gaussian(q, q, &mut rng);
        let sv = m.clone().singular_values();
        let cond = sv.max() / sv.min();
        if !(cond < study.max_condition) {
            report.rejected += 1;
            continue;
        }
        let dev = invariance_check(&y0, &m, &partitions, study.tau, study.weight)?;
        report.max_deviation = report.max_deviation.max(dev);
        report.max_condition = report.max_condition.max(cond);
        accepted += 1;
    }
    if accepted < study.transforms {
        return Err(Error::InvalidInput(format!(
            "only {accepted} of {} transforms met condition < {}",
            study.transforms, study.max_condition
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(y: &DMatrix<f64>, labels: &[usize], tau: f64) -> f64 {
        let p = PartitionState::from_labels(labels);
        log_f_tau(
            &CollapsedScoreInput {
                y0: y,
                partition: &p,
                tau,
            },
            ScatterWeight::Expanded,
        )
        .unwrap()
    }

    #[test]
    fn hand_value() {
        let y = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let expect = 0.5 * (1.0f64 / 3.0).ln() - 2f64.ln();
        assert!((score(&y, &[0, 0], 1.0) - expect).abs() < 1e-14);
    }

    #[test]
    fn weights_agree_at_zero_means() {
        let y = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 2.0, -2.0]);
        let p = PartitionState::from_labels(&[0, 0, 1, 1]);
        let inp = CollapsedScoreInput {
            y0: &y,
            partition: &p,
            tau: 3.0,
        };
        let a = log_f_tau(&inp, ScatterWeight::Expanded).unwrap();
        let b = log_f_tau(&inp, ScatterWeight::Conjugate).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn scalar_transform_shifts_uniformly() {
        let y = DMatrix::from_fn(2, 9, |r, c| ((r * 5 + c * 3) % 7) as f64 - 2.5 + 0.1 * c as f64);
        let parts = [
            PartitionState::from_labels(&[0, 0, 0, 1, 1, 1, 2, 2, 2]),
            PartitionState::from_labels(&[0, 1, 0, 1, 0, 1, 0, 1, 0]),
            PartitionState::single(9),
        ];
        let m = DMatrix::identity(2, 2) * 2.0;
        for w in [ScatterWeight::Expanded, ScatterWeight::Conjugate] {
            assert_eq!(
                invariance_check(&y, &DMatrix::identity(2, 2), &parts, 1.0, w).unwrap(),
                0.0
            );
            assert!(invariance_check(&y, &m, &parts, 1.0, w).unwrap() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = PartitionState::single(2);
        assert!(log_f_tau(
            &CollapsedScoreInput {
                y0: &y,
                partition: &p,
                tau: 1.0
            },
            ScatterWeight::Expanded
        )
        .is_err());
        let y = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let parts = [PartitionState::single(3), PartitionState::from_labels(&[0, 1, 1])];
        let singular = DMatrix::zeros(1, 1);
        assert!(invariance_check(&y, &singular, &parts, 1.0, ScatterWeight::Expanded).is_err());
        let flat = DMatrix::zeros(1, 3);
        let p = PartitionState::single(3);
        let r = log_f_tau(
            &CollapsedScoreInput {
                y0: &flat,
                partition: &p,
                tau: 1.0,
            },
            ScatterWeight::Expanded,
        );
        assert!(matches!(r, Err(Error::Numerical { .. })));
    }

    #[test]
    fn random_study_is_seeded() {
        let study = InvarianceStudy {
            n: 12,
            q: 2,
            partitions: 4,
            transforms: 5,
            max_condition: 50.0,
            tau: 1.0,
            weight: ScatterWeight::Conjugate,
        };
        let a = random_invariance_study(&study, 3).unwrap();
        assert_eq!(a, random_invariance_study(&study, 3).unwrap());
        assert!(a.max_deviation < 1e-9 && a.max_condition < 50.0);
        assert!(random_invariance_study(
            &InvarianceStudy {
                max_condition: 1.0,
                ..study
            },
            3
        )
        .is_err());
    }
}
