//! Dense linear-algebra and multivariate sampling helpers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::SpdMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower Cholesky factor, `None` when the matrix is not positive definite.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(sym)?;
    let l = chol.l();
    if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
        Some(l)
    } else {
        None
    }
}

/// `(L Lᵀ)⁻¹` from a lower factor.
pub fn spd_inverse_from_lower(lower: &DMatrix<f64>) -> DMatrix<f64> {
    let q = lower.nrows();
    let linv = lower
        .solve_lower_triangular(&DMatrix::identity(q, q))
        .expect("non-singular triangular factor");
    linv.transpose() * linv
}

pub fn standard_normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw from `N(P⁻¹ b, scale² · P⁻¹)` given the lower factor `L` of the precision `P`.
pub fn draw_with_precision<R: Rng + ?Sized>(
    precision_lower: &DMatrix<f64>,
    b: &DVector<f64>,
    scale: f64,
    rng: &mut R,
) -> DVector<f64> {
    let mean = solve_with_lower(precision_lower, b);
    let z = standard_normal_vector(b.len(), rng);
    let noise = precision_lower
        .tr_solve_lower_triangular(&z)
        .expect("non-singular triangular factor");
    mean + noise * scale
}

/// `(L Lᵀ)⁻¹ b`.
pub fn solve_with_lower(lower: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let tmp = lower.solve_lower_triangular(b).expect("non-singular triangular factor");
    lower
        .tr_solve_lower_triangular(&tmp)
        .expect("non-singular triangular factor")
}

/// Draw from `N(mean, scale² · Σ)`.
pub fn draw_with_covariance<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    scale: f64,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    mean + cov.lower() * z * scale
}

/// `log N(x; mean, c · Σ)`.
pub fn log_mvn(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix, c: f64) -> f64 {
    let q = x.len() as f64;
    let white = cov.whiten(&(x - mean));
    -0.5 * (q * LN_2PI + q * c.ln() + cov.log_det() + white.norm_squared() / c)
}

/// `log N(x; mean, σ²)` for a scalar.
pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + r * r / var)
}

/// Bartlett factor: lower-triangular `A` with `A Aᵀ ~ Wishart(I_q, dof)`.
pub fn bartlett_factor<R: Rng + ?Sized>(q: usize, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(dof > q as f64 - 1.0) {
        return Err(Error::numerical(format!(
            "Wishart degrees of freedom {dof} must exceed q - 1 = {}",
            q as f64 - 1.0
        )));
    }
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(a)
}

/// Draw `Σ ~ IW(Φ, dof)`, i.e. `Σ⁻¹ ~ Wishart(Φ⁻¹, dof)`.
///
/// With `Φ = L Lᵀ` the Wishart scale `Φ⁻¹` has square root `L⁻ᵀ`, so
/// `Σ = L (A Aᵀ)⁻¹ Lᵀ` for a Bartlett factor `A`; no explicit inverse of Φ
/// is formed.
pub fn inverse_wishart<R: Rng + ?Sized>(phi: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<SpdMatrix> {
    let q = phi.nrows();
    let lphi =
        cholesky_lower(phi).ok_or_else(|| Error::numerical("inverse-Wishart scale matrix is not positive definite"))?;
    let a = bartlett_factor(q, dof, rng)?;
    let ainv = a
        .solve_lower_triangular(&DMatrix::identity(q, q))
        .ok_or_else(|| Error::numerical("singular Bartlett factor"))?;
    let b = lphi * ainv.transpose();
    let sigma = &b * b.transpose();
    SpdMatrix::new((&sigma + sigma.transpose()) * 0.5)
}

/// Leading `k` left singular vectors of `x` (columns of the result), ordered
/// by decreasing singular value, via block subspace iteration.
pub fn leading_left_singular_vectors<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    k: usize,
    iterations: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let (p, n) = x.shape();
    let k = k.min(p).min(n);
    let block = (k + 5).min(p).min(n);
    let mut q = DMatrix::from_fn(p, block, |_, _| rng.sample::<f64, _>(StandardNormal));
    q = q.qr().q();
    let xt = x.transpose();
    for _ in 0..iterations {
        let z = x * (&xt * &q);
        q = z.qr().q();
    }
    let b = q.transpose() * x;
    let svd = b.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(p, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let v = &q * u.column(idx);
        out.set_column(col, &v);
    }
    out
}
