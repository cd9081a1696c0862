//! Synthetic spatial datasets: Potts label patterns on a lattice, latent
//! factors `y_i ~ N(s·e_{z_i}, c·I)`, loadings `W ~ N(0, 1)`,
//! noise variances `σ_j² ~ IG(2, 1)` and `x_i = W y_i + ε_i`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, build_graph, NeighborRule};
use crate::rng::derive_seed;
use crate::sampler::{draw_categorical, draw_inverse_gamma};
use crate::types::{AdjacencyGraph, ExpressionMatrix, SpatialCoords};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lattice {
    /// `m × m` grid with rook neighbors.
    Square(usize),
    /// `m × m` grid with offset rows and six neighbors.
    Triangle(usize),
}

impl Lattice {
    pub fn side(&self) -> usize {
        match *self {
            Lattice::Square(m) | Lattice::Triangle(m) => m,
        }
    }

    pub fn n_spots(&self) -> usize {
        self.side() * self.side()
    }

    pub fn coords(&self) -> SpatialCoords {
        ingest::square_lattice(self.side())
    }

    pub fn rule(&self) -> NeighborRule {
        match self {
            Lattice::Square(_) => NeighborRule::Square4,
            Lattice::Triangle(_) => NeighborRule::Triangle6,
        }
    }

    pub fn graph(&self) -> AdjacencyGraph {
        build_graph(&self.coords(), self.rule()).expect("lattice coordinates are integral")
    }
}

impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lattice::Square(m) => write!(f, "square:{m}"),
            Lattice::Triangle(m) => write!(f, "triangle:{m}"),
        }
    }
}

impl FromStr for Lattice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, m) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| format!("lattice `{s}` needs a side length, e.g. square:20"))?;
        let m: usize = m.trim().parse().map_err(|e| format!("bad lattice side `{m}`: {e}"))?;
        if m < 2 {
            return Err("lattice side must be >= 2".into());
        }
        match kind.trim() {
            "square" => Ok(Lattice::Square(m)),
            "triangle" => Ok(Lattice::Triangle(m)),
            other => Err(format!("unknown lattice `{other}` (expected square or triangle)")),
        }
    }
}

/// Cluster separation: `μ_h = mu_scale · e_h`, `Σ = sigma_scale · I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Signal {
    Strong,
    Weak,
    Custom { mu_scale: f64, sigma_scale: f64 },
}

impl Signal {
    pub fn scales(&self) -> (f64, f64) {
        match *self {
            Signal::Strong => (5.0, 8.0),
            Signal::Weak => (3.0, 6.0),
            Signal::Custom { mu_scale, sigma_scale } => (mu_scale, sigma_scale),
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Strong => f.write_str("strong"),
            Signal::Weak => f.write_str("weak"),
            Signal::Custom { mu_scale, sigma_scale } => write!(f, "custom:{mu_scale}:{sigma_scale}"),
        }
    }
}

impl FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        match parts.as_slice() {
            ["strong"] => Ok(Signal::Strong),
            ["weak"] => Ok(Signal::Weak),
            ["custom", m, c] => {
                let mu_scale: f64 = m.parse().map_err(|e| format!("bad mean scale `{m}`: {e}"))?;
                let sigma_scale: f64 = c.parse().map_err(|e| format!("bad covariance scale `{c}`: {e}"))?;
                if !(sigma_scale.is_finite() && sigma_scale > 0.0 && mu_scale.is_finite()) {
                    return Err("custom signal needs finite scales with covariance scale > 0".into());
                }
                Ok(Signal::Custom { mu_scale, sigma_scale })
            }
            _ => Err(format!(
                "unknown signal `{s}` (expected strong, weak or custom:<mu>:<sigma>)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lattice: Lattice,
    pub h0: usize,
    /// Potts interaction strength.
    pub potts_d: f64,
    pub potts_sweeps: usize,
    /// Redraw the Potts pattern until every label covers at least this
    /// fraction of spots. 0 keeps the first draw.
    #[serde(default)]
    pub min_label_frac: f64,
    pub p: usize,
    pub q: usize,
    pub signal: Signal,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lattice: Lattice::Square(40),
            h0: 3,
            potts_d: 1.0,
            potts_sweeps: 500,
            min_label_frac: 0.0,
            p: 2000,
            q: 10,
            signal: Signal::Strong,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h0 < 1 {
            return Err(Error::config("sim.h0", "must be >= 1"));
        }
        if self.q < 1 || self.p <= self.q {
            return Err(Error::config(
                "sim.q",
                format!("need p > q >= 1, got p = {}, q = {}", self.p, self.q),
            ));
        }
        if self.h0 > self.q {
            return Err(Error::config(
                "sim.h0",
                format!("cluster means s·e_h need h0 <= q, got h0 = {}, q = {}", self.h0, self.q),
            ));
        }
        if self.potts_sweeps < 1 {
            return Err(Error::config("sim.potts_sweeps", "must be >= 1"));
        }
        if !(self.potts_d.is_finite() && self.potts_d >= 0.0) {
            return Err(Error::config("sim.potts_d", "must be finite and >= 0"));
        }
        if !(self.min_label_frac >= 0.0 && self.min_label_frac * self.h0 as f64 <= 1.0) {
            return Err(Error::config("sim.min_label_frac", "must be in [0, 1/h0]"));
        }
        if self.lattice.side() < 2 {
            return Err(Error::config("sim.lattice", "side must be >= 2"));
        }
        Ok(())
    }
}

/// Gibbs sampling of an `h0`-state Potts model, from uniform labels.
pub fn potts_pattern<R: Rng + ?Sized>(
    graph: &AdjacencyGraph,
    h0: usize,
    potts_d: f64,
    sweeps: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = graph.n();
    let mut z: Vec<usize> = (0..n).map(|_| rng.random_range(0..h0)).collect();
    let mut counts = vec![0usize; h0];
    let mut w = vec![0.0; h0];
    for _ in 0..sweeps {
        for i in 0..n {
            counts.iter_mut().for_each(|c| *c = 0);
            for &j in graph.neighbors(i) {
                counts[z[j]] += 1;
            }
            for (wk, &c) in w.iter_mut().zip(&counts) {
                *wk = potts_d * c as f64;
            }
            z[i] = draw_categorical(&w, rng);
        }
    }
    z
}

const MAX_PATTERN_DRAWS: u64 = 10_000;

/// First Potts draw in which every label covers `min_label_frac` of the spots.
fn balanced_pattern(graph: &AdjacencyGraph, cfg: &SimConfig) -> Result<Vec<usize>> {
    let need = (cfg.min_label_frac * graph.n() as f64).ceil() as usize;
    for k in 0..MAX_PATTERN_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sim.potts", k));
        let z = potts_pattern(graph, cfg.h0, cfg.potts_d, cfg.potts_sweeps, &mut rng);
        let mut counts = vec![0usize; cfg.h0];
        z.iter().for_each(|&l| counts[l] += 1);
        if counts.iter().all(|&c| c >= need) {
            return Ok(z);
        }
    }
    Err(Error::config(
        "sim.min_label_frac",
        format!("no Potts draw in {MAX_PATTERN_DRAWS} attempts had every label above the minimum"),
    ))
}

/// Generated data plus everything used to generate it.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub x: ExpressionMatrix,
    pub coords: SpatialCoords,
    pub graph: AdjacencyGraph,
    /// 0-based labels in `0..h0`.
    pub truth: Vec<usize>,
    pub params: SimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub loadings: DMatrix<f64>,
    pub noise_var: DVector<f64>,
    pub means: Vec<DVector<f64>>,
    pub cov: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

/// `X = W Y + ε` with `ε_ji ~ N(0, σ_j²)`; returns `(X, ε)`.
pub fn expression_from<R: Rng + ?Sized>(
    loadings: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    noise_var: &DVector<f64>,
    rng: &mut R,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, n) = (loadings.nrows(), factors.ncols());
    let sd: Vec<f64> = noise_var.iter().map(|v| v.sqrt()).collect();
    // Column-major fill: spot by spot, gene by gene.
    let noise = DMatrix::from_fn(p, n, |j, _| sd[j] * rng.sample::<f64, _>(StandardNormal));
    (loadings * factors + &noise, noise)
}

pub fn generate_dataset(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let graph = cfg.lattice.graph();
    let coords = cfg.lattice.coords();
    let n = graph.n();
    let (s, c) = cfg.signal.scales();

    let truth = balanced_pattern(&graph, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sim.factors", 0));
    let means: Vec<DVector<f64>> = (0..cfg.h0)
        .map(|h| {
            let mut m = DVector::zeros(cfg.q);
            m[h] = s;
            m
        })
        .collect();
    let sd = c.sqrt();
    let factors = DMatrix::from_fn(cfg.q, n, |r, i| {
        means[truth[i]][r] + sd * rng.sample::<f64, _>(StandardNormal)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sim.loadings", 0));
    let loadings = DMatrix::from_fn(cfg.p, cfg.q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise_var = DVector::from_fn(cfg.p, |_, _| draw_inverse_gamma(2.0, 1.0, &mut rng));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sim.noise", 0));
    let (values, noise) = expression_from(&loadings, &factors, &noise_var, &mut rng);
    let x = ExpressionMatrix::with_generated_ids(values)?;
    Ok(SimDataset {
        x,
        coords,
        graph,
        truth,
        params: SimParams {
            loadings,
            noise_var,
            means,
            cov: DMatrix::identity(cfg.q, cfg.q) * c,
            factors,
            noise,
        },
    })
}

#[derive(Serialize)]
struct ParamsFile<'a> {
    config: &'a SimConfig,
    n_truth_clusters: usize,
    #[serde(flatten)]
    params: &'a SimParams,
}

/// Write `expression.csv`, `coords.csv`, `truth.csv` (1-based labels) and
/// `params.json` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, cfg: &SimConfig, ds: &SimDataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let spots = ds.x.spot_ids();
    ingest::write_expression(dir.join("expression.csv"), &ds.x)?;
    ingest::write_coords(dir.join("coords.csv"), spots, &ds.coords)?;
    let labels: Vec<usize> = ds.truth.iter().map(|l| l + 1).collect();
    ingest::write_labels(dir.join("truth.csv"), spots, &labels)?;
    let file = ParamsFile {
        config: cfg,
        n_truth_clusters: crate::metrics::cluster_count(&ds.truth),
        params: &ds.params,
    };
    ingest::write_atomic(dir.join("params.json"), |w| {
        serde_json::to_writer(&mut *w, &file)?;
        writeln!(w)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            lattice: Lattice::Square(10),
            p: 20,
            q: 4,
            potts_sweeps: 20,
            ..SimConfig::default()
        }
    }

    #[test]
    fn redraws_until_labels_balanced() {
        let cfg = SimConfig {
            potts_d: 2.0,
            min_label_frac: 0.2,
            ..small()
        };
        let ds = generate_dataset(&cfg).unwrap();
        for h in 0..3 {
            assert!(ds.truth.iter().filter(|&&l| l == h).count() >= 20);
        }
        assert!(SimConfig {
            min_label_frac: 0.5,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn parses_lattice_and_signal() {
        assert_eq!("square:20".parse::<Lattice>().unwrap(), Lattice::Square(20));
        assert_eq!("triangle:8".parse::<Lattice>().unwrap(), Lattice::Triangle(8));
        assert!("square".parse::<Lattice>().is_err());
        assert_eq!("strong".parse::<Signal>().unwrap().scales(), (5.0, 8.0));
        assert_eq!("weak".parse::<Signal>().unwrap().scales(), (3.0, 6.0));
        assert_eq!("custom:2:1.5".parse::<Signal>().unwrap().scales(), (2.0, 1.5));
    }

    #[test]
    fn validation() {
        assert!(small().validate().is_ok());
        assert!(SimConfig { h0: 5, ..small() }.validate().is_err());
        assert!(SimConfig { p: 4, ..small() }.validate().is_err());
        assert!(SimConfig {
            potts_sweeps: 0,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn deterministic_and_consistent() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.truth, b.truth);
        let rebuilt = &a.params.loadings * &a.params.factors + &a.params.noise;
        assert_eq!(a.x.values(), &rebuilt);
        assert!(a.truth.iter().all(|&l| l < 3));
    }

    #[test]
    fn noise_free_identity_loadings_pass_factors_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = 3;
        let y = DMatrix::from_fn(q, 7, |r, c| (r * 7 + c) as f64 - 4.5);
        let mut w = DMatrix::zeros(5, q);
        w.view_mut((0, 0), (q, q)).fill_with_identity();
        let (x, _) = expression_from(&w, &y, &DVector::zeros(5), &mut rng);
        assert_eq!(x.rows(0, q), y);
        assert!(x.rows(q, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn independent_potts_is_uniform() {
        let g = Lattice::Square(40).graph();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = potts_pattern(&g, 4, 0.0, 1, &mut rng);
        let n = z.len() as f64;
        let sd = (n * 0.25 * 0.75).sqrt();
        for h in 0..4 {
            let c = z.iter().filter(|&&l| l == h).count() as f64;
            assert!((c - n / 4.0).abs() < 3.0 * sd, "label {h}: {c}");
        }
    }

    #[test]
    fn strong_coupling_gives_smooth_patterns() {
        let g = Lattice::Square(40).graph();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = potts_pattern(&g, 3, 2.0, 200, &mut rng);
        let same = g.edges().iter().filter(|&&(a, b)| z[a] == z[b]).count();
        assert!(same as f64 / g.n_edges() as f64 > 0.9);
    }
}
