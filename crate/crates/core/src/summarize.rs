//! Posterior partition summaries, ICL, d selection and trace files.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::write_atomic;
use crate::metrics::ari;
use crate::priors::LogWeightTable;
use crate::sampler::{complete_log_score, run_chain, SamplerConfig};
use crate::types::{
    AdjacencyGraph, ChainState, ChainTrace, ExpressionMatrix, HyperParams, PartitionState, PriorConfig, TraceRecord,
};

/// Posterior co-clustering frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppm(DMatrix<f64>);

impl Ppm {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }
}

fn non_empty(trace: &ChainTrace) -> Result<()> {
    if trace.records.is_empty() {
        return Err(Error::InvalidInput("trace has no kept iterations".into()));
    }
    Ok(())
}

pub fn compute_ppm(trace: &ChainTrace) -> Result<Ppm> {
    non_empty(trace)?;
    let n = trace.records[0].labels.len();
    let mut counts = vec![0u32; n * n];
    for rec in &trace.records {
        if rec.labels.len() != n {
            return Err(Error::InvalidInput("trace records differ in length".into()));
        }
        let z = &rec.labels;
        for i in 0..n {
            let row = &mut counts[i * n..(i + 1) * n];
            for j in i + 1..n {
                row[j] += (z[i] == z[j]) as u32;
            }
        }
    }
    let u = trace.records.len() as f64;
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = counts[i * n + j] as f64 / u;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(Ppm(m))
}

/// `Σ_{i<i'} (I(z_i = z_i') − PPM_ii')²`.
pub fn ppm_loss(labels: &[usize], ppm: &Ppm) -> f64 {
    let n = labels.len();
    let m = &ppm.0;
    let mut loss = 0.0;
    for j in 1..n {
        let col = m.column(j);
        for i in 0..j {
            let a = (labels[i] == labels[j]) as u8 as f64;
            let r = a - col[i];
            loss += r * r;
        }
    }
    loss
}

/// A kept iteration chosen as a point estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub partition: PartitionState,
    /// Position in `trace.records`.
    pub record: usize,
    pub iteration: usize,
    /// Squared-deviation loss for the PPM estimate, log score for MAP.
    pub value: f64,
}

/// Kept partition closest to the PPM in squared loss; earliest wins ties.
pub fn ppm_point_estimate(trace: &ChainTrace, ppm: &Ppm) -> Result<PointEstimate> {
    non_empty(trace)?;
    if ppm.n() != trace.records[0].labels.len() {
        return Err(Error::InvalidInput("PPM size differs from trace".into()));
    }
    let losses: Vec<f64> = trace.records.par_iter().map(|r| ppm_loss(&r.labels, ppm)).collect();
    let mut best = 0;
    for (k, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = k;
        }
    }
    let rec = &trace.records[best];
    Ok(PointEstimate {
        partition: PartitionState::from_labels(&rec.labels),
        record: best,
        iteration: rec.iteration,
        value: losses[best],
    })
}

/// Kept partition with the largest complete log score; earliest wins ties.
pub fn map_estimate(trace: &ChainTrace) -> Result<PointEstimate> {
    non_empty(trace)?;
    let mut best = 0;
    for (k, r) in trace.records.iter().enumerate() {
        if r.log_score > trace.records[best].log_score {
            best = k;
        }
    }
    let rec = &trace.records[best];
    Ok(PointEstimate {
        partition: PartitionState::from_labels(&rec.labels),
        record: best,
        iteration: rec.iteration,
        value: rec.log_score,
    })
}

/// `log(n) · (pq + Ĥq + q(q+1)/2 + p)`.
pub fn icl_penalty(n: usize, p: usize, q: usize, h: usize) -> f64 {
    (n as f64).ln() * (p * q + h * q + q * (q + 1) / 2 + p) as f64
}

/// `−2 · complete log score + penalty`, at the given state.
pub fn compute_icl(
    state: &ChainState,
    x: &ExpressionMatrix,
    graph: &AdjacencyGraph,
    config: &PriorConfig,
) -> Result<f64> {
    let table = LogWeightTable::new(config, x.n_spots())?;
    let score = complete_log_score(state, x, graph, &table)?;
    let q = state.params.latent_dim();
    Ok(-2.0 * score + icl_penalty(x.n_spots(), x.n_genes(), q, state.n_clusters()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclRecord {
    pub d: f64,
    pub icl: f64,
    pub h_hat: usize,
    /// Label for the chain that produced this row.
    pub trace_ref: String,
}

#[derive(Debug)]
pub struct DSelection {
    pub best_d: f64,
    /// One row per grid point that completed, in grid order.
    pub records: Vec<IclRecord>,
    /// Chain per grid point; `Err` for grid points that failed.
    pub traces: Vec<Result<ChainTrace>>,
}

impl DSelection {
    /// Trace for the selected `d`.
    pub fn best_trace(&self, grid: &[f64]) -> Option<&ChainTrace> {
        let k = grid.iter().position(|&d| d == self.best_d)?;
        self.traces[k].as_ref().ok()
    }
}

/// Default grid for `d`.
pub const DEFAULT_D_GRID: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5];

/// Run one chain per `d` (all with the same seed) and pick the smallest ICL.
/// Ties go to the smaller `d`. Failed chains are logged and skipped.
pub fn select_d(
    x: &ExpressionMatrix,
    graph: &AdjacencyGraph,
    template: &PriorConfig,
    hyper: &HyperParams,
    cfg: &SamplerConfig,
    grid: &[f64],
) -> Result<DSelection> {
    if grid.is_empty() {
        return Err(Error::config("select_d.grid", "d grid is empty"));
    }
    for &d in grid {
        template.clone().with_mrf(d).validate()?;
    }
    let runs: Vec<(Result<ChainTrace>, Option<IclRecord>)> = grid
        .par_iter()
        .enumerate()
        .map(|(k, &d)| {
            let config = template.clone().with_mrf(d);
            let trace = run_chain(x, graph, &config, hyper, cfg);
            let record = match &trace {
                Ok(t) => {
                    let state = t.final_state.as_ref().expect("run_chain keeps at least one state");
                    match compute_icl(state, x, graph, &config) {
                        Ok(icl) if icl.is_finite() => Some(IclRecord {
                            d,
                            icl,
                            h_hat: state.n_clusters(),
                            trace_ref: format!("d{k}"),
                        }),
                        Ok(icl) => {
                            warn!("d = {d}: ICL is {icl}; excluded");
                            None
                        }
                        Err(e) => {
                            warn!("d = {d}: ICL failed: {e}");
                            None
                        }
                    }
                }
                Err(e) => {
                    warn!("d = {d}: chain failed: {e}");
                    None
                }
            };
            (trace, record)
        })
        .collect();
    let mut traces = Vec::with_capacity(runs.len());
    let mut records = Vec::new();
    for (t, r) in runs {
        traces.push(t);
        records.extend(r);
    }
    let best = records
        .iter()
        .min_by(|a, b| a.icl.total_cmp(&b.icl).then(a.d.total_cmp(&b.d)))
        .ok_or_else(|| match traces.iter().find_map(|t| t.as_ref().err()) {
            Some(Error::Numerical { iteration, message }) => Error::Numerical {
                iteration: *iteration,
                message: format!("every grid point failed; first: {message}"),
            },
            _ => Error::numerical("every grid point failed"),
        })?;
    Ok(DSelection {
        best_d: best.d,
        records,
        traces,
    })
}

/// Pairwise ARI between the PPM point estimates of each chain.
pub fn chain_agreement(traces: &[ChainTrace]) -> Result<DMatrix<f64>> {
    if traces.len() < 2 {
        return Err(Error::InvalidInput("chain agreement needs at least 2 chains".into()));
    }
    let n = traces[0].n_spots();
    if traces.iter().any(|t| t.n_spots() != n) || n.is_none() {
        return Err(Error::InvalidInput("chains differ in spot count or are empty".into()));
    }
    let estimates: Vec<Vec<usize>> = traces
        .par_iter()
        .map(|t| Ok(ppm_point_estimate(t, &compute_ppm(t)?)?.partition.labels().to_vec()))
        .collect::<Result<_>>()?;
    let k = traces.len();
    let mut m = DMatrix::identity(k, k);
    for a in 0..k {
        for b in a + 1..k {
            let v = ari(&estimates[a], &estimates[b])?;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    burn_in: usize,
    thin: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    iteration: usize,
    #[serde(rename = "H")]
    n_clusters: usize,
    /// 1-based labels, comma-separated.
    z: String,
    log_score: f64,
}

/// JSON lines: a header `{"burn_in","thin","seed"}`, then one object per kept
/// iteration with `iteration`, `H`, `z` (1-based, comma-separated) and
/// `log_score` (shortest round-trip decimal, so re-reading is exact).
pub fn write_trace(path: impl AsRef<Path>, trace: &ChainTrace) -> Result<()> {
    write_atomic(path, |w| {
        let header = TraceHeader {
            burn_in: trace.burn_in,
            thin: trace.thin,
            seed: trace.seed,
        };
        serde_json::to_writer(&mut *w, &header)?;
        writeln!(w)?;
        for r in &trace.records {
            let z = r
                .labels
                .iter()
                .map(|l| (l + 1).to_string())
                .collect::<Vec<_>>()
                .join(",");
            let line = TraceLine {
                iteration: r.iteration,
                n_clusters: r.n_clusters,
                z,
                log_score: r.log_score,
            };
            serde_json::to_writer(&mut *w, &line)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<ChainTrace> {
    let path = path.as_ref();
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: Some(line),
        column: None,
        message,
    };
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty trace file".into()))?;
    let first = first.map_err(|e| err(1, e.to_string()))?;
    let header: TraceHeader = serde_json::from_str(&first).map_err(|e| err(1, e.to_string()))?;
    let mut records = Vec::new();
    for (k, line) in lines {
        let line = line.map_err(|e| err(k + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TraceLine = serde_json::from_str(&line).map_err(|e| err(k + 1, e.to_string()))?;
        let labels =
            t.z.split(',')
                .map(|s| match s.trim().parse::<usize>() {
                    Ok(l) if l >= 1 => Ok(l - 1),
                    _ => Err(err(k + 1, format!("bad label `{s}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
        records.push(TraceRecord {
            iteration: t.iteration,
            n_clusters: t.n_clusters,
            labels,
            log_score: t.log_score,
        });
    }
    Ok(ChainTrace {
        records,
        burn_in: header.burn_in,
        thin: header.thin,
        seed: header.seed,
        final_state: None,
        states: None,
    })
}
