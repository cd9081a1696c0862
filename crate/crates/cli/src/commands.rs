use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use bnpmfa::identifiability::{random_invariance_study, InvarianceStudy};
use bnpmfa::ingest::{
    self, build_graph, read_coords, read_expression, read_labels, read_labels_unaligned, write_atomic,
};
use bnpmfa::metrics::ari;
use bnpmfa::rng::derive_seed;
use bnpmfa::sampler::{run_chain, SamplerConfig};
use bnpmfa::simulate::{generate_dataset, write_dataset, SimConfig};
use bnpmfa::summarize::{
    chain_agreement, compute_icl, compute_ppm, map_estimate, ppm_point_estimate, read_trace, select_d, write_trace,
    IclRecord,
};
use bnpmfa::{AdjacencyGraph, ChainTrace, Error, ExpressionMatrix, Result};
use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    created_unix: u64,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, outputs: &[&str]) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        config: cfg,
    };
    write_atomic(out.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)
    })
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sim = SimConfig {
        seed: cfg.seed,
        ..cfg.sim.clone()
    };
    sim.validate()?;
    let ds = generate_dataset(&sim)?;
    write_dataset(out, &sim, &ds)?;
    let found = bnpmfa::metrics::cluster_count(&ds.truth);
    if found < sim.h0 {
        info!("Potts pattern merged states: {found} of {} labels present", sim.h0);
    }
    write_manifest(
        out,
        "simulate",
        cfg,
        &["expression.csv", "coords.csv", "truth.csv", "params.json"],
    )
}

struct Data {
    x: ExpressionMatrix,
    graph: AdjacencyGraph,
}

fn load_data(cfg: &RunConfig) -> Result<Data> {
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Error::config(key, "input path is required for this command"))
    };
    let x = read_expression(need(&cfg.expression, "ingest.expression")?)?;
    let coords = read_coords(need(&cfg.coords, "ingest.coords")?, x.spot_ids())?;
    let x = cfg.ingest.preprocess(x)?;
    let graph = build_graph(&coords, cfg.ingest.neighbor_rule)?;
    info!(
        "{} genes x {} spots, {} edges ({})",
        x.n_genes(),
        x.n_spots(),
        graph.n_edges(),
        cfg.ingest.neighbor_rule
    );
    Ok(Data { x, graph })
}

fn chain_config(cfg: &RunConfig, chain: usize, threads: usize) -> SamplerConfig {
    SamplerConfig {
        seed: derive_seed(cfg.seed, "chain", chain as u64),
        parallel_width: (threads / cfg.n_chains).max(1),
        ..cfg.sampler.clone()
    }
}

fn tag_chain(e: Error, chain: usize) -> Error {
    match e {
        Error::Numerical { iteration, message } => Error::Numerical {
            iteration,
            message: format!("chain {}: {message}", chain + 1),
        },
        other => other,
    }
}

fn write_icl(path: &Path, rows: &[IclRecord]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "d,icl,H_hat")?;
        for r in rows {
            writeln!(w, "{},{},{}", r.d, r.icl, r.h_hat)?;
        }
        Ok(())
    })
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, |w| {
        let header: Vec<String> = (1..=m.ncols()).map(|k| format!("chain{k}")).collect();
        writeln!(w, "chain,{}", header.join(","))?;
        for (k, row) in m.row_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(w, "chain{},{}", k + 1, cells.join(","))?;
        }
        Ok(())
    })
}

/// Labels and Ĥ from the pooled kept draws of every chain.
fn write_estimates(out: &Path, spot_ids: &[String], traces: &[&ChainTrace]) -> Result<Vec<&'static str>> {
    let mut pooled = ChainTrace::from_records(traces.iter().flat_map(|t| t.records.iter().cloned()).collect());
    pooled.burn_in = traces[0].burn_in;
    pooled.thin = traces[0].thin;
    let ppm = compute_ppm(&pooled)?;
    let est = ppm_point_estimate(&pooled, &ppm)?;
    let map = map_estimate(&pooled)?;
    ingest::write_labels(out.join("labels_ppm.csv"), spot_ids, &est.partition.one_based())?;
    ingest::write_labels(out.join("labels_map.csv"), spot_ids, &map.partition.one_based())?;
    write_atomic(out.join("h_hat.txt"), |w| writeln!(w, "{}", est.partition.n_clusters()))?;
    info!(
        "PPM estimate: H = {}; MAP: H = {}",
        est.partition.n_clusters(),
        map.partition.n_clusters()
    );
    Ok(vec!["labels_ppm.csv", "labels_map.csv", "h_hat.txt"])
}

pub fn fit(cfg: &RunConfig, out: &Path, threads: usize) -> Result<()> {
    let data = load_data(cfg)?;
    create_dir(out)?;
    let traces: Vec<ChainTrace> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|k| {
            run_chain(
                &data.x,
                &data.graph,
                &cfg.prior,
                &cfg.hyper,
                &chain_config(cfg, k, threads),
            )
            .map_err(|e| tag_chain(e, k))
        })
        .collect::<Result<_>>()?;
    let mut outputs: Vec<String> = Vec::new();
    let mut icl_rows = Vec::new();
    for (k, t) in traces.iter().enumerate() {
        let name = format!("trace_chain{}.jsonl", k + 1);
        write_trace(out.join(&name), t)?;
        let state = t.final_state.as_ref().expect("run_chain keeps at least one state");
        icl_rows.push(IclRecord {
            d: cfg.prior.mrf_d,
            icl: compute_icl(state, &data.x, &data.graph, &cfg.prior)?,
            h_hat: state.n_clusters(),
            trace_ref: name.clone(),
        });
        outputs.push(name);
    }
    write_icl(&out.join("icl.csv"), &icl_rows)?;
    outputs.push("icl.csv".into());
    let refs: Vec<&ChainTrace> = traces.iter().collect();
    outputs.extend(
        write_estimates(out, data.x.spot_ids(), &refs)?
            .into_iter()
            .map(String::from),
    );
    if traces.len() > 1 {
        write_matrix(&out.join("agreement.csv"), &chain_agreement(&traces)?)?;
        outputs.push("agreement.csv".into());
    }
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(out, "fit", cfg, &names)
}

pub fn select_d_cmd(cfg: &RunConfig, out: &Path, threads: usize) -> Result<()> {
    let data = load_data(cfg)?;
    create_dir(out)?;
    let sampler = SamplerConfig {
        parallel_width: (threads / cfg.d_grid.len()).max(1),
        ..chain_config(cfg, 0, threads)
    };
    let sel = select_d(&data.x, &data.graph, &cfg.prior, &cfg.hyper, &sampler, &cfg.d_grid)?;
    write_icl(&out.join("icl.csv"), &sel.records)?;
    write_atomic(out.join("best_d.txt"), |w| writeln!(w, "{}", sel.best_d))?;
    let mut outputs = vec!["icl.csv".to_string(), "best_d.txt".to_string()];
    for (k, t) in sel.traces.iter().enumerate() {
        if let Ok(t) = t {
            let name = format!("trace_d{}.jsonl", cfg.d_grid[k]);
            write_trace(out.join(&name), t)?;
            outputs.push(name);
        }
    }
    let best = sel.best_trace(&cfg.d_grid).expect("selected d has a trace");
    outputs.extend(
        write_estimates(out, data.x.spot_ids(), &[best])?
            .into_iter()
            .map(String::from),
    );
    info!("selected d = {}", sel.best_d);
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(out, "select-d", cfg, &names)
}

/// Point estimates from saved traces. Spot IDs come from the expression file
/// when one is configured, otherwise `s1, s2, ...`.
pub fn summarize(cfg: &RunConfig, traces: &[PathBuf], out: &Path) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("summarize needs at least one trace file".into()));
    }
    let traces: Vec<ChainTrace> = traces.iter().map(read_trace).collect::<Result<_>>()?;
    let n = traces[0]
        .n_spots()
        .ok_or_else(|| Error::InvalidInput("trace has no kept iterations".into()))?;
    if traces.iter().any(|t| t.n_spots() != Some(n)) {
        return Err(Error::InvalidInput("traces cover different numbers of spots".into()));
    }
    let spot_ids: Vec<String> = match &cfg.expression {
        Some(p) => read_expression(p)?.spot_ids().to_vec(),
        None => (1..=n).map(|i| format!("s{i}")).collect(),
    };
    if spot_ids.len() != n {
        return Err(Error::InvalidInput(format!(
            "trace has {n} spots, expression file {}",
            spot_ids.len()
        )));
    }
    create_dir(out)?;
    let refs: Vec<&ChainTrace> = traces.iter().collect();
    let mut outputs = write_estimates(out, &spot_ids, &refs)?;
    if traces.len() > 1 {
        write_matrix(&out.join("agreement.csv"), &chain_agreement(&traces)?)?;
        outputs.push("agreement.csv");
    }
    write_manifest(out, "summarize", cfg, &outputs)
}

/// ARI between two label files joined by spot ID.
pub fn ari_cmd(truth: &Path, estimate: &Path) -> Result<f64> {
    let (ids, truth_labels) = read_labels_unaligned(truth)?;
    let est = read_labels(estimate, &ids)?;
    ari(&truth_labels, &est)
}

pub fn check_identifiability(cfg: &RunConfig, out: Option<&Path>) -> Result<bool> {
    let id = &cfg.identifiability;
    let study = InvarianceStudy {
        n: id.n,
        q: id.q,
        partitions: id.partitions,
        transforms: id.transforms,
        max_condition: id.max_condition,
        tau: id.tau,
        weight: id.weight,
    };
    let report = random_invariance_study(&study, cfg.seed)?;
    let pass = report.max_deviation < id.tolerance;
    println!(
        "max_deviation {:e} (tolerance {:e}, max condition {:.2}) {}",
        report.max_deviation,
        id.tolerance,
        report.max_condition,
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(out) = out {
        create_dir(out)?;
        write_atomic(out.join("identifiability.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)
        })?;
    }
    Ok(pass)
}
