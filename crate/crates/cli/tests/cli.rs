use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bnpmfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnpmfa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = "sim.lattice = square:8\nsim.p = 30\nsim.q = 3\nsim.potts_sweeps = 20\nhyper.q = 3\n\
sampler.iterations = 20\nsampler.burn_in = 10\nsampler.thin = 2\n";

/// Simulate a small dataset and return a config that points at it.
fn small_dataset(dir: &Path) -> PathBuf {
    let sim_conf = write(dir, "sim.conf", SMALL);
    let data = dir.join("data");
    let o = bnpmfa(&["simulate", "--config", p(&sim_conf), "--seed", "7", "--out", p(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = format!(
        "{SMALL}ingest.expression = {}\ningest.coords = {}\n",
        data.join("expression.csv").display(),
        data.join("coords.csv").display()
    );
    write(dir, "fit.conf", &fit)
}

#[test]
fn simulate_writes_consistent_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "sim.conf", SMALL);
    for name in ["a", "b"] {
        let o = bnpmfa(&[
            "simulate",
            "--config",
            p(&conf),
            "--seed",
            "7",
            "--out",
            p(&dir.path().join(name)),
        ]);
        assert!(o.status.success());
    }
    for f in ["expression.csv", "coords.csv", "truth.csv", "params.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let expr = std::fs::read_to_string(dir.path().join("a/expression.csv")).unwrap();
    assert_eq!(expr.lines().count(), 31);
    assert_eq!(expr.lines().next().unwrap().split(',').count(), 65);
    let truth = std::fs::read_to_string(dir.path().join("a/truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 65);
}

#[test]
fn fit_emits_all_files_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_dataset(dir.path());
    let runs: Vec<PathBuf> = ["r1", "r2"].iter().map(|r| dir.path().join(r)).collect();
    for out in &runs {
        let o = bnpmfa(&[
            "fit",
            "--config",
            p(&conf),
            "--seed",
            "3",
            "--out",
            p(out),
            "--threads",
            "2",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "labels_ppm.csv",
        "labels_map.csv",
        "icl.csv",
        "h_hat.txt",
        "trace_chain1.jsonl",
    ] {
        let a = std::fs::read(runs[0].join(f)).unwrap();
        assert_eq!(a, std::fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    assert!(runs[0].join("manifest.json").exists());
    // Labels join back to every spot.
    let expr = std::fs::read_to_string(dir.path().join("data/expression.csv")).unwrap();
    let spots: Vec<&str> = expr.lines().next().unwrap().split(',').skip(1).collect();
    let labels = std::fs::read_to_string(runs[0].join("labels_ppm.csv")).unwrap();
    let ids: Vec<&str> = labels.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, spots);
}

#[test]
fn multiple_chains_report_agreement_and_summarize_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_dataset(dir.path());
    let out = dir.path().join("fit");
    let o = bnpmfa(&["fit", "--config", p(&conf), "--out", p(&out), "--threads", "2"]);
    assert!(o.status.success());
    let chains_conf = dir.path().join("chains.conf");
    let text = std::fs::read_to_string(&conf).unwrap() + "n_chains = 3\n";
    std::fs::write(&chains_conf, text).unwrap();
    let o = bnpmfa(&["fit", "--config", p(&chains_conf), "--out", p(&out), "--threads", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agreement = std::fs::read_to_string(out.join("agreement.csv")).unwrap();
    assert_eq!(agreement.lines().count(), 4);

    let sum = dir.path().join("sum");
    let traces: Vec<String> = (1..=3)
        .map(|k| p(&out.join(format!("trace_chain{k}.jsonl"))).to_string())
        .collect();
    let mut args = vec!["summarize", "--config", p(&chains_conf), "--out", p(&sum)];
    args.extend(traces.iter().map(String::as_str));
    let o = bnpmfa(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["labels_ppm.csv", "labels_map.csv", "agreement.csv"] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(sum.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn select_d_writes_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_dataset(dir.path());
    let grid = dir.path().join("grid.conf");
    std::fs::write(
        &grid,
        std::fs::read_to_string(&conf).unwrap() + "sampler.d_grid = 0, 1\n",
    )
    .unwrap();
    let out = dir.path().join("sel");
    let o = bnpmfa(&["select-d", "--config", p(&grid), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let icl = std::fs::read_to_string(out.join("icl.csv")).unwrap();
    let rows: Vec<&str> = icl.lines().collect();
    assert_eq!(rows[0], "d,icl,H_hat");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,") && rows[2].starts_with("1,"));
    let best = std::fs::read_to_string(out.join("best_d.txt")).unwrap();
    assert!(best == "0\n" || best == "1\n");
    assert!(out.join("labels_ppm.csv").exists());
}

#[test]
fn ari_joins_by_spot_id() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "spot_id,label\nw,1\nx,1\ny,2\nz,2\n");
    let b = write(dir.path(), "b.csv", "spot_id,label\nw,1\nx,2\ny,1\nz,2\n");
    let shuffled = write(dir.path(), "c.csv", "spot_id,label\nz,2\ny,1\nw,1\nx,2\n");
    let run = |x: &Path, y: &Path| String::from_utf8(bnpmfa(&["ari", p(x), p(y)]).stdout).unwrap();
    assert_eq!(run(&a, &a), "1.000000\n");
    assert_eq!(run(&a, &b), "-0.500000\n");
    assert_eq!(run(&a, &shuffled), "-0.500000\n");

    let missing = write(dir.path(), "d.csv", "spot_id,label\nw,1\nx,2\nq,1\n");
    let o = bnpmfa(&["ari", p(&a), p(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("y") && err.contains("z"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.conf", "prior.family = DP\nprior.delta = 0.5\n");
    let o = bnpmfa(&["fit", "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("prior.delta"));

    let py = write(dir.path(), "py.conf", "prior.family = PY\nprior.delta = -0.1\n");
    let o = bnpmfa(&["check-identifiability", "--config", p(&py), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = bnpmfa(&[
        "check-identifiability",
        "--config",
        p(&py),
        "--out",
        p(dir.path()),
        "--allow-nonstandard-py",
    ]);
    assert_eq!(o.status.code(), Some(0));

    let unknown = write(dir.path(), "u.conf", "sampler.iters = 5\n");
    assert_eq!(bnpmfa(&["fit", "--config", p(&unknown)]).status.code(), Some(2));

    let missing_input = write(
        dir.path(),
        "m.conf",
        "ingest.expression = /nonexistent/x.csv\ningest.coords = /nonexistent/c.csv\n",
    );
    assert_eq!(bnpmfa(&["fit", "--config", p(&missing_input)]).status.code(), Some(3));
    assert_eq!(
        bnpmfa(&["ari", "/nonexistent/a", "/nonexistent/b"]).status.code(),
        Some(3)
    );
}

#[test]
fn identifiability_check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = bnpmfa(&["check-identifiability", "--seed", "4", "--out", p(dir.path())]);
    assert!(o.status.success());
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(
        line.starts_with("max_deviation") && line.trim_end().ends_with("PASS"),
        "{line}"
    );
    assert!(dir.path().join("identifiability.json").exists());
}
