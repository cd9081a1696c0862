//! Run configuration: flat `key = value` lines with dotted namespaces, or
//! the same keys as (possibly nested) JSON.
//!
//! ```text
//! # comments and blank lines are ignored
//! preset = visium
//! prior.family = MFM
//! prior.d = 1.0
//! sampler.iterations = 2000
//! ingest.expression = data/expression.csv
//! ```
//!
//! A `preset` is applied before any other key, wherever it appears.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bnpmfa::identifiability::ScatterWeight;
use bnpmfa::ingest::{IngestConfig, NeighborRule};
use bnpmfa::sampler::SamplerConfig;
use bnpmfa::simulate::{Lattice, SimConfig};
use bnpmfa::summarize::DEFAULT_D_GRID;
use bnpmfa::{ComponentPrior, Error, HyperParams, MrfField, PriorConfig, PriorFamily, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityConfig {
    pub n: usize,
    pub q: usize,
    pub partitions: usize,
    pub transforms: usize,
    pub max_condition: f64,
    pub tau: f64,
    pub weight: ScatterWeight,
    pub tolerance: f64,
}

impl Default for IdentifiabilityConfig {
    fn default() -> Self {
        Self {
            n: 20,
            q: 3,
            partitions: 10,
            transforms: 20,
            max_condition: 100.0,
            tau: 1.0,
            weight: ScatterWeight::Expanded,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub prior: PriorConfig,
    pub hyper: HyperParams,
    pub sampler: SamplerConfig,
    pub n_chains: usize,
    pub d_grid: Vec<f64>,
    pub ingest: IngestConfig,
    pub expression: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub sim: SimConfig,
    pub identifiability: IdentifiabilityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            prior: PriorConfig::mfm(1.0).with_mrf(1.0),
            hyper: HyperParams::new(5),
            sampler: SamplerConfig::default(),
            n_chains: 1,
            d_grid: DEFAULT_D_GRID.to_vec(),
            ingest: IngestConfig::default(),
            expression: None,
            coords: None,
            sim: SimConfig::default(),
            identifiability: IdentifiabilityConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Parse a config file into `(key, value)` pairs, in file order.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if text.trim_start().starts_with('{') {
        let json: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        let mut out = Vec::new();
        flatten("", &json, &mut out).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: None,
            column: None,
            message,
        })?;
        return Ok(out);
    }
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: Some(k + 1),
            column: None,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) -> std::result::Result<(), String> {
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(format!("`{prefix}`: unsupported value {other}")),
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out)?;
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect::<std::result::Result<_, _>>()?;
            out.push((prefix.to_string(), parts.join(",")));
        }
        other => out.push((prefix.to_string(), scalar(other)?)),
    }
    Ok(())
}

impl RunConfig {
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in pairs.iter().filter(|(k, _)| k == "preset") {
            cfg.apply_preset(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_pairs(&read_pairs(p)?),
            None => Ok(Self::default()),
        }
    }

    fn apply_preset(&mut self, key: &str, name: &str) -> Result<()> {
        match name {
            // Hexagonal Visium-style arrays.
            "visium" => {
                self.hyper.q = 15;
                self.ingest = IngestConfig {
                    normalize: true,
                    n_hvg: Some(2000),
                    neighbor_rule: NeighborRule::Triangle6,
                };
            }
            // Full-size simulation: 40 × 40 lattice, 2000 genes.
            "sim-full" => {
                self.sim = SimConfig::default();
                self.hyper.q = self.sim.q;
            }
            // Laptop-size simulation used by the acceptance checks.
            "sim-desk" => {
                self.sim = SimConfig {
                    lattice: Lattice::Square(20),
                    p: 200,
                    q: 5,
                    potts_d: 2.0,
                    potts_sweeps: 100,
                    min_label_frac: 0.2,
                    ..SimConfig::default()
                };
                self.hyper.q = 5;
                self.sampler.iterations = 600;
                self.sampler.burn_in = 300;
                self.d_grid = vec![0.0, 0.5, 1.0, 1.5];
            }
            other => {
                return Err(Error::config(
                    key,
                    format!("unknown preset `{other}` (expected visium, sim-full or sim-desk)"),
                ))
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "n_chains" | "sampler.n_chains" => self.n_chains = parse(key, v)?,

            "prior.family" => {
                let family = match v.to_ascii_uppercase().as_str() {
                    "DP" => PriorFamily::Dp,
                    "PY" => PriorFamily::Py,
                    "MFM" => PriorFamily::Mfm,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("unknown family `{v}` (expected DP, PY or MFM)"),
                        ))
                    }
                };
                self.prior.family = family;
            }
            "prior.beta" => self.prior.beta = parse(key, v)?,
            "prior.delta" => self.prior.delta = parse(key, v)?,
            "prior.d" => self.prior.mrf_d = parse(key, v)?,
            "prior.g" => self.prior.mrf_g = MrfField::uniform(parse(key, v)?),
            "prior.g_per_cluster" => self.prior.mrf_g.per_cluster = parse_list(key, v)?,
            "prior.lambda" => self.prior.component_prior = ComponentPrior::ShiftedPoisson { lambda: parse(key, v)? },
            "prior.allow_nonstandard_py" => self.prior.allow_nonstandard_py = parse(key, v)?,

            "hyper.tau_w" => self.hyper.tau_w = parse(key, v)?,
            "hyper.tau_mu" => self.hyper.tau_mu = parse(key, v)?,
            "hyper.a" => self.hyper.a = parse(key, v)?,
            "hyper.b" => self.hyper.b = parse(key, v)?,
            "hyper.q" => self.hyper.q = parse(key, v)?,

            "sampler.iterations" => self.sampler.iterations = parse(key, v)?,
            "sampler.burn_in" => self.sampler.burn_in = parse(key, v)?,
            "sampler.thin" => self.sampler.thin = parse(key, v)?,
            "sampler.init" => self.sampler.init = parse(key, v)?,
            "sampler.randomize_order" => self.sampler.randomize_order = parse(key, v)?,
            "sampler.d_grid" | "select_d.grid" => self.d_grid = parse_list(key, v)?,

            "ingest.expression" => self.expression = Some(PathBuf::from(v)),
            "ingest.coords" => self.coords = Some(PathBuf::from(v)),
            "ingest.normalize" => self.ingest.normalize = parse(key, v)?,
            "ingest.n_hvg" => {
                self.ingest.n_hvg = match v {
                    "" | "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "ingest.neighbor_rule" => self.ingest.neighbor_rule = parse(key, v)?,

            "sim.lattice" => self.sim.lattice = parse(key, v)?,
            "sim.h0" => self.sim.h0 = parse(key, v)?,
            "sim.potts_d" => self.sim.potts_d = parse(key, v)?,
            "sim.potts_sweeps" => self.sim.potts_sweeps = parse(key, v)?,
            "sim.min_label_frac" => self.sim.min_label_frac = parse(key, v)?,
            "sim.p" => self.sim.p = parse(key, v)?,
            "sim.q" => self.sim.q = parse(key, v)?,
            "sim.signal" => self.sim.signal = parse(key, v)?,

            "identifiability.n" => self.identifiability.n = parse(key, v)?,
            "identifiability.q" => self.identifiability.q = parse(key, v)?,
            "identifiability.partitions" => self.identifiability.partitions = parse(key, v)?,
            "identifiability.transforms" => self.identifiability.transforms = parse(key, v)?,
            "identifiability.max_condition" => self.identifiability.max_condition = parse(key, v)?,
            "identifiability.tau" => self.identifiability.tau = parse(key, v)?,
            "identifiability.tolerance" => self.identifiability.tolerance = parse(key, v)?,
            "identifiability.weight" => {
                self.identifiability.weight = match v {
                    "expanded" => ScatterWeight::Expanded,
                    "conjugate" => ScatterWeight::Conjugate,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("unknown weight `{v}` (expected expanded or conjugate)"),
                        ))
                    }
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Re-check every module invariant.
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.hyper.validate()?;
        self.sampler.validate()?;
        if self.n_chains < 1 {
            return Err(Error::config("n_chains", "must be >= 1"));
        }
        if self.d_grid.is_empty() {
            return Err(Error::config("sampler.d_grid", "must list at least one value"));
        }
        for &d in &self.d_grid {
            self.prior.clone().with_mrf(d).validate().map_err(|e| match e {
                Error::Config { message, .. } => Error::config("sampler.d_grid", message),
                other => other,
            })?;
        }
        let id = &self.identifiability;
        if id.q < 1 || id.n <= id.q {
            return Err(Error::config("identifiability.n", "need n > q >= 1"));
        }
        if id.partitions < 2 || id.transforms < 1 {
            return Err(Error::config(
                "identifiability.partitions",
                "need >= 2 partitions and >= 1 transform",
            ));
        }
        if !(id.max_condition > 1.0 && id.tau > 0.0 && id.tolerance > 0.0) {
            return Err(Error::config(
                "identifiability.max_condition",
                "need max_condition > 1, tau > 0 and tolerance > 0",
            ));
        }
        self.sim.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(s: &[(&str, &str)]) -> Vec<(String, String)> {
        s.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flat_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let flat = dir.path().join("a.conf");
        let json = dir.path().join("b.json");
        std::fs::write(
            &flat,
            "# run\nprior.family = PY\nprior.delta = 0.25\nsampler.d_grid = 0, 1\nhyper.q=3\n",
        )
        .unwrap();
        std::fs::write(
            &json,
            r#"{"prior": {"family": "PY", "delta": 0.25}, "sampler.d_grid": [0, 1], "hyper": {"q": 3}}"#,
        )
        .unwrap();
        let a = RunConfig::load(Some(&flat)).unwrap();
        let b = RunConfig::load(Some(&json)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prior.family, PriorFamily::Py);
        assert_eq!(a.d_grid, vec![0.0, 1.0]);
        assert_eq!(a.hyper.q, 3);
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::from_pairs(&pairs(&[("prior.beta", "abc")])).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "prior.beta"));
        let e = RunConfig::from_pairs(&pairs(&[("prior.bogus", "1")])).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "prior.bogus"));
        let cfg = RunConfig::from_pairs(&pairs(&[("prior.family", "DP"), ("prior.delta", "0.3")])).unwrap();
        let e = cfg.validate().unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "prior.delta"));
    }

    #[test]
    fn preset_applies_first() {
        let cfg = RunConfig::from_pairs(&pairs(&[("hyper.q", "7"), ("preset", "visium")])).unwrap();
        assert_eq!(cfg.hyper.q, 7);
        assert_eq!(cfg.ingest.n_hvg, Some(2000));
        assert!(RunConfig::from_pairs(&pairs(&[("preset", "nope")])).is_err());
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }
}
