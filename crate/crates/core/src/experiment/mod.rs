//! Config-driven experiment runner.
//!
//! A run renders every artifact in memory, then writes them in order
//! followed by `summary.txt` and `manifest.json`. Only the manifest carries
//! a timestamp.

mod targets;
mod tasks;

pub use targets::{Target, TargetOutput};
pub use tasks::converse_inputs;

use crate::comparison::ComparisonError;
use crate::converse::ConverseError;
use crate::csvfmt::fmt_f64;
use crate::lyapunov::{DiniOptions, LyapunovError};
use crate::models::{common_lyapunov_pair, unstable_switching_pair, ModelDescriptor, ModelError, ScalarVariant};
use crate::probes::{Notion, ProbeError, ProbeOptions, Witness};
use crate::systems::{DisturbanceSignal, SystemError};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(String),
    #[error("premise not established: {0}")]
    Premise(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Converse(#[from] ConverseError),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
    #[error(transparent)]
    System(#[from] SystemError),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for ExperimentError {
    fn from(e: serde_json::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required by every task except `reproduce`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDescriptor>,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Simulate(SimulateTask),
    Probe(ProbeTask),
    Verify(VerifyTask),
    Construct(ConstructTask),
    Reproduce(ReproduceTask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateTask {
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Defaults to the constant signal 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<DisturbanceSignal>,
    pub step: f64,
    /// Replays a witness file: its x, signal and t replace the fields above.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<PathBuf>,
}

impl Default for SimulateTask {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            x0: Vec::new(),
            signal: None,
            step: 1e-3,
            witness: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeTask {
    pub notions: Vec<Notion>,
    pub options: ProbeOptions,
    /// RFC grids.
    pub c_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    /// REP and US grids.
    pub h_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// Attractivity radii.
    pub r_grid: Vec<f64>,
    pub fc_radius: f64,
}

impl Default for ProbeTask {
    fn default() -> Self {
        Self {
            notions: vec![Notion::RFC, Notion::REP],
            options: ProbeOptions::default(),
            c_grid: vec![0.0, 0.5, 1.0, 2.0],
            tau_grid: vec![0.0, 0.5, 1.0, 2.0],
            h_grid: vec![0.5, 1.0],
            eps_grid: vec![0.1, 0.5],
            r_grid: vec![0.5, 1.0, 2.0],
            fc_radius: 2.0,
        }
    }
}

/// Decay rate checked by `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSpec {
    /// The candidate's own α.
    Candidate,
    Linear { c: f64 },
    Quadratic { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyTask {
    pub radii: Vec<f64>,
    /// Random unit directions per radius, on top of the axis corners.
    pub directions: usize,
    /// Random signals on top of the constant corners of D.
    pub signals: usize,
    pub signal_horizon: f64,
    pub pieces: usize,
    pub alpha: AlphaSpec,
    pub tol: f64,
    pub dini: DiniOptions,
    pub coercivity_radii: Vec<f64>,
    pub coercivity_budget: usize,
}

impl Default for VerifyTask {
    fn default() -> Self {
        Self {
            radii: vec![0.5, 1.0, 2.0, 4.0],
            directions: 16,
            signals: 4,
            signal_horizon: 1.0,
            pieces: 4,
            alpha: AlphaSpec::Candidate,
            tol: crate::lyapunov::DEFAULT_DECAY_TOL,
            dini: DiniOptions::default(),
            coercivity_radii: vec![],
            coercivity_budget: 64,
        }
    }
}

/// Source of the KL bound feeding the converse construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSpec {
    /// β(r,t) = gain·r·e^{−rate·t}.
    Exponential { gain: f64, rate: f64 },
    /// The fitted β̃ of a UGAS probe on `r_grid`.
    Probe { r_grid: Vec<f64>, options: ProbeOptions },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesChoice {
    Integral,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructTask {
    pub beta: BetaSpec,
    pub series: SeriesChoice,
    pub k_max: u32,
    pub radius: f64,
    pub eta: f64,
    pub quadrature_step: f64,
    pub disturbance_budget: usize,
    pub pieces: usize,
    /// W, ψ₁ and every V_k are tabulated at these multiples of e₁.
    pub eval_radii: Vec<f64>,
}

impl Default for ConstructTask {
    fn default() -> Self {
        Self {
            beta: BetaSpec::Probe {
                r_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0],
                options: ProbeOptions::default(),
            },
            series: SeriesChoice::Integral,
            k_max: 4,
            radius: 1.0,
            eta: 0.5,
            quadrature_step: 1e-3,
            disturbance_budget: 8,
            pieces: 8,
            eval_radii: vec![0.0, 0.25, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceTask {
    pub target: Target,
    /// Block count for `ex62`.
    #[serde(default = "default_n")]
    pub n: usize,
    /// ε for `ex62`.
    #[serde(default)]
    pub epsilon: f64,
}

fn default_n() -> usize {
    40
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let usage = |m: &str| Err(ExperimentError::Usage(m.into()));
        if !matches!(self.task, Task::Reproduce(_)) && self.model.is_none() {
            return usage("this task needs a model");
        }
        match &self.task {
            Task::Simulate(s) => {
                if !(s.horizon >= 0.0 && s.horizon.is_finite()) || !(s.step > 0.0) {
                    return usage("simulate needs a finite horizon ≥ 0 and a positive step");
                }
                if s.witness.is_none() && s.x0.is_empty() {
                    return usage("simulate needs x0 or a witness file");
                }
            }
            Task::Probe(p) => {
                if p.notions.is_empty() {
                    return usage("probe needs at least one notion");
                }
            }
            Task::Verify(v) => {
                if v.radii.is_empty() || v.radii.iter().any(|r| !(*r > 0.0)) {
                    return usage("verify needs positive radii");
                }
            }
            Task::Construct(c) => {
                if c.k_max == 0 || !(c.radius > 0.0) {
                    return usage("construct needs k_max ≥ 1 and a positive radius");
                }
            }
            Task::Reproduce(r) => {
                if r.n == 0 || !(0.0..0.5).contains(&r.epsilon) {
                    return usage("reproduce needs n ≥ 1 and epsilon in [0, 0.5)");
                }
            }
        }
        Ok(())
    }
}

/// Parses model shorthands: `scalar:ii`, `ugatt`, `blowup:3`,
/// `block:40:0.25`, `linear:-1`, `switched:common`, `switched:unstable`.
pub fn parse_model(s: &str) -> Result<ModelDescriptor, ExperimentError> {
    let bad = || ExperimentError::Usage(format!("unknown model shorthand {s:?}"));
    let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    Ok(match parts.as_slice() {
        ["scalar", v] => ModelDescriptor::Scalar {
            variant: *ScalarVariant::ALL.iter().find(|x| x.label() == *v).ok_or_else(bad)?,
        },
        ["ugatt"] => ModelDescriptor::Ugatt,
        ["blowup"] => ModelDescriptor::Blowup { c: 3.0 },
        ["blowup", c] => ModelDescriptor::Blowup { c: num(c)? },
        ["block", n] => ModelDescriptor::L2Block {
            n: n.parse().map_err(|_| bad())?,
            epsilon: 0.0,
        },
        ["block", n, e] => ModelDescriptor::L2Block {
            n: n.parse().map_err(|_| bad())?,
            epsilon: num(e)?,
        },
        ["linear", a] => ModelDescriptor::linear(&DMatrix::from_element(1, 1, num(a)?)),
        ["switched", "common"] => ModelDescriptor::switched(&common_lyapunov_pair()),
        ["switched", "unstable"] => ModelDescriptor::switched(&unstable_switching_pair()),
        _ => return Err(bad()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// A refutation or escape was found; witness files were written.
    Refuted,
    /// A reproduce target disagreed with its expected outcome.
    Mismatch,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::Refuted => 2,
            RunStatus::Mismatch => 3,
        }
    }
}

/// Rendered artifacts of a run, in write order.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Vec<String>,
}

impl Artifacts {
    pub(crate) fn add(&mut self, name: impl Into<String>, body: Vec<u8>) {
        self.files.push((name.into(), body));
    }

    pub(crate) fn add_csv(&mut self, name: impl Into<String>, header: &[&str], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
        self.add(name, csv_bytes(header, rows)?);
        Ok(())
    }

    pub(crate) fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<(), ExperimentError> {
        let mut body = serde_json::to_vec_pretty(value)?;
        body.push(b'\n');
        self.add(name, body);
        Ok(())
    }

    pub(crate) fn add_witness(&mut self, name: impl Into<String>, w: &Witness) -> Result<(), ExperimentError> {
        self.add_json(name, w)
    }

    pub(crate) fn line(&mut self, s: impl Into<String>) {
        self.summary.push(s.into());
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }
}

pub(crate) fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Io(e.to_string()))
}

pub(crate) fn f(v: f64) -> String {
    fmt_f64(v)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub artifacts: Artifacts,
}

/// Computes every artifact without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let mut art = Artifacts::default();
    let status = match &cfg.task {
        Task::Reproduce(r) => {
            let out = targets::reproduce(r, cfg.seed)?;
            art = out.artifacts;
            if out.matched {
                RunStatus::Ok
            } else {
                RunStatus::Mismatch
            }
        }
        task => {
            let built = cfg.model.as_ref().expect("validated").build()?;
            let refuted = match task {
                Task::Simulate(s) => tasks::simulate(&built, s, &mut art)?,
                Task::Probe(p) => tasks::probe(&built, p, cfg.seed, &mut art)?,
                Task::Verify(v) => tasks::verify(&built, v, cfg.seed, &mut art)?,
                Task::Construct(c) => tasks::construct(&built, c, cfg.seed, &mut art)?,
                Task::Reproduce(_) => unreachable!(),
            };
            if refuted {
                RunStatus::Refuted
            } else {
                RunStatus::Ok
            }
        }
    };
    Ok(RunOutcome { status, artifacts: art })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    status: RunStatus,
    created_unix: u64,
    files: Vec<&'a str>,
}

/// Runs `cfg` and writes its artifacts, `summary.txt` and `manifest.json`
/// into `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let outcome = execute(cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    for (name, body) in &outcome.artifacts.files {
        std::fs::write(cfg.out.join(name), body)?;
    }
    let mut summary = outcome.artifacts.summary.join("\n");
    summary.push('\n');
    std::fs::write(cfg.out.join("summary.txt"), summary)?;
    let mut files: Vec<&str> = outcome.artifacts.files.iter().map(|f| f.0.as_str()).collect();
    files.push("summary.txt");
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        status: outcome.status,
        created_unix,
        files,
    };
    let mut body = serde_json::to_vec_pretty(&manifest)?;
    body.push(b'\n');
    std::fs::write(cfg.out.join("manifest.json"), body)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_bit_exactly() {
        let cfg = ExperimentConfig {
            model: Some(parse_model("block:5:0.1").unwrap()),
            task: Task::Construct(ConstructTask {
                quadrature_step: 0.1 + 0.2,
                eval_radii: vec![std::f64::consts::PI, 1e-300, 5e-324],
                ..Default::default()
            }),
            seed: u64::MAX,
            out: "x".into(),
        };
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let Task::Construct(c) = &back.task else { panic!() };
        assert_eq!(c.quadrature_step.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(c.eval_radii[2].to_bits(), 5e-324f64.to_bits());
    }

    #[test]
    fn schema_violations_are_usage_errors() {
        for text in [
            r#"{"task": {"kind": "probe"}}"#,
            r#"{"task": {"kind": "nope"}, "model": {"model": "ugatt"}}"#,
            r#"{"task": {"kind": "reproduce", "target": "ex26", "bogus": 1}}"#,
            r#"{"task": {"kind": "simulate"}, "model": {"model": "ugatt"}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(ExperimentError::Usage(_))), "{text}");
        }
        let ok = r#"{"task": {"kind": "reproduce", "target": "switched"}}"#;
        let cfg = ExperimentConfig::from_json(ok).unwrap();
        assert_eq!(cfg.out, PathBuf::from("out"));
    }

    #[test]
    fn shorthands() {
        assert_eq!(parse_model("ugatt").unwrap(), ModelDescriptor::Ugatt);
        assert_eq!(
            parse_model("block:40:0.25").unwrap(),
            ModelDescriptor::L2Block { n: 40, epsilon: 0.25 }
        );
        assert!(parse_model("scalar:v").is_err());
        for s in ["scalar:ii", "blowup:3", "linear:-1", "switched:common", "switched:unstable"] {
            parse_model(s).unwrap().build().unwrap();
        }
    }
}
