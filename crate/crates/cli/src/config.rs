//! Run configuration.
//!
//! A config is a single JSON object. Every field is optional and falls back
//! to the table below; command-line flags override the file.
//!
//! | field            | default                                   |
//! |------------------|-------------------------------------------|
//! | `mode`           | `simulate`                                |
//! | `system`         | one qubit, bias 0.1                       |
//! | `noise`          | σz noise, variance 4, decay rate 1        |
//! | `dt`             | 0.2                                       |
//! | `steps`          | 10                                        |
//! | `n_traj`         | 10000                                     |
//! | `seed`           | none, required for `monte-carlo` sources  |
//! | `source`         | `monte-carlo`                             |
//! | `hierarchy_depth`| 6                                         |
//! | `k_trunc`        | `[]`, meaning the 1e-3 norm cutoff        |
//! | `horizon`        | 40                                        |
//! | `lambdas`        | none, meaning 0.1·|K(t_0)|                |
//! | `biases`         | `[]`, meaning the system bias only        |
//! | `fit_axes`       | `[]`, meaning the noise axes on qubit 0   |
//! | `shots`          | 0                                         |
//! | `threshold`      | 3                                         |
//! | `initial_state`  | `plus`                                    |
//! | `element`        | `[0, 1]`                                  |
//! | `project_cptp`   | false                                     |
//! | `input`          | none                                      |
//! | `output`         | `out`                                     |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ttm_core::noise::MAX_STEPS;
use ttm_core::propagator::SUBSTEPS;
use ttm_core::{Axis, NoiseSpec, SystemSpec};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Ttm,
    Nonmarkov,
    Spectroscopy,
    Twoqubit,
    Xy4,
    Ingest,
}

/// Where dynamical maps come from when no input file is given.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MapSource {
    /// Trajectory ensemble; needs a seed.
    MonteCarlo,
    /// Closed form, for σz noise only.
    Analytic,
    /// Exact auxiliary-mode hierarchy, for exponential correlations.
    Hierarchy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// `(|0⟩+|1⟩)/√2`.
    Plus,
    /// `(|00⟩+|10⟩)/√2`.
    Product,
    /// `(|01⟩+|10⟩)/√2`.
    Bell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub system: SystemSpec,
    pub noise: NoiseSpec,
    pub dt: f64,
    pub steps: usize,
    pub n_traj: usize,
    pub seed: Option<u64>,
    pub source: MapSource,
    pub hierarchy_depth: usize,
    pub k_trunc: Vec<usize>,
    pub horizon: usize,
    pub lambdas: Option<Vec<f64>>,
    pub biases: Vec<f64>,
    pub fit_axes: Vec<Axis>,
    pub shots: u64,
    pub threshold: f64,
    pub initial_state: InitialState,
    pub element: [usize; 2],
    pub project_cptp: bool,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Simulate,
            system: SystemSpec::qubit(0.1),
            noise: NoiseSpec::single(0, Axis::Z, 4.0, 1.0, 0.0),
            dt: 0.2,
            steps: 10,
            n_traj: 10_000,
            seed: None,
            source: MapSource::MonteCarlo,
            hierarchy_depth: 6,
            k_trunc: Vec::new(),
            horizon: 40,
            lambdas: None,
            biases: Vec::new(),
            fit_axes: Vec::new(),
            shots: 0,
            threshold: 3.0,
            initial_state: InitialState::Plus,
            element: [0, 1],
            project_cptp: false,
            input: None,
            output: PathBuf::from("out"),
        }
    }
}

fn field(name: &'static str, message: impl Into<String>) -> CliError {
    CliError::Config { field: name, message: message.into() }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_owned(), source: e })?;
        serde_json::from_str(&text).map_err(|e| CliError::ConfigSyntax {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Whether the run draws random numbers.
    pub fn is_stochastic(&self) -> bool {
        let simulated = self.input.is_none() && self.mode != Mode::Ingest;
        let sampled = simulated && (self.source == MapSource::MonteCarlo || self.mode == Mode::Xy4);
        sampled || self.shots > 0
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate().map_err(|e| field("system", e.to_string()))?;
        self.noise.validate().map_err(|e| field("noise", e.to_string()))?;
        self.system.check_noise(&self.noise).map_err(|e| field("noise", e.to_string()))?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(field("dt", "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(field("steps", "must be at least 1"));
        }
        if self.input.is_none() && self.steps * SUBSTEPS > MAX_STEPS {
            return Err(field("steps", format!("at most {} steps fit the simulator grid", MAX_STEPS / SUBSTEPS)));
        }
        if self.is_stochastic() && self.seed.is_none() {
            return Err(field("seed", "required for stochastic runs, pass --seed"));
        }
        if self.is_stochastic() && self.shots == 0 && self.n_traj == 0 {
            return Err(field("n_traj", "must be at least 1"));
        }
        if self.k_trunc.iter().any(|&k| k == 0) {
            return Err(field("k_trunc", "entries must be at least 1"));
        }
        if self.biases.iter().any(|w| !w.is_finite() || *w == 0.0) {
            return Err(field("biases", "entries must be finite and nonzero"));
        }
        if let Some(l) = &self.lambdas {
            if l.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(field("lambdas", "entries must be finite and non-negative"));
            }
        }
        if !(self.threshold > 1.0) {
            return Err(field("threshold", "must exceed 1"));
        }
        if self.mode == Mode::Spectroscopy && self.fit_axes().is_empty() {
            return Err(field("fit_axes", "no axes given and no noise channel on qubit 0"));
        }
        match self.mode {
            Mode::Ingest if self.input.is_none() => return Err(field("input", "ingest needs an input file")),
            Mode::Twoqubit if self.system.n_qubits != 2 => return Err(field("system", "twoqubit needs a two-qubit system")),
            Mode::Twoqubit if self.steps < 2 => return Err(field("steps", "twoqubit needs at least 2 steps")),
            Mode::Spectroscopy | Mode::Xy4 if self.system.n_qubits != 1 => {
                return Err(field("system", "this mode needs a single qubit"))
            }
            _ => {}
        }
        let d = 1usize << self.system.n_qubits;
        if self.element.iter().any(|&i| i >= d) {
            return Err(field("element", format!("indices must be below {d}")));
        }
        Ok(())
    }

    /// Channels to fit: the configured axes, else those the noise couples to.
    pub fn fit_axes(&self) -> Vec<Axis> {
        if !self.fit_axes.is_empty() {
            return self.fit_axes.clone();
        }
        let mut axes: Vec<Axis> = self.noise.channels.iter().filter(|c| c.qubit == 0).map(|c| c.axis).collect();
        axes.sort();
        axes.dedup();
        axes
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
