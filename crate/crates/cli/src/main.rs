//! `ttm`: batch front-end for transfer-tensor analyses.

mod config;
mod error;
mod output;
mod pipeline;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ttm_core::Axis;

use config::{InitialState, MapSource, Mode, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "ttm", version, about = "Transfer tensors, memory kernels and noise spectroscopy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dynamical maps and the evolved initial state.
    Simulate(RunArgs),
    /// Transfer tensors, norm profile and truncated predictions.
    Ttm(RunArgs),
    /// Bloch-volume non-Markovianity of TTM-extended maps.
    Nonmarkov(RunArgs),
    /// Memory kernel, fitted noise correlations and spectra.
    Spectroscopy(RunArgs),
    /// Separable and correlated tensors of a qubit pair.
    Twoqubit(RunArgs),
    /// Norm profiles with and without XY4 decoupling.
    Xy4(RunArgs),
    /// Reads tomography records or a map document and checks positivity.
    Ingest(RunArgs),
    /// Runs a named end-to-end preset.
    Preset {
        /// One of fig1, fig2, fig3top, fig3bottom, fig4, fig5, fig6, xy4.
        name: String,
        /// Print the preset configs instead of running them.
        #[arg(long)]
        print_config: bool,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Prints the default config.
    Defaults,
}

/// Overrides for [`RunConfig`] fields.
#[derive(Args, Default)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Number of maps `K`.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long, value_enum)]
    source: Option<MapSource>,
    #[arg(long)]
    hierarchy_depth: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_trunc: Option<Vec<usize>>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Continuity weight at every time, or one per time.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    biases: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_axis)]
    fit_axes: Option<Vec<Axis>>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    initial_state: Option<InitialState>,
    /// Density-matrix element `i,j` to report.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    element: Option<Vec<usize>>,
    #[arg(long)]
    project_cptp: bool,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    match s {
        "x" => Ok(Axis::X),
        "y" => Ok(Axis::Y),
        "z" => Ok(Axis::Z),
        _ => Err(format!("expected x, y or z, got {s:?}")),
    }
}

impl RunArgs {
    fn apply(&self, c: &mut RunConfig) -> Result<(), CliError> {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        set!(dt, steps, n_traj, source, hierarchy_depth, k_trunc, horizon, biases, fit_axes, shots, threshold, initial_state, output);
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.lambdas.is_some() {
            c.lambdas = self.lambdas.clone();
        }
        if self.input.is_some() {
            c.input = self.input.clone();
        }
        if let Some(e) = &self.element {
            c.element = <[usize; 2]>::try_from(e.as_slice())
                .map_err(|_| CliError::Config { field: "element", message: "expected two indices i,j".into() })?;
        }
        c.project_cptp |= self.project_cptp;
        Ok(())
    }

    fn resolve(&self, mode: Mode) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        c.mode = mode;
        self.apply(&mut c)?;
        Ok(c)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Ttm(a) => (Mode::Ttm, a),
        Command::Nonmarkov(a) => (Mode::Nonmarkov, a),
        Command::Spectroscopy(a) => (Mode::Spectroscopy, a),
        Command::Twoqubit(a) => (Mode::Twoqubit, a),
        Command::Xy4(a) => (Mode::Xy4, a),
        Command::Ingest(a) => (Mode::Ingest, a),
        Command::Defaults => {
            println!("{}", serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes"));
            return Ok(());
        }
        Command::Preset { name, print_config, args } => {
            if args.config.is_some() {
                return Err(CliError::Config { field: "config", message: "presets take flags only".into() });
            }
            if print_config {
                for (sub, mut c) in presets::configs(&name)? {
                    args.apply(&mut c)?;
                    println!("// {}", if sub.is_empty() { "." } else { &sub });
                    println!("{}", serde_json::to_string_pretty(&c).expect("config serializes"));
                }
                return Ok(());
            }
            args.apply(&mut RunConfig::default())?;
            let root = args.output.clone().unwrap_or_else(|| PathBuf::from("out").join(&name));
            for path in presets::run(&name, &root, |c| {
                // Checked on the default config above.
                let _ = args.apply(c);
            })? {
                println!("{}", path.display());
            }
            return Ok(());
        }
    };
    let config = args.resolve(mode)?;
    for path in pipeline::run(&config)?.written() {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
