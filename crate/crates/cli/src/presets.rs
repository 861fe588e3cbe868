//! Named end-to-end runs. Each writes the series behind one figure of the
//! reference study at desk scale.

use std::path::{Path, PathBuf};

use ttm_core::models::{self, Model};
use ttm_core::Axis;

use crate::config::{InitialState, MapSource, Mode, RunConfig};
use crate::error::CliError;
use crate::output::Artifacts;
use crate::pipeline;

pub const NAMES: &[&str] = &["fig1", "fig2", "fig3top", "fig3bottom", "fig4", "fig5", "fig6", "xy4"];

/// Noise strengths of the scaling sweep.
const SWEEP: [f64; 6] = [0.01, 0.25, 0.64, 1.0, 1.69, 2.56];
/// Bias ratio of the second scaling experiment.
const SWEEP_RATIO: f64 = 6.0;
/// Sample compared in the sweep summary.
const SWEEP_INDEX: usize = 15;

fn from_model(mode: Mode, m: Model) -> RunConfig {
    RunConfig { mode, system: m.system, noise: m.noise, dt: m.dt, ..RunConfig::default() }
}

/// Sub-runs of a preset as `(subdirectory, config)`; an empty subdirectory
/// means the output root.
pub fn configs(name: &str) -> Result<Vec<(String, RunConfig)>, CliError> {
    let one = |c: RunConfig| Ok(vec![(String::new(), c)]);
    match name {
        "fig1" => one(RunConfig {
            steps: 10,
            n_traj: 100_000,
            k_trunc: vec![1, 3, 5],
            ..from_model(Mode::Ttm, models::single_qubit_dephasing())
        }),
        "fig2" => one(RunConfig {
            steps: 10,
            n_traj: 100_000,
            k_trunc: vec![10],
            ..from_model(Mode::Nonmarkov, models::single_qubit_dephasing())
        }),
        "fig3top" => one(RunConfig {
            steps: 21,
            source: MapSource::Analytic,
            ..from_model(Mode::Spectroscopy, models::weak_dephasing(0.01))
        }),
        "fig3bottom" => Ok(SWEEP
            .iter()
            .flat_map(|&lambda| {
                let base = RunConfig {
                    steps: SWEEP_INDEX + 2,
                    source: MapSource::Analytic,
                    ..from_model(Mode::Spectroscopy, models::weak_dephasing(lambda))
                };
                let w0 = base.system.biases[0];
                [
                    (format!("lambda_{lambda}/naive"), RunConfig { biases: vec![w0], ..base.clone() }),
                    (format!("lambda_{lambda}/scaled"), RunConfig { biases: vec![w0, w0 * SWEEP_RATIO], ..base }),
                ]
            })
            .collect()),
        "fig4" => one(RunConfig {
            steps: 21,
            source: MapSource::Hierarchy,
            fit_axes: vec![Axis::X],
            ..from_model(Mode::Spectroscopy, models::transverse_noise())
        }),
        "fig5" => Ok(vec![
            ("coupled".into(), RunConfig { steps: 2, source: MapSource::Analytic, initial_state: InitialState::Product, element: [0, 2], ..from_model(Mode::Twoqubit, models::coupled_pair()) }),
            ("correlated".into(), RunConfig { steps: 2, source: MapSource::Analytic, initial_state: InitialState::Bell, element: [1, 2], ..from_model(Mode::Twoqubit, models::correlated_pair()) }),
        ]),
        "fig6" => Ok(vec![
            ("unentangled".into(), RunConfig { steps: 16, n_traj: 100_000, initial_state: InitialState::Product, element: [0, 2], ..from_model(Mode::Twoqubit, models::coupled_pair()) }),
            ("entangled".into(), RunConfig { steps: 16, n_traj: 100_000, initial_state: InitialState::Bell, element: [1, 2], ..from_model(Mode::Twoqubit, models::correlated_pair()) }),
        ]),
        "xy4" => one(RunConfig { steps: 20, n_traj: 100_000, ..from_model(Mode::Xy4, models::slow_dephasing()) }),
        other => Err(CliError::UnknownPreset(other.to_string(), NAMES.join(", "))),
    }
}

/// Runs every sub-run of `name` below `root`, after `adjust` has applied
/// command-line overrides, and returns the files written.
pub fn run(name: &str, root: &Path, adjust: impl Fn(&mut RunConfig)) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    // (lambda, time, fitted, truth) per sub-run, naive before scaled.
    let mut sweep = Vec::new();
    for (sub, mut config) in configs(name)? {
        adjust(&mut config);
        config.output = if sub.is_empty() { root.to_owned() } else { root.join(&sub) };
        config.validate()?;
        if name != "fig3bottom" {
            written.extend_from_slice(pipeline::run(&config)?.written());
            continue;
        }
        let mut out = Artifacts::create(&config.output, &config)?;
        let fit = pipeline::spectroscopy(&config, &mut out)?;
        let n = SWEEP_INDEX.min(fit.values.len() - 1);
        let t = fit.times[n];
        sweep.push((config.noise.channels[0].variance, t, fit.values[n][2][2].re, config.noise.correlation(0, 0, t)));
        written.extend_from_slice(out.written());
    }
    if !sweep.is_empty() {
        let mut summary = configs(name)?.swap_remove(0).1;
        adjust(&mut summary);
        summary.output = root.to_owned();
        let mut out = Artifacts::create(root, &summary)?;
        out.text("sweep.csv", |b| {
            use std::io::Write;
            writeln!(b, "lambda,time,naive,scaled,truth")?;
            for pair in sweep.chunks(2) {
                let ((lambda, t, naive, truth), scaled) = (pair[0], pair[1].2);
                writeln!(b, "{lambda},{t},{naive},{scaled},{truth}")?;
            }
            Ok(())
        })?;
        written.extend_from_slice(out.written());
    }
    Ok(written)
}
