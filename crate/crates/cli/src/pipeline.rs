//! One function per mode. Each reads a validated [`RunConfig`] and writes
//! its artifacts into the output directory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use ttm_core::mapfile::{MapDocument, SeriesKind};
use ttm_core::models::{bell_pair_state, plus_state, product_pair_state};
use ttm_core::multiqubit::{collective_report, isolate_generator_kernel, isolation_validity, separable_part, unravel};
use ttm_core::noise::CorrelationShape;
use ttm_core::nonmarkov::{extended_volume_measure, volume_measure, volume_series, SHIFT_CAVEAT};
use ttm_core::propagator::{
    analytic_dephasing_series, analytic_zz_series, ensemble_maps, ensemble_states, evolve_with_xy4, hierarchy_maps,
};
use ttm_core::qpt::{min_choi_eigenvalues, project_cptp, read_records, reconstruct_maps, simulate_qpt, PrepBasis};
use ttm_core::spectroscopy::{
    combine_scaled_kernels, diagonal_mask, fit_correlations, spectral_density, CorrelationSeries, FitOptions,
    SpectrumKind,
};
use ttm_core::ttm::{build_ttms, default_truncation, extract_kernel_aligned, norm_profile, predict_states};
use ttm_core::{Axis, CMatrix, DensityMatrix, KernelSeries, MapSeries, NoiseSpec, Superoperator, SystemSpec, C64};

use crate::config::{InitialState, MapSource, Mode, RunConfig};
use crate::error::{CliError, Stage};
use crate::output::Artifacts;

/// Choi eigenvalues below this are reported as positivity violations.
const POSITIVITY_TOL: f64 = 1e-9;

pub fn run(config: &RunConfig) -> Result<Artifacts, CliError> {
    config.validate()?;
    let mut out = Artifacts::create(&config.output, config)?;
    match config.mode {
        Mode::Simulate => simulate(config, &mut out)?,
        Mode::Ttm => transfer_tensors(config, &mut out)?,
        Mode::Nonmarkov => nonmarkov(config, &mut out)?,
        Mode::Spectroscopy => {
            spectroscopy(config, &mut out)?;
        }
        Mode::Twoqubit => two_qubit(config, &mut out)?,
        Mode::Xy4 => decoupling(config, &mut out)?,
        Mode::Ingest => ingest(config, &mut out)?,
    }
    Ok(out)
}

fn csv_rows(buf: &mut Vec<u8>, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> ttm_core::Result<()> {
    writeln!(buf, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(buf, "{}", cells.join(","))?;
    }
    Ok(())
}

fn report_lines(buf: &mut Vec<u8>, lines: &[String]) -> ttm_core::Result<()> {
    for l in lines {
        writeln!(buf, "{l}")?;
    }
    Ok(())
}

fn initial_state(config: &RunConfig) -> Result<DensityMatrix, CliError> {
    let rho = match config.initial_state {
        InitialState::Plus => plus_state(),
        InitialState::Product => product_pair_state(),
        InitialState::Bell => bell_pair_state(),
    };
    if rho.dim() != config.system.dim() {
        return Err(CliError::Config {
            field: "initial_state",
            message: format!("{:?} does not fit a {}-qubit system", config.initial_state, config.system.n_qubits),
        });
    }
    Ok(rho)
}

fn lorentzian_corr(noise: &NoiseSpec) -> Option<impl Fn(f64) -> f64 + '_> {
    match noise.channels.as_slice() {
        [ch] if ch.axis == Axis::Z && ch.qubit == 0 => Some(move |t: f64| noise.correlation(0, 0, t)),
        _ => None,
    }
}

/// Exact maps for the configured model, when a closed form or the hierarchy
/// applies.
fn exact_maps(sys: &SystemSpec, noise: &NoiseSpec, dt: f64, k: usize, depth: usize) -> ttm_core::Result<MapSeries> {
    if sys.n_qubits == 2 {
        return analytic_zz_series(sys, noise, dt, k);
    }
    match lorentzian_corr(noise) {
        Some(c) => analytic_dephasing_series(&c, sys.biases[0], dt, k),
        None => hierarchy_maps(sys, noise, dt, k, depth),
    }
}

fn simulated_maps(config: &RunConfig, sys: &SystemSpec, noise: &NoiseSpec, dt: f64) -> Result<MapSeries, CliError> {
    let k = config.steps;
    let maps = match config.source {
        MapSource::MonteCarlo => {
            ensemble_maps(sys, noise, dt, k, config.n_traj, config.seed.unwrap_or_default()).stage("propagator")?
        }
        MapSource::Analytic if sys.n_qubits == 2 => analytic_zz_series(sys, noise, dt, k).stage("propagator")?,
        MapSource::Analytic => {
            let corr = lorentzian_corr(noise).ok_or_else(|| CliError::Config {
                field: "source",
                message: "the analytic source needs a single σz channel on a qubit".into(),
            })?;
            analytic_dephasing_series(&corr, sys.biases[0], dt, k).stage("propagator")?
        }
        MapSource::Hierarchy => hierarchy_maps(sys, noise, dt, k, config.hierarchy_depth).stage("propagator")?,
    };
    if config.shots == 0 {
        return Ok(maps);
    }
    let basis = PrepBasis::for_qubits(sys.n_qubits).stage("qpt")?;
    let records = simulate_qpt(&maps, &basis, config.shots, config.seed.unwrap_or_default()).stage("qpt")?;
    reconstruct_maps(&records, &basis, dt).stage("qpt")
}

/// Maps from the input file if one is given, otherwise from the configured
/// source.
fn load_maps(config: &RunConfig) -> Result<MapSeries, CliError> {
    match &config.input {
        Some(path) => read_maps(path, config),
        None => simulated_maps(config, &config.system, &config.noise, config.dt),
    }
}

fn open(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::open(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn ingest_error(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Ingest { path: path.to_owned(), line, message: message.into() }
}

/// Reads a map document (`.json`) or tomography records (anything else).
fn read_maps(path: &Path, config: &RunConfig) -> Result<MapSeries, CliError> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let doc = MapDocument::read(open(path)?).map_err(|e| match e {
            ttm_core::Error::Json(j) => ingest_error(path, j.line() as u64, j.to_string()),
            other => ingest_error(path, 0, other.to_string()),
        })?;
        if doc.kind != SeriesKind::DynamicalMaps {
            return Err(ingest_error(path, 1, format!("expected dynamical maps, found {:?}", doc.kind)));
        }
        return doc.to_maps().map_err(|e| ingest_error(path, 0, e.to_string()));
    }
    let records = read_records(open(path)?).map_err(|e| match e {
        ttm_core::Error::Parse { line, message } => ingest_error(path, line, message),
        other => ingest_error(path, 0, other.to_string()),
    })?;
    let basis = PrepBasis::for_qubits(config.system.n_qubits).stage("qpt")?;
    reconstruct_maps(&records, &basis, config.dt).map_err(|e| ingest_error(path, 0, e.to_string()))
}

fn state_columns(d: usize) -> Vec<String> {
    let mut cols = vec!["time".to_string()];
    for i in 0..d {
        for j in i..d {
            cols.push(format!("re_{i}{j}"));
            cols.push(format!("im_{i}{j}"));
        }
    }
    cols
}

fn state_row(t: f64, m: &CMatrix) -> Vec<f64> {
    let d = m.nrows();
    let mut row = vec![t];
    for i in 0..d {
        for j in i..d {
            row.push(m[(i, j)].re);
            row.push(m[(i, j)].im);
        }
    }
    row
}

fn simulate(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let maps = load_maps(config)?;
    let rho0 = initial_state(config)?;
    let mut states = vec![state_row(0.0, rho0.matrix())];
    for (k, m) in maps.maps.iter().enumerate() {
        let rho = m.apply(&rho0).stage("liouville")?;
        states.push(state_row((k + 1) as f64 * maps.dt, rho.matrix()));
    }
    out.document("maps.json", MapDocument::from_maps(&maps))?;
    let cols = state_columns(rho0.dim());
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    out.text("states.csv", |b| csv_rows(b, &cols, states))
}

fn norms_csv(out: &mut Artifacts, name: &str, dt: f64, profiles: &[(&str, Vec<f64>)]) -> Result<(), CliError> {
    let mut header = vec!["n", "time"];
    header.extend(profiles.iter().map(|(h, _)| *h));
    let len = profiles.iter().map(|(_, p)| p.len()).max().unwrap_or(0);
    let rows = (0..len).map(|n| {
        let mut row = vec![(n + 1) as f64, (n + 1) as f64 * dt];
        row.extend(profiles.iter().map(|(_, p)| p.get(n).copied().unwrap_or(f64::NAN)));
        row
    });
    out.text(name, |b| csv_rows(b, &header, rows))
}

/// Reference maps over `horizon` steps for comparison columns, or `None`
/// when no exact method covers the model.
fn reference_maps(config: &RunConfig, horizon: usize) -> Option<MapSeries> {
    if config.input.is_some() {
        return None;
    }
    exact_maps(&config.system, &config.noise, config.dt, horizon, config.hierarchy_depth).ok()
}

fn transfer_tensors(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let maps = load_maps(config)?;
    let ttms = build_ttms(&maps).stage("ttm")?;
    let raw = norm_profile(&ttms, false);
    let shifted = norm_profile(&ttms, true);
    out.document("ttms.json", MapDocument::from_ttms(&ttms))?;
    norms_csv(out, "norms.csv", ttms.dt, &[("norm", raw), ("norm_minus_identity", shifted.clone())])?;

    let rho0 = initial_state(config)?;
    let [i, j] = config.element;
    let k_truncs = if config.k_trunc.is_empty() { vec![default_truncation(&ttms)] } else { config.k_trunc.clone() };
    let mut columns = vec!["time".to_string()];
    let mut series = Vec::new();
    for &k in &k_truncs {
        let states = predict_states(&ttms, k, &rho0, config.horizon).stage("ttm")?;
        columns.push(format!("k_trunc_{k}"));
        series.push(states.iter().map(|s| s.matrix()[(i, j)].norm()).collect::<Vec<_>>());
    }
    if let Some(exact) = reference_maps(config, config.horizon) {
        let mut col = vec![rho0.matrix()[(i, j)].norm()];
        for m in &exact.maps {
            col.push(m.apply(&rho0).stage("liouville")?.matrix()[(i, j)].norm());
        }
        columns.push("exact".into());
        series.push(col);
    }
    let rows = (0..=config.horizon).map(|n| {
        let mut row = vec![n as f64 * ttms.dt];
        row.extend(series.iter().map(|s| s[n]));
        row
    });
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    out.text("prediction.csv", |b| csv_rows(b, &cols, rows))?;

    let sizable = shifted.iter().skip(1).filter(|&&x| x > 0.01 * shifted[0]).count();
    let lines = vec![
        format!("tensors = {}", ttms.len()),
        format!("default_truncation = {}", default_truncation(&ttms)),
        format!("tensors_above_1pct_of_first = {sizable}"),
        format!("element = {i},{j}"),
    ];
    out.text("report.txt", |b| report_lines(b, &lines))
}

fn nonmarkov(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let maps = load_maps(config)?;
    if maps.dim() != 2 {
        return Err(CliError::Config { field: "system", message: "the volume measure needs a single qubit".into() });
    }
    let ttms = build_ttms(&maps).stage("ttm")?;
    let k = config.k_trunc.first().copied().unwrap_or_else(|| default_truncation(&ttms));
    let horizon = config.horizon.max(maps.len());
    let (extended, measure) = extended_volume_measure(&ttms, k, horizon).stage("nonmarkov")?;
    let window = volume_measure(&volume_series(&maps).stage("nonmarkov")?).stage("nonmarkov")?;
    out.text("volume.csv", |b| extended.write_csv(b))?;
    if let Some(exact) = reference_maps(config, horizon) {
        let vs = volume_series(&exact).stage("nonmarkov")?;
        out.text("volume_exact.csv", |b| vs.write_csv(b))?;
    }
    let unphysical = extended.unphysical_points(POSITIVITY_TOL);
    let mut lines = vec![
        format!("k_trunc = {k}"),
        format!("horizon = {horizon}"),
        format!("measure_extended = {measure}"),
        format!("measure_window = {window}"),
        format!("unphysical_points = {unphysical:?}"),
        format!("caveat = {SHIFT_CAVEAT}"),
    ];
    if !unphysical.is_empty() {
        lines.push("warning = volume exceeds 1 at some points".into());
    }
    out.text("report.txt", |b| report_lines(b, &lines))
}

/// The same noise on a clock running `ratio` times faster.
fn speed_up(noise: &NoiseSpec, ratio: f64) -> NoiseSpec {
    let mut scaled = noise.clone();
    for ch in &mut scaled.channels {
        ch.shape = match &ch.shape {
            CorrelationShape::ModulatedExponential { decay_rate, modulation } => {
                CorrelationShape::ModulatedExponential { decay_rate: decay_rate * ratio, modulation: modulation * ratio }
            }
            CorrelationShape::Tabulated { dt, values } => CorrelationShape::Tabulated { dt: dt / ratio, values: values.clone() },
        };
    }
    scaled
}

fn kernel_at(config: &RunConfig, bias: f64, ratio: f64) -> Result<KernelSeries, CliError> {
    let sys = SystemSpec::qubit(bias);
    let maps = if config.input.is_some() && ratio == 1.0 {
        load_maps(config)?
    } else {
        simulated_maps(config, &sys, &speed_up(&config.noise, ratio), config.dt / ratio)?
    };
    extract_kernel_aligned(&build_ttms(&maps).stage("ttm")?, &sys.liouvillian()).stage("ttm")
}

/// Runs the fit and returns the fitted correlations.
pub fn spectroscopy(config: &RunConfig, out: &mut Artifacts) -> Result<CorrelationSeries, CliError> {
    let biases = if config.biases.is_empty() { vec![config.system.biases[0]] } else { config.biases.clone() };
    if config.input.is_some() && biases.len() > 1 {
        return Err(CliError::Config { field: "biases", message: "the scaling protocol simulates its own experiments".into() });
    }
    let w0 = biases[0];
    let sys = SystemSpec::qubit(w0);
    let mut kernels = Vec::new();
    for &w in &biases {
        kernels.push(kernel_at(config, w, w / w0)?);
    }
    let mut lines = Vec::new();
    let kernel = if kernels.len() == 1 {
        kernels.pop().unwrap()
    } else {
        let (combined, report) = combine_scaled_kernels(&kernels, &biases).stage("spectroscopy")?;
        lines.push(format!("scaling_gammas = {:?}", report.gammas));
        lines.push(format!("scaling_condition_number = {}", report.condition_number));
        lines.push(format!("scaling_interpolation_offset = {}", report.interpolation_offset));
        combined
    };
    let axes = config.fit_axes();
    let mut opts = FitOptions::new(diagonal_mask(&axes));
    opts.lambdas = config.lambdas.as_ref().map(|l| if l.len() == 1 { vec![l[0]; kernel.len()] } else { l.clone() });
    let (fit, report) = fit_correlations(&kernel, &sys, &opts).stage("spectroscopy")?;
    out.document("kernel.json", MapDocument::from_kernels(&kernel))?;
    out.text("correlations.csv", |b| fit.write_csv(b))?;

    for &a in &axes {
        let s = spectral_density(&fit, a, a, SpectrumKind::Classical).stage("spectroscopy")?;
        out.text(&format!("spectrum_{a}{a}.csv"), |b| s.write_csv(b))?;
        if let Some(w) = &s.warning {
            lines.push(format!("spectrum_{a}{a}_warning = {w}"));
        }
        // Relative error against the generating correlation, when known.
        let truth = config.noise.channels.iter().position(|ch| ch.qubit == 0 && ch.axis == a);
        if let (Some(idx), None) = (truth, &config.input) {
            let errors: Vec<f64> = fit
                .channel(a, a)
                .iter()
                .zip(&fit.times)
                .map(|(c, &t)| {
                    let exact = config.noise.correlation(idx, idx, t);
                    (c.re - exact).abs() / exact.abs()
                })
                .collect();
            let worst = errors.iter().copied().fold(0.0, f64::max);
            lines.push(format!("max_relative_error_{a}{a} = {worst}"));
        }
    }
    let mut text = String::new();
    for (n, (r, it)) in report.residuals.iter().zip(&report.iterations).enumerate() {
        let _ = writeln!(text, "residual[{n}] = {r} ({it} iterations)");
    }
    lines.push(text.trim_end().to_string());
    out.text("fit_report.txt", |b| report_lines(b, &lines))?;
    Ok(fit)
}

fn matrix_rows(name: &str, s: &Superoperator, rows: &mut Vec<String>) {
    let m = s.matrix();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z: C64 = m[(r, c)];
            rows.push(format!("{name},{},{},{},{}", r + 1, c + 1, z.re, z.im));
        }
    }
}

fn two_qubit(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let maps = load_maps(config)?;
    let fine = unravel(&maps).stage("multiqubit")?;
    let coarse = unravel(&maps.decimate(2).stage("propagator")?).stage("multiqubit")?;
    let iso = isolate_generator_kernel(&fine.correlated[0], &coarse.correlated[0]).stage("multiqubit")?;
    let mut report = collective_report(&fine, &iso, config.threshold);
    if let Some(note) = isolation_validity(&config.noise, maps.dt) {
        report.notes.push(note);
    }
    out.text("norms.csv", |b| fine.write_norms_csv(b))?;
    out.text("report.txt", |b| report.write_text(b))?;
    let mut rows = vec!["quantity,row,col,re,im".to_string()];
    matrix_rows("generator_dt", &iso.generator_dt, &mut rows);
    matrix_rows("kernel_dt2", &iso.kernel_dt2, &mut rows);
    out.text("isolation.csv", |b| report_lines(b, &rows))?;

    // Predictions from the full and the product-only tensors.
    let rho0 = initial_state(config)?;
    let [i, j] = config.element;
    let k = maps.len();
    let full = predict_states(&fine.full, k, &rho0, config.horizon).stage("ttm")?;
    let products = maps.maps.iter().map(separable_part).collect::<ttm_core::Result<Vec<_>>>().stage("multiqubit")?;
    let product_ttms = build_ttms(&MapSeries::new(maps.dt, products).stage("propagator")?).stage("ttm")?;
    let separable = predict_states(&product_ttms, k, &rho0, config.horizon).stage("ttm")?;
    let mut header = vec!["time", "full_re", "full_im", "separable_re", "separable_im"];
    let mut reference: Option<(Vec<CMatrix>, Option<Vec<CMatrix>>)> = None;
    if config.input.is_none() {
        if let Some(exact) = reference_maps(config, config.horizon) {
            let mut states = vec![rho0.matrix().clone()];
            for m in &exact.maps {
                states.push(m.apply(&rho0).stage("liouville")?.into_matrix());
            }
            header.extend(["exact_re", "exact_im"]);
            reference = Some((states, None));
        } else if config.source == MapSource::MonteCarlo {
            let ens = ensemble_states(
                &config.system,
                &config.noise,
                &rho0,
                maps.dt,
                config.horizon,
                config.n_traj,
                config.seed.unwrap_or_default(),
            )
            .stage("propagator")?;
            header.extend(["oracle_re", "oracle_im", "oracle_stderr"]);
            reference = Some((ens.mean, Some(ens.stderr)));
        }
    }
    let rows = (0..=config.horizon).map(|n| {
        let (f, s) = (full[n].matrix()[(i, j)], separable[n].matrix()[(i, j)]);
        let mut row = vec![n as f64 * maps.dt, f.re, f.im, s.re, s.im];
        if let Some((states, se)) = &reference {
            row.extend([states[n][(i, j)].re, states[n][(i, j)].im]);
            if let Some(se) = se {
                row.push(se[n][(i, j)].norm());
            }
        }
        row
    });
    out.text("prediction.csv", |b| csv_rows(b, &header, rows))
}

fn decoupling(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let seed = config.seed.unwrap_or_default();
    let (sys, noise) = (&config.system, &config.noise);
    let free = build_ttms(&ensemble_maps(sys, noise, config.dt, config.steps, config.n_traj, seed).stage("propagator")?)
        .stage("ttm")?;
    let xy4 = build_ttms(&evolve_with_xy4(sys, noise, config.dt, config.steps, config.n_traj, seed).stage("propagator")?)
        .stage("ttm")?;
    let (pf, px) = (norm_profile(&free, true), norm_profile(&xy4, true));
    let threshold = 0.01 * pf[0];
    let count = |p: &[f64]| p.iter().filter(|&&x| x > threshold).count();
    let lines = vec![
        format!("threshold = {threshold}"),
        format!("above_threshold_free = {}", count(&pf)),
        format!("above_threshold_xy4 = {}", count(&px)),
    ];
    norms_csv(out, "norms.csv", config.dt, &[("free", pf), ("xy4", px)])?;
    out.text("report.txt", |b| report_lines(b, &lines))
}

fn ingest(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let mut maps = read_maps(config.input.as_deref().expect("validated"), config)?;
    let mins = min_choi_eigenvalues(&maps);
    let mut lines = vec!["readout_correction = none".to_string()];
    for (k, &e) in mins.iter().enumerate() {
        lines.push(format!("min_choi_eigenvalue[{}] = {e}", k + 1));
        if e < -POSITIVITY_TOL {
            let msg = format!("warning: map {} is not completely positive (min Choi eigenvalue {e:e})", k + 1);
            eprintln!("{msg}");
            lines.push(msg);
        }
    }
    if config.project_cptp {
        let projected = maps.maps.iter().map(project_cptp).collect::<ttm_core::Result<Vec<_>>>().stage("qpt")?;
        maps = MapSeries::new(maps.dt, projected).stage("qpt")?;
        lines.push("projected = true".into());
    }
    let ttms = build_ttms(&maps).stage("ttm")?;
    out.document("maps.json", MapDocument::from_maps(&maps))?;
    out.document("ttms.json", MapDocument::from_ttms(&ttms))?;
    norms_csv(out, "norms.csv", ttms.dt, &[("norm", norm_profile(&ttms, false)), ("norm_minus_identity", norm_profile(&ttms, true))])?;
    out.text("report.txt", |b| report_lines(b, &lines))
}
