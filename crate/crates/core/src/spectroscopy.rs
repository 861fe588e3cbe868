//! Noise spectroscopy: second-order kernel model, sequential correlation
//! fits, spectral densities and the multi-bias scaling protocol.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::liouville::{vectorize, Axis, CMatrix, Superoperator, C64, I, ZERO};
use crate::propagator::SystemSpec;
use crate::ttm::KernelSeries;

/// Correlations `C_{αα'}` indexed by `[α][α']` in x, y, z order.
pub type ChannelGrid = [[C64; 3]; 3];

/// Which `(α, α')` pairs take part in a fit.
pub type ChannelMask = [[bool; 3]; 3];

/// Huber knee of the continuity penalty.
pub const HUBER_KNEE: f64 = 1e-6;

const ZERO_GRID: ChannelGrid = [[ZERO; 3]; 3];
const MAX_IRLS: usize = 2000;

/// Mask with only the diagonal entries of the given axes.
pub fn diagonal_mask(axes: &[Axis]) -> ChannelMask {
    let mut m = [[false; 3]; 3];
    for a in axes {
        m[a.index()][a.index()] = true;
    }
    m
}

fn active_pairs(mask: &ChannelMask) -> Vec<(Axis, Axis)> {
    let mut out = Vec::new();
    for a in Axis::ALL {
        for b in Axis::ALL {
            if mask[a.index()][b.index()] {
                out.push((a, b));
            }
        }
    }
    out
}

/// Kernel contributions per unit real and per unit imaginary correlation of
/// channel `(α, α')` at lag `t`.
fn channel_basis(sys: &SystemSpec, a: Axis, b: Axis, t: f64) -> (Superoperator, Superoperator) {
    let free = sys.free_map(t);
    let u = free_unitary(sys, t);
    let sb = &u * b.pauli() * u.adjoint();
    let id = CMatrix::identity(2, 2);
    let left = Superoperator::sandwich(&sb, &id);
    let right = Superoperator::sandwich(&id, &sb);
    let outer = Superoperator::commutator(&a.pauli());
    let minus = &left - &right;
    let plus = &left + &right;
    let re = outer.compose(&minus).unwrap().compose(&free).unwrap().scale(-1.0);
    let im = outer.compose(&plus).unwrap().compose(&free).unwrap();
    let im = Superoperator::new(2, im.matrix().map(|z| -I * z)).unwrap();
    (re, im)
}

fn free_unitary(sys: &SystemSpec, t: f64) -> CMatrix {
    let h = sys.hamiltonian();
    CMatrix::from_fn(2, 2, |i, j| if i == j { C64::from_polar(1.0, -h[(i, i)].re * t) } else { ZERO })
}

fn check_qubit(sys: &SystemSpec) -> Result<()> {
    sys.validate()?;
    if sys.n_qubits != 1 {
        return Err(Error::UnsupportedDimension(sys.dim()));
    }
    Ok(())
}

/// Second-order memory kernel
/// `K(t)ρ = −Σ [σ_α, C_{αα'}(t) σ_α'(t) X − C*_{αα'}(t) X σ_α'(t)]`
/// with `X = e^{L_s t} ρ` and `σ(t) = e^{−iH_s t} σ e^{iH_s t}`.
pub fn k2_model(corr: &ChannelGrid, sys: &SystemSpec, t: f64) -> Result<Superoperator> {
    check_qubit(sys)?;
    let mut k = Superoperator::zeros(2);
    for a in Axis::ALL {
        for b in Axis::ALL {
            let c = corr[a.index()][b.index()];
            if c == ZERO {
                continue;
            }
            let (re, im) = channel_basis(sys, a, b, t);
            k = &(&k + &re.scale(c.re)) + &im.scale(c.im);
        }
    }
    Ok(k)
}

/// Fitted correlation functions on the kernel's time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSeries {
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<ChannelGrid>,
    pub active: ChannelMask,
}

impl CorrelationSeries {
    /// A single-channel series, e.g. for sampling a known correlation.
    pub fn single(a: Axis, b: Axis, dt: f64, values: &[C64]) -> Self {
        let mut active = [[false; 3]; 3];
        active[a.index()][b.index()] = true;
        let grids = values
            .iter()
            .map(|&v| {
                let mut g = ZERO_GRID;
                g[a.index()][b.index()] = v;
                g
            })
            .collect();
        Self { dt, times: (0..values.len()).map(|n| n as f64 * dt).collect(), values: grids, active }
    }

    pub fn channel(&self, a: Axis, b: Axis) -> Vec<C64> {
        self.values.iter().map(|g| g[a.index()][b.index()]).collect()
    }

    /// CSV with columns `time,channel,re,im` for the active channels.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "channel", "re", "im"])?;
        for (t, g) in self.times.iter().zip(&self.values) {
            for (a, b) in active_pairs(&self.active) {
                let v = g[a.index()][b.index()];
                w.write_record([t.to_string(), format!("{a}{b}"), v.re.to_string(), v.im.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-time diagnostics of [`fit_correlations`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `|K₂(t_n; C) − K_exp(t_n)|_F` at the optimum.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub active: ChannelMask,
    /// Continuity weights, one per kernel sample; `None` uses
    /// `0.1·|K_exp(t_first)|_F` throughout.
    pub lambdas: Option<Vec<f64>>,
    /// Fit imaginary parts too. Pure dephasing kernels do not constrain them.
    pub complex: bool,
}

impl FitOptions {
    pub fn new(active: ChannelMask) -> Self {
        Self { active, lambdas: None, complex: false }
    }
}

fn huber_weight(x: f64) -> f64 {
    if x.abs() <= HUBER_KNEE {
        1.0 / HUBER_KNEE
    } else {
        1.0 / x.abs()
    }
}

fn realify(v: &DVector<C64>) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)))
}

/// Sequential fit of the active correlation channels to an extracted kernel.
///
/// Each time point minimizes `|A c − k|₂ + λ_n Σ huber(c − c_prev)` by
/// iteratively reweighted least squares, warm-started at the unregularized
/// solution.
pub fn fit_correlations(kexp: &KernelSeries, sys: &SystemSpec, opts: &FitOptions) -> Result<(CorrelationSeries, FitReport)> {
    check_qubit(sys)?;
    if kexp.is_empty() {
        return Err(invalid("empty kernel series"));
    }
    if kexp.ls.dim() != 2 {
        return Err(Error::UnsupportedDimension(kexp.ls.dim()));
    }
    let pairs = active_pairs(&opts.active);
    if pairs.is_empty() {
        return Err(invalid("no active channels"));
    }
    let lambdas = match &opts.lambdas {
        Some(l) if l.len() != kexp.len() => {
            return Err(Error::DimensionMismatch { expected: kexp.len(), found: l.len() })
        }
        Some(l) => l.clone(),
        None => vec![0.1 * kexp.kernels[0].frobenius_norm(); kexp.len()],
    };
    let per = if opts.complex { 2 } else { 1 };
    let p = pairs.len() * per;
    let mut values = Vec::with_capacity(kexp.len());
    let mut report = FitReport::default();
    let mut prev: Option<DVector<f64>> = None;
    for (n, (&t, kernel)) in kexp.times.iter().zip(&kexp.kernels).enumerate() {
        let mut a = DMatrix::<f64>::zeros(32, p);
        for (j, &(x, y)) in pairs.iter().enumerate() {
            let (re, im) = channel_basis(sys, x, y, t);
            a.set_column(j * per, &realify(&vectorize(re.matrix())));
            if opts.complex {
                a.set_column(j * per + 1, &realify(&vectorize(im.matrix())));
            }
        }
        let k = realify(&vectorize(kernel.matrix()));
        let ata = a.transpose() * &a;
        let atk = a.transpose() * &k;
        let eig = SymmetricEigen::new(ata.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if hi <= 0.0 || lo <= 1e-12 * hi {
            return Err(Error::DegenerateFit(format!(
                "active channels give indistinguishable kernel signatures at t = {t}"
            )));
        }
        let solve = |m: DMatrix<f64>, rhs: DVector<f64>| -> Result<DVector<f64>> {
            m.cholesky().map(|c| c.solve(&rhs)).ok_or_else(|| Error::Singular("normal equations".into()))
        };
        let mut c = solve(ata.clone(), atk.clone())?;
        let mut iterations = 0;
        let lambda = lambdas[n];
        if let (Some(cp), true) = (&prev, lambda > 0.0) {
            let knorm = k.norm().max(f64::MIN_POSITIVE);
            let mut converged = false;
            while iterations < MAX_IRLS {
                iterations += 1;
                let r = (&a * &c - &k).norm().max(1e-14 * knorm);
                let w: Vec<f64> = (0..p).map(|i| lambda * huber_weight(c[i] - cp[i])).collect();
                let mut m = ata.map(|x| x / r);
                let mut rhs = atk.map(|x| x / r);
                for i in 0..p {
                    m[(i, i)] += w[i];
                    rhs[i] += w[i] * cp[i];
                }
                let next = solve(m, rhs)?;
                let step = (&next - &c).norm();
                c = next;
                if step <= 1e-12 * (1.0 + c.norm()) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence {
                    what: "correlation fit",
                    iterations,
                    residual: (&a * &c - &k).norm(),
                });
            }
        }
        report.residuals.push((&a * &c - &k).norm());
        report.iterations.push(iterations);
        let mut grid = ZERO_GRID;
        for (j, &(x, y)) in pairs.iter().enumerate() {
            let im = if opts.complex { c[j * per + 1] } else { 0.0 };
            grid[x.index()][y.index()] = C64::new(c[j * per], im);
        }
        values.push(grid);
        prev = Some(c);
    }
    let series = CorrelationSeries { dt: kexp.dt, times: kexp.times.clone(), values, active: opts.active };
    Ok((series, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    /// Fluctuation-dissipation spectral density `J(ω)`.
    Quantum,
    /// Wiener–Khinchin power spectrum `S(ω)`.
    Classical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDensity {
    pub kind: SpectrumKind,
    /// Ascending, symmetric about zero.
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
    /// Set when the input has not decayed below 1% of `|C(0)|`.
    pub warning: Option<String>,
}

impl SpectralDensity {
    pub fn spacing(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["omega", "value"])?;
        for (o, v) in self.omega.iter().zip(&self.values) {
            w.write_record([o.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Zero-padding factor of the spectral transform.
pub const PADDING: usize = 4;

/// Spectral density of channel `(α, α')`.
///
/// The series is extended to negative lags (`C(−t) = C_{α'α}(t)` classically,
/// antisymmetric imaginary part for the quantum kind), zero padded and
/// transformed as `Σ_n f(t_n) e^{iωt_n} dt` on `ω_k = 2πk/(M dt)`. The grid
/// sum `Σ_k S(ω_k) Δω / 2π` equals `C(0)` exactly.
pub fn spectral_density(corr: &CorrelationSeries, a: Axis, b: Axis, kind: SpectrumKind) -> Result<SpectralDensity> {
    let len = corr.values.len();
    if len < 2 {
        return Err(invalid("correlation series needs at least two samples"));
    }
    if corr.times[0] != 0.0 {
        return Err(invalid("correlation series must start at t = 0"));
    }
    let forward = corr.channel(a, b);
    let backward = corr.channel(b, a);
    let c0 = forward[0].norm();
    let warning = (forward[len - 1].norm() >= 0.01 * c0)
        .then(|| format!("correlation has not decayed: |C(t_end)| / |C(0)| = {:.3}", forward[len - 1].norm() / c0));
    let m = PADDING * 2 * len;
    let mut buf = vec![ZERO; m];
    match kind {
        SpectrumKind::Classical => {
            buf[0] = C64::from(forward[0].re);
            for n in 1..len {
                buf[n] = C64::from(forward[n].re);
                buf[m - n] = C64::from(backward[n].re);
            }
        }
        SpectrumKind::Quantum => {
            for n in 1..len {
                buf[n] = C64::from(forward[n].im);
                buf[m - n] = C64::from(-forward[n].im);
            }
        }
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let dt = corr.dt;
    let value = |z: C64| match kind {
        SpectrumKind::Classical => z.re * dt,
        SpectrumKind::Quantum => -z.im * dt,
    };
    let dw = 2.0 * std::f64::consts::PI / (m as f64 * dt);
    let half = m / 2;
    let mut omega = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    for k in 0..m {
        let shifted = (k + half + 1) % m;
        let signed = if shifted > half { shifted as i64 - m as i64 } else { shifted as i64 };
        omega.push(signed as f64 * dw);
        values.push(value(buf[shifted]));
    }
    Ok(SpectralDensity { kind, omega, values, warning })
}

/// Conditioning and alignment diagnostics of [`combine_scaled_kernels`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    /// `γ_i = ω_{s,0} / ω_{s,i}`.
    pub gammas: Vec<f64>,
    /// 2-norm condition number of the coefficient matrix.
    pub condition_number: f64,
    /// Largest distance, in source samples, between a reference time and
    /// the nearest sample it was interpolated from. Zero when grids align.
    pub interpolation_offset: f64,
}

fn interpolate(series: &KernelSeries, t: f64) -> Result<Superoperator> {
    let t0 = series.times[0];
    let x = (t - t0) / series.dt;
    let last = (series.len() - 1) as f64;
    if x < -1e-9 || x > last + 1e-9 {
        return Err(invalid(format!("time {t} outside the kernel window")));
    }
    let x = x.clamp(0.0, last);
    let j = (x.floor() as usize).min(series.len() - 1);
    let frac = x - j as f64;
    if frac < 1e-9 || j + 1 == series.len() {
        return Ok(series.kernels[j].clone());
    }
    Ok(&series.kernels[j].scale(1.0 - frac) + &series.kernels[j + 1].scale(frac))
}

/// Second-order kernel at the first bias from kernels measured at `N`
/// biases.
///
/// Each kernel is made dimensionless (`K̃ = K/ω²` on `s = ω t`) and aligned
/// to the first series' grid by linear interpolation. Writing
/// `K̃_i = Σ_{n=1}^{N} γ_i^{2n} K̃_{2n}`, the lower-order coefficient is
/// solved entrywise and returned in physical units.
pub fn combine_scaled_kernels(kernels: &[KernelSeries], biases: &[f64]) -> Result<(KernelSeries, ScalingReport)> {
    let n = kernels.len();
    if n == 0 {
        return Err(invalid("no kernels"));
    }
    if biases.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: biases.len() });
    }
    if biases.iter().any(|&w| !w.is_finite() || w == 0.0) {
        return Err(invalid("biases must be finite and nonzero"));
    }
    let w0 = biases[0];
    let gammas: Vec<f64> = biases.iter().map(|w| (w0 / w).abs()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| gammas[i].powi(2 * (j as i32 + 1)));
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-13 * smax {
        return Err(Error::Singular("coincident biases in the scaling protocol".into()));
    }
    let lu = a.lu();
    let reference = &kernels[0];
    let d2 = reference.ls.dim().pow(2);
    let mut offset = 0.0f64;
    let mut out = Vec::with_capacity(reference.len());
    for &t in &reference.times {
        let s = t * w0;
        let mut samples = Vec::with_capacity(n);
        for (series, &w) in kernels.iter().zip(biases) {
            let ti = s / w;
            let x = (ti - series.times[0]) / series.dt;
            offset = offset.max((x - x.round()).abs());
            samples.push(interpolate(series, ti)?.scale(1.0 / (w * w)));
        }
        let mut coeff = CMatrix::zeros(d2, d2);
        for r in 0..d2 {
            for c in 0..d2 {
                let rhs = DVector::from_iterator(n, samples.iter().map(|k| k.matrix()[(r, c)]));
                let re = lu.solve(&rhs.map(|z| z.re)).ok_or_else(|| Error::Singular("scaling matrix".into()))?;
                let im = lu.solve(&rhs.map(|z| z.im)).ok_or_else(|| Error::Singular("scaling matrix".into()))?;
                coeff[(r, c)] = C64::new(re[0], im[0]) * (w0 * w0);
            }
        }
        out.push(Superoperator::new(reference.ls.dim(), coeff)?);
    }
    let combined = KernelSeries { dt: reference.dt, times: reference.times.clone(), kernels: out, ls: reference.ls.clone() };
    Ok((combined, ScalingReport { gammas, condition_number: smax / smin, interpolation_offset: offset }))
}
