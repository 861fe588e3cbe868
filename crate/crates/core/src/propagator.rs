//! Ground-truth dynamics under classical noise.
//!
//! Three routes produce ensemble-averaged maps:
//! * trajectory averaging over sampled noise paths (any coupling, any
//!   correlation shape),
//! * closed forms for Gaussian pure dephasing,
//! * an exact hierarchy for exponentially correlated noise.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::liouville::{
    dephasing_map, embed_pauli, Axis, CMatrix, DensityMatrix, Superoperator, C64, I, ONE, ZERO,
};
use crate::noise::{NoisePath, NoiseSampler, NoiseSpec};
use crate::quadrature;

/// Integrator substeps per sampling interval.
pub const SUBSTEPS: usize = 8;

/// Trajectories per reduction block. Blocks are summed sequentially and
/// combined pairwise in index order, so results do not depend on threading.
const BLOCK: usize = 512;

/// System Hamiltonian `Σ_i ω_{s,i} σ^z_i + ω_12 σ^z_1 σ^z_2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n_qubits: usize,
    pub biases: Vec<f64>,
    #[serde(default)]
    pub zz_coupling: f64,
}

impl SystemSpec {
    pub fn qubit(bias: f64) -> Self {
        Self { n_qubits: 1, biases: vec![bias], zz_coupling: 0.0 }
    }

    pub fn pair(bias1: f64, bias2: f64, zz_coupling: f64) -> Self {
        Self { n_qubits: 2, biases: vec![bias1, bias2], zz_coupling }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n_qubits) {
            return Err(invalid(format!("n_qubits must be 1 or 2, got {}", self.n_qubits)));
        }
        if self.biases.len() != self.n_qubits {
            return Err(invalid("one bias per qubit is required"));
        }
        if self.biases.iter().chain([&self.zz_coupling]).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("system energies"));
        }
        if self.n_qubits == 1 && self.zz_coupling != 0.0 {
            return Err(invalid("zz coupling needs two qubits"));
        }
        Ok(())
    }

    /// `σ^z_q` eigenvalue of computational basis state `k`.
    fn z_sign(&self, k: usize, qubit: usize) -> f64 {
        if (k >> (self.n_qubits - 1 - qubit)) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn energies(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let mut e: f64 = self.biases.iter().enumerate().map(|(q, w)| w * self.z_sign(k, q)).sum();
                if self.n_qubits == 2 {
                    e += self.zz_coupling * self.z_sign(k, 0) * self.z_sign(k, 1);
                }
                e
            })
            .collect()
    }

    pub fn hamiltonian(&self) -> CMatrix {
        let e = self.energies();
        CMatrix::from_fn(self.dim(), self.dim(), |i, j| if i == j { C64::from(e[i]) } else { ZERO })
    }

    /// `−i[H_s, ·]`.
    pub fn liouvillian(&self) -> Superoperator {
        Superoperator::liouvillian(&self.hamiltonian())
    }

    /// Exact map of the noiseless evolution over `t`.
    pub fn free_map(&self, t: f64) -> Superoperator {
        let e = self.energies();
        let d = self.dim();
        let u = CMatrix::from_fn(d, d, |i, j| if i == j { C64::from_polar(1.0, -e[i] * t) } else { ZERO });
        Superoperator::from_unitary(&u)
    }

    pub fn check_noise(&self, noise: &NoiseSpec) -> Result<()> {
        self.validate()?;
        noise.validate()?;
        if let Some(ch) = noise.channels.iter().find(|c| c.qubit >= self.n_qubits) {
            return Err(invalid(format!("noise channel on qubit {} outside the register", ch.qubit)));
        }
        Ok(())
    }
}

/// Dynamical maps `E_1..E_K` on a uniform grid. `E_0` is the identity and
/// is not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSeries {
    pub dt: f64,
    pub maps: Vec<Superoperator>,
    /// Trajectories behind each map; 0 for exact series.
    pub n_traj: usize,
    /// Standard errors of the map entries (real part error in `re`,
    /// imaginary part error in `im`) for sampled series.
    pub stderr: Option<Vec<CMatrix>>,
}

impl MapSeries {
    pub fn new(dt: f64, maps: Vec<Superoperator>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if let Some(first) = maps.first() {
            if let Some(bad) = maps.iter().find(|m| m.dim() != first.dim()) {
                return Err(Error::DimensionMismatch { expected: first.dim(), found: bad.dim() });
            }
        }
        Ok(Self { dt, maps, n_traj: 0, stderr: None })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.maps.first().map_or(0, Superoperator::dim)
    }

    /// `E_k`, with `E_0` the identity.
    pub fn map(&self, k: usize) -> Superoperator {
        if k == 0 {
            Superoperator::identity(self.dim())
        } else {
            self.maps[k - 1].clone()
        }
    }

    /// Keeps every `factor`-th map, giving the series on the grid `factor·dt`.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("decimation factor must be positive"));
        }
        let pick = |k: usize| (k + 1) % factor == 0;
        Ok(Self {
            dt: self.dt * factor as f64,
            maps: self.maps.iter().enumerate().filter(|(k, _)| pick(*k)).map(|(_, m)| m.clone()).collect(),
            n_traj: self.n_traj,
            stderr: self
                .stderr
                .as_ref()
                .map(|s| s.iter().enumerate().filter(|(k, _)| pick(*k)).map(|(_, m)| m.clone()).collect()),
        })
    }

    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            dt: self.dt,
            maps: self.maps[..k].to_vec(),
            n_traj: self.n_traj,
            stderr: self.stderr.as_ref().map(|s| s[..k].to_vec()),
        }
    }
}

/// Trajectory-averaged states with their standard errors.
#[derive(Clone, Debug)]
pub struct StateEnsemble {
    pub dt: f64,
    pub n_traj: usize,
    /// `mean[k]` is the average state at `t_k`, `k = 0..=K`.
    pub mean: Vec<CMatrix>,
    pub stderr: Vec<CMatrix>,
}

enum Kind {
    Qubit,
    Diagonal,
    Dense,
}

/// Per-trajectory unitary propagation with the Hamiltonian frozen at each
/// sample's midpoint.
struct Engine {
    dim: usize,
    kind: Kind,
    static_field: [f64; 3],
    axes: Vec<usize>,
    energies: Vec<f64>,
    signs: Vec<Vec<f64>>,
    hs: CMatrix,
    ops: Vec<CMatrix>,
}

impl Engine {
    fn new(sys: &SystemSpec, noise: &NoiseSpec) -> Result<Self> {
        sys.check_noise(noise)?;
        let dim = sys.dim();
        let kind = if dim == 2 {
            Kind::Qubit
        } else if noise.channels.iter().all(|c| c.axis == Axis::Z) {
            Kind::Diagonal
        } else {
            Kind::Dense
        };
        let signs = noise
            .channels
            .iter()
            .map(|c| (0..dim).map(|k| sys.z_sign(k, c.qubit)).collect())
            .collect();
        let ops = noise.channels.iter().map(|c| embed_pauli(c.axis, c.qubit, sys.n_qubits)).collect();
        Ok(Self {
            dim,
            kind,
            static_field: [0.0, 0.0, sys.biases[0]],
            axes: noise.channels.iter().map(|c| c.axis.index()).collect(),
            energies: sys.energies(),
            signs,
            hs: sys.hamiltonian(),
            ops,
        })
    }

    /// Propagates along `path`, calling `record(k, U)` with the row-major
    /// accumulated unitary after every `per_record` samples. `pulses[s]`,
    /// if set, is applied right after sample `s` of each record interval.
    fn run(
        &self,
        path: &NoisePath,
        per_record: usize,
        pulses: &[Option<[C64; 4]>],
        mut record: impl FnMut(usize, &[C64]),
    ) -> Result<()> {
        let n = path.n_steps();
        let tau = path.dt;
        if path.values.len() != self.ops.len() {
            return Err(Error::DimensionMismatch { expected: self.ops.len(), found: path.values.len() });
        }
        if path.values.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("noise path"));
        }
        let d = self.dim;
        let mut u = vec![ZERO; d * d];
        for k in 0..d {
            u[k * d + k] = ONE;
        }
        let mut phases = vec![0.0; d];
        let mut step = vec![ZERO; d * d];
        let mut tmp = vec![ZERO; d * d];
        for s in 0..n {
            match self.kind {
                Kind::Qubit => {
                    let mut h = self.static_field;
                    for (c, &a) in self.axes.iter().enumerate() {
                        h[a] += path.values[c][s];
                    }
                    su2(&h, tau, &mut step);
                    matmul(&step, &u, &mut tmp, 2);
                    std::mem::swap(&mut u, &mut tmp);
                }
                Kind::Diagonal => {
                    for (k, ph) in phases.iter_mut().enumerate() {
                        let mut e = self.energies[k];
                        for (c, signs) in self.signs.iter().enumerate() {
                            e += path.values[c][s] * signs[k];
                        }
                        *ph += e * tau;
                    }
                }
                Kind::Dense => {
                    let mut h = self.hs.clone();
                    for (c, op) in self.ops.iter().enumerate() {
                        h += op.map(|z| z * path.values[c][s]);
                    }
                    let us = h.map(|z| -I * z * tau).exp();
                    for (k, x) in step.iter_mut().enumerate() {
                        *x = us[(k / d, k % d)];
                    }
                    matmul(&step, &u, &mut tmp, d);
                    std::mem::swap(&mut u, &mut tmp);
                }
            }
            let slot = s % per_record;
            if let Some(Some(p)) = pulses.get(slot) {
                if d != 2 {
                    return Err(invalid("pulses are only supported on a single qubit"));
                }
                matmul(p, &u, &mut tmp, 2);
                std::mem::swap(&mut u, &mut tmp);
            }
            if slot + 1 == per_record {
                if let Kind::Diagonal = self.kind {
                    for (k, ph) in phases.iter().enumerate() {
                        u[k * d + k] = C64::from_polar(1.0, -ph);
                    }
                }
                record(s / per_record + 1, &u);
            }
        }
        Ok(())
    }
}

/// `exp(−i τ h·σ)` row-major.
fn su2(h: &[f64; 3], tau: f64, out: &mut [C64]) {
    let norm = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    if norm == 0.0 {
        out.copy_from_slice(&[ONE, ZERO, ZERO, ONE]);
        return;
    }
    let (s, c) = (norm * tau).sin_cos();
    let (nx, ny, nz) = (h[0] / norm, h[1] / norm, h[2] / norm);
    out[0] = C64::new(c, -s * nz);
    out[1] = C64::new(-s * ny, -s * nx);
    out[2] = C64::new(s * ny, -s * nx);
    out[3] = C64::new(c, s * nz);
}

fn matmul(a: &[C64], b: &[C64], out: &mut [C64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for k in 0..d {
                acc += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

/// Running first and second moments of complex samples.
#[derive(Clone)]
struct Moments {
    sum: Vec<C64>,
    sq_re: Vec<f64>,
    sq_im: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self { sum: vec![ZERO; n], sq_re: vec![0.0; n], sq_im: vec![0.0; n] }
    }

    #[inline]
    fn add(&mut self, k: usize, z: C64) {
        self.sum[k] += z;
        self.sq_re[k] += z.re * z.re;
        self.sq_im[k] += z.im * z.im;
    }

    fn merge(mut self, other: &Moments) -> Self {
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sq_re[k] += other.sq_re[k];
            self.sq_im[k] += other.sq_im[k];
        }
        self
    }

    fn pairwise(parts: &[Moments]) -> Moments {
        match parts.len() {
            1 => parts[0].clone(),
            n => Self::pairwise(&parts[..n / 2]).merge(&Self::pairwise(&parts[n / 2..])),
        }
    }

    /// Means and standard errors of the mean.
    fn finish(&self, n: usize) -> (Vec<C64>, Vec<C64>) {
        let nf = n as f64;
        let mean: Vec<C64> = self.sum.iter().map(|s| s / nf).collect();
        let se = mean
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if n < 2 {
                    return ZERO;
                }
                let var = |sq: f64, mu: f64| ((sq - nf * mu * mu) / (nf - 1.0)).max(0.0);
                C64::new((var(self.sq_re[k], m.re) / nf).sqrt(), (var(self.sq_im[k], m.im) / nf).sqrt())
            })
            .collect();
        (mean, se)
    }
}

/// Runs `n_traj` trajectories (trajectory `t` uses noise stream `t` of
/// `seed`) and reduces per-trajectory samples of width `width`.
fn monte_carlo<F>(sampler: &NoiseSampler, n_channels: usize, n_traj: usize, seed: u64, width: usize, per_path: F) -> Result<Moments>
where
    F: Fn(&NoisePath, &mut Moments) -> Result<()> + Sync,
{
    if n_traj == 0 {
        return Err(invalid("n_traj must be at least 1"));
    }
    let n_blocks = n_traj.div_ceil(BLOCK);
    let blocks: Vec<Moments> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = Moments::zeros(width);
            let mut path = NoisePath { dt: sampler.dt(), values: vec![vec![0.0; sampler.n_steps()]; n_channels] };
            for t in b * BLOCK..((b + 1) * BLOCK).min(n_traj) {
                sampler.sample_into(seed, t as u64, &mut path.values);
                per_path(&path, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(Moments::pairwise(&blocks))
}

fn check_grid(dt: f64, k: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt must be positive"));
    }
    if k == 0 {
        return Err(invalid("at least one time step is required"));
    }
    Ok(())
}

fn sampled_maps(
    sys: &SystemSpec,
    noise: &NoiseSpec,
    dt: f64,
    k: usize,
    n_traj: usize,
    seed: u64,
    pulses: &[Option<[C64; 4]>],
) -> Result<MapSeries> {
    check_grid(dt, k)?;
    let engine = Engine::new(sys, noise)?;
    let sampler = NoiseSampler::new(noise, dt / SUBSTEPS as f64, SUBSTEPS * k)?;
    let d = engine.dim;
    let (d2, d4) = (d * d, d * d * d * d);
    let moments = monte_carlo(&sampler, noise.channels.len(), n_traj, seed, k * d4, |path, acc| {
        engine.run(path, SUBSTEPS, pulses, |rec, u| {
            let base = (rec - 1) * d4;
            for i in 0..d {
                for ip in 0..d {
                    for j in 0..d {
                        let a = u[i * d + j];
                        if a == ZERO {
                            continue;
                        }
                        for jp in 0..d {
                            let entry = a * u[ip * d + jp].conj();
                            acc.add(base + (i * d + ip) * d2 + j * d + jp, entry);
                        }
                    }
                }
            }
        })
    })?;
    let (mean, se) = moments.finish(n_traj);
    let block = |v: &[C64], r: usize| CMatrix::from_row_slice(d2, d2, &v[r * d4..(r + 1) * d4]);
    let maps = (0..k).map(|r| Superoperator::new(d, block(&mean, r))).collect::<Result<Vec<_>>>()?;
    Ok(MapSeries { dt, maps, n_traj, stderr: Some((0..k).map(|r| block(&se, r)).collect()) })
}

/// Ensemble-averaged maps `E_1..E_K` on the grid `dt` from `n_traj`
/// sampled noise paths.
///
/// Averaging `U⊗conj(U)` is the same linear operation as averaging the
/// evolved preparation states and inverting, so the result coincides with
/// tomography of the averaged process.
pub fn ensemble_maps(sys: &SystemSpec, noise: &NoiseSpec, dt: f64, k: usize, n_traj: usize, seed: u64) -> Result<MapSeries> {
    sampled_maps(sys, noise, dt, k, n_traj, seed, &[])
}

/// Effective maps at cycle boundaries with ideal instantaneous π pulses
/// `X, Y, X, Y` after each quarter of every cycle.
pub fn evolve_with_xy4(sys: &SystemSpec, noise: &NoiseSpec, dt_cycle: f64, k: usize, n_traj: usize, seed: u64) -> Result<MapSeries> {
    if sys.n_qubits != 1 {
        return Err(invalid("XY4 evolution is defined for a single qubit"));
    }
    let x = [ZERO, -I, -I, ZERO];
    let y = [ZERO, -ONE, ONE, ZERO];
    let q = SUBSTEPS / 4;
    let mut pulses = vec![None; SUBSTEPS];
    for (slot, p) in [(q - 1, x), (2 * q - 1, y), (3 * q - 1, x), (4 * q - 1, y)] {
        pulses[slot] = Some(p);
    }
    sampled_maps(sys, noise, dt_cycle, k, n_traj, seed, &pulses)
}

/// Trajectory-averaged states `ρ(t_k)`, `k = 0..=K`, using the same noise
/// streams as [`ensemble_maps`] with equal `seed`.
pub fn ensemble_states(
    sys: &SystemSpec,
    noise: &NoiseSpec,
    rho0: &DensityMatrix,
    dt: f64,
    k: usize,
    n_traj: usize,
    seed: u64,
) -> Result<StateEnsemble> {
    check_grid(dt, k)?;
    let engine = Engine::new(sys, noise)?;
    let d = engine.dim;
    if rho0.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: rho0.dim() });
    }
    let sampler = NoiseSampler::new(noise, dt / SUBSTEPS as f64, SUBSTEPS * k)?;
    let d2 = d * d;
    let rho = rho0.matrix();
    let moments = monte_carlo(&sampler, noise.channels.len(), n_traj, seed, k * d2, |path, acc| {
        engine.run(path, SUBSTEPS, &[], |rec, u| {
            let um = CMatrix::from_row_slice(d, d, u);
            let out = &um * rho * um.adjoint();
            let base = (rec - 1) * d2;
            for i in 0..d {
                for j in 0..d {
                    acc.add(base + i * d + j, out[(i, j)]);
                }
            }
        })
    })?;
    let (mean, se) = moments.finish(n_traj);
    let mut means = vec![rho.clone()];
    let mut errs = vec![CMatrix::zeros(d, d)];
    for r in 0..k {
        means.push(CMatrix::from_row_slice(d, d, &mean[r * d2..(r + 1) * d2]));
        errs.push(CMatrix::from_row_slice(d, d, &se[r * d2..(r + 1) * d2]));
    }
    Ok(StateEnsemble { dt, n_traj, mean: means, stderr: errs })
}

/// States after every sample of `path` (`path.dt` is the propagation step),
/// starting with `rho0`.
pub fn evolve_trajectory(sys: &SystemSpec, noise: &NoiseSpec, path: &NoisePath, rho0: &DensityMatrix) -> Result<Vec<DensityMatrix>> {
    let engine = Engine::new(sys, noise)?;
    if rho0.dim() != engine.dim {
        return Err(Error::DimensionMismatch { expected: engine.dim, found: rho0.dim() });
    }
    let d = engine.dim;
    let mut states = vec![rho0.clone()];
    engine.run(path, 1, &[], |_, u| {
        let um = CMatrix::from_row_slice(d, d, u);
        states.push(DensityMatrix::from_matrix_unchecked(&um * rho0.matrix() * um.adjoint()));
    })?;
    Ok(states)
}

/// Dephasing exponent `Γ(t) = 4∫_0^t (t−s) C(s) ds`.
pub fn dephasing_exponent(corr: &dyn Fn(f64) -> f64, t: f64) -> Result<f64> {
    let scale = corr(0.0).abs().max(1e-300) * t * t;
    Ok(4.0 * quadrature::integrate(&|s| (t - s) * corr(s), 0.0, t, 1e-15 * scale.max(1e-15))?)
}

/// Exact single-qubit maps for Gaussian pure dephasing with correlation
/// `corr` under `H_s = bias·σ^z`: `ρ01 ↦ ρ01·e^{−Γ(t) − 2i·bias·t}`.
pub fn analytic_dephasing_series(corr: &dyn Fn(f64) -> f64, bias: f64, dt: f64, k: usize) -> Result<MapSeries> {
    check_grid(dt, k)?;
    let maps = (1..=k)
        .map(|n| {
            let t = n as f64 * dt;
            Ok(dephasing_map(dephasing_exponent(corr, t)?, -2.0 * bias * t))
        })
        .collect::<Result<Vec<_>>>()?;
    MapSeries::new(dt, maps)
}

/// Exact maps for Gaussian pure dephasing on one or two qubits where every
/// noise channel couples through `σ^z`.
pub fn analytic_zz_series(sys: &SystemSpec, noise: &NoiseSpec, dt: f64, k: usize) -> Result<MapSeries> {
    sys.check_noise(noise)?;
    check_grid(dt, k)?;
    if noise.channels.iter().any(|c| c.axis != Axis::Z) {
        return Err(invalid("closed-form dephasing needs σ^z couplings only"));
    }
    let d = sys.dim();
    let sigma = noise.equal_time_covariance();
    let n_ch = noise.channels.len();
    let energies = sys.energies();
    let mut maps = Vec::with_capacity(k);
    for n in 1..=k {
        let t = n as f64 * dt;
        // φ_ab(t) = Σ_ab·2∫_0^t (t−s) c(s) ds
        let mut phi = DMatrix::zeros(n_ch, n_ch);
        for a in 0..n_ch {
            let shape = &noise.channels[a].shape;
            let base = 0.5 * dephasing_exponent(&|s| shape.eval(s), t)?;
            for b in 0..n_ch {
                if sigma[(a, b)] != 0.0 {
                    phi[(a, b)] = sigma[(a, b)] * base;
                }
            }
        }
        let mut m = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for ip in 0..d {
                let dz: Vec<f64> = noise
                    .channels
                    .iter()
                    .map(|c| sys.z_sign(i, c.qubit) - sys.z_sign(ip, c.qubit))
                    .collect();
                let var: f64 = (0..n_ch).flat_map(|a| (0..n_ch).map(move |b| (a, b))).map(|(a, b)| dz[a] * dz[b] * phi[(a, b)]).sum();
                let idx = i * d + ip;
                m[(idx, idx)] = C64::from_polar((-0.5 * var).exp(), -(energies[i] - energies[ip]) * t);
            }
        }
        maps.push(Superoperator::new(d, m)?);
    }
    MapSeries::new(dt, maps)
}

/// Exact ensemble maps for noise with purely exponential correlations,
/// from the classical stochastic Liouville hierarchy truncated at total
/// order `depth`.
///
/// Each independent Ornstein–Uhlenbeck mode `ξ_j` (unit variance, rate
/// `κ_j`) coupled through `V_j` adds a Hermite index `n_j`:
/// `dσ_n/dt = (L_s − Σ n_j κ_j) σ_n − i Σ_j [V_j, √n_j σ_{n−e_j} + √(n_j+1) σ_{n+e_j}]`,
/// and the reduced state is `σ_0`.
pub fn hierarchy_maps(sys: &SystemSpec, noise: &NoiseSpec, dt: f64, k: usize, depth: usize) -> Result<MapSeries> {
    sys.check_noise(noise)?;
    check_grid(dt, k)?;
    let d = sys.dim();
    let d2 = d * d;
    let sigma = noise.equal_time_covariance();
    let mut rates = Vec::new();
    let mut couplings: Vec<Superoperator> = Vec::new();
    let mut seen = vec![false; noise.channels.len()];
    for a in 0..noise.channels.len() {
        if seen[a] {
            continue;
        }
        let kappa = noise.channels[a]
            .shape
            .exponential_rate()
            .ok_or_else(|| invalid("hierarchy needs unmodulated exponential correlations"))?;
        let group: Vec<usize> = (0..noise.channels.len())
            .filter(|&b| b == a || (!seen[b] && sigma[(a, b)] != 0.0))
            .collect();
        for &b in &group {
            seen[b] = true;
        }
        let sub = DMatrix::from_fn(group.len(), group.len(), |i, j| sigma[(group[i], group[j])]);
        let eig = SymmetricEigen::new(sub);
        for (m, &mu) in eig.eigenvalues.iter().enumerate() {
            if mu <= 1e-14 {
                continue;
            }
            let mut v = CMatrix::zeros(d, d);
            for (row, &c) in group.iter().enumerate() {
                let ch = &noise.channels[c];
                v += embed_pauli(ch.axis, ch.qubit, sys.n_qubits).map(|z| z * eig.eigenvectors[(row, m)] * mu.sqrt());
            }
            rates.push(kappa);
            couplings.push(Superoperator::commutator(&v));
        }
    }
    let modes = rates.len();
    let mut indices: Vec<Vec<usize>> = vec![vec![0; modes]];
    let mut lookup: HashMap<Vec<usize>, usize> = HashMap::from([(vec![0; modes], 0)]);
    let mut frontier = vec![vec![0; modes]];
    for _ in 0..depth {
        let mut next = Vec::new();
        for idx in &frontier {
            for j in 0..modes {
                let mut n = idx.clone();
                n[j] += 1;
                if !lookup.contains_key(&n) {
                    lookup.insert(n.clone(), indices.len());
                    indices.push(n.clone());
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    let ls = sys.liouvillian();
    let mut g = SparseGenerator::new(indices.len() * d2);
    for (p, n) in indices.iter().enumerate() {
        let damping: f64 = n.iter().zip(&rates).map(|(&nj, &kj)| nj as f64 * kj).sum();
        let mut diag = ls.matrix().clone();
        for r in 0..d2 {
            diag[(r, r)] -= C64::from(damping);
        }
        g.add_block(p * d2, p * d2, &diag);
        for j in 0..modes {
            let mut neighbours = Vec::new();
            if n[j] > 0 {
                let mut m = n.clone();
                m[j] -= 1;
                neighbours.push((m, (n[j] as f64).sqrt()));
            }
            let mut m = n.clone();
            m[j] += 1;
            neighbours.push((m, ((n[j] + 1) as f64).sqrt()));
            for (m, w) in neighbours {
                let Some(&q) = lookup.get(&m) else { continue };
                g.add_block(p * d2, q * d2, &couplings[j].matrix().map(|z| -I * w * z));
            }
        }
    }
    let mut state = CMatrix::zeros(g.size, d2);
    for r in 0..d2 {
        state[(r, r)] = ONE;
    }
    let mut maps = Vec::with_capacity(k);
    for _ in 0..k {
        state = g.propagate(&state, dt);
        maps.push(Superoperator::new(d, state.rows(0, d2).into_owned())?);
    }
    MapSeries::new(dt, maps)
}

/// Row-compressed hierarchy generator.
struct SparseGenerator {
    size: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

impl SparseGenerator {
    fn new(size: usize) -> Self {
        Self { size, rows: vec![Vec::new(); size] }
    }

    fn add_block(&mut self, row0: usize, col0: usize, block: &CMatrix) {
        for r in 0..block.nrows() {
            for c in 0..block.ncols() {
                let v = block[(r, c)];
                if v != ZERO {
                    self.rows[row0 + r].push((col0 + c, v));
                }
            }
        }
    }

    fn apply(&self, x: &CMatrix, scale: f64) -> CMatrix {
        let mut out = CMatrix::zeros(x.nrows(), x.ncols());
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                for k in 0..x.ncols() {
                    out[(r, k)] += v * x[(c, k)] * scale;
                }
            }
        }
        out
    }

    fn norm_inf(&self) -> f64 {
        self.rows.iter().map(|row| row.iter().map(|(_, v)| v.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `e^{G t} x` by Taylor series on substeps with `|G| h ≤ ½`.
    fn propagate(&self, x: &CMatrix, t: f64) -> CMatrix {
        let substeps = ((self.norm_inf() * t.abs()) / 0.5).ceil().max(1.0) as usize;
        let h = t / substeps as f64;
        let mut state = x.clone();
        for _ in 0..substeps {
            let mut term = state.clone();
            let mut acc = state.clone();
            for j in 1..=60 {
                term = self.apply(&term, h / j as f64);
                acc += &term;
                if term.norm() <= 1e-18 * acc.norm() {
                    break;
                }
            }
            state = acc;
        }
        state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{CrossCovariance, NoiseChannel};
    use nalgebra::DVector;

    fn plus() -> DensityMatrix {
        let s = C64::from(0.5f64.sqrt());
        DensityMatrix::from_ket(&DVector::from_vec(vec![s, s])).unwrap()
    }

    fn ket0() -> DensityMatrix {
        DensityMatrix::from_ket(&DVector::from_vec(vec![ONE, ZERO])).unwrap()
    }

    #[test]
    fn free_precession() {
        let sys = SystemSpec::qubit(0.1);
        let noise = NoiseSpec::single(0, Axis::Z, 0.0, 1.0, 0.0);
        let path = NoisePath { dt: 0.05, values: vec![vec![0.0; 40]] };
        let states = evolve_trajectory(&sys, &noise, &path, &plus()).unwrap();
        let t = 40.0 * 0.05;
        let expected = C64::from_polar(0.5, -2.0 * 0.1 * t);
        assert!((states[40].matrix()[(0, 1)] - expected).norm() < 1e-14);
        let still = evolve_trajectory(&sys, &noise, &path, &ket0()).unwrap();
        assert!((still[40].matrix() - ket0().matrix()).norm() < 1e-14);
    }

    #[test]
    fn single_path_phase_matches_integral() {
        let sys = SystemSpec::qubit(0.1);
        let noise = NoiseSpec::single(0, Axis::Z, 1.0, 1.0, 0.0);
        let path = crate::noise::sample_paths(&noise, 0.025, 80, 4).unwrap();
        let states = evolve_trajectory(&sys, &noise, &path, &plus()).unwrap();
        let integral: f64 = path.values[0].iter().sum::<f64>() * 0.025;
        let t = 80.0 * 0.025;
        let expected = C64::from_polar(0.5, -2.0 * 0.1 * t - 2.0 * integral);
        assert!((states[80].matrix()[(0, 1)] - expected).norm() < 1e-13);
        assert!((states[80].purity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_ensemble_is_unitary_map() {
        let sys = SystemSpec::pair(0.1, 0.3, 0.05);
        let mut noise = NoiseSpec::single(0, Axis::Z, 0.0, 1.0, 0.0);
        noise.channels.push(NoiseChannel { qubit: 1, ..noise.channels[0].clone() });
        let maps = ensemble_maps(&sys, &noise, 0.2, 3, 10, 1).unwrap();
        for (k, m) in maps.maps.iter().enumerate() {
            assert!(m.max_abs_diff(&sys.free_map((k + 1) as f64 * 0.2)) < 1e-12);
        }
    }

    #[test]
    fn hierarchy_matches_closed_form_dephasing() {
        let sys = SystemSpec::qubit(0.1);
        let noise = NoiseSpec::single(0, Axis::Z, 4.0, 1.0, 0.0);
        let exact = analytic_dephasing_series(&|t: f64| 4.0 * (-t.abs()).exp(), 0.1, 0.2, 10).unwrap();
        let h = hierarchy_maps(&sys, &noise, 0.2, 10, 40).unwrap();
        for (a, b) in exact.maps.iter().zip(&h.maps) {
            assert!(a.max_abs_diff(b) < 1e-10);
        }
    }

    #[test]
    fn lorentzian_exponent_closed_form() {
        let lambda = 4.0;
        for t in [0.2, 1.0, 3.7] {
            let g = dephasing_exponent(&|s: f64| lambda * (-s.abs()).exp(), t).unwrap();
            let closed = 4.0 * lambda * (t - 1.0 + (-t as f64).exp());
            assert!((g - closed).abs() < 1e-12 * closed.max(1.0));
        }
        assert_eq!(dephasing_exponent(&|_| 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn two_qubit_closed_form_matches_hierarchy() {
        let sys = SystemSpec::pair(0.1, 0.1, 0.0);
        let mut noise = NoiseSpec::single(0, Axis::Z, 0.25, 1.0, 0.0);
        noise.channels.push(NoiseChannel { qubit: 1, ..noise.channels[0].clone() });
        noise.cross.push(CrossCovariance { a: 0, b: 1, value: 0.125 });
        let a = analytic_zz_series(&sys, &noise, 0.2, 4).unwrap();
        let h = hierarchy_maps(&sys, &noise, 0.2, 4, 12).unwrap();
        for (x, y) in a.maps.iter().zip(&h.maps) {
            assert!(x.max_abs_diff(y) < 1e-9, "{}", x.max_abs_diff(y));
        }
    }

    #[test]
    fn xy4_without_noise_is_identity() {
        let sys = SystemSpec::qubit(0.3);
        let noise = NoiseSpec::single(0, Axis::Z, 0.0, 1.0, 0.0);
        let maps = evolve_with_xy4(&sys, &noise, 0.4, 5, 1, 0).unwrap();
        for m in &maps.maps {
            assert!(m.max_abs_diff(&Superoperator::identity(2)) < 1e-13);
        }
    }

    #[test]
    fn xy4_preserves_coherence_under_static_noise() {
        let sys = SystemSpec::qubit(0.0);
        let noise = NoiseSpec::single(0, Axis::Z, 1.0, 1e-3, 0.0);
        let maps = evolve_with_xy4(&sys, &noise, 0.2, 10, 400, 9).unwrap();
        let coherence = maps.maps[9].matrix()[(1, 1)].norm();
        assert!(coherence > 0.99, "{coherence}");
        let free = ensemble_maps(&sys, &noise, 0.2, 10, 400, 9).unwrap();
        assert!(free.maps[9].matrix()[(1, 1)].norm() < 0.5);
    }

    #[test]
    fn maps_and_states_share_trajectories() {
        let sys = SystemSpec::qubit(0.2);
        let noise = NoiseSpec::single(0, Axis::X, 0.5, 1.0, 0.0);
        let maps = ensemble_maps(&sys, &noise, 0.1, 4, 300, 3).unwrap();
        let states = ensemble_states(&sys, &noise, &plus(), 0.1, 4, 300, 3).unwrap();
        for k in 1..=4 {
            let via = maps.map(k).apply(&plus()).unwrap();
            assert!((via.matrix() - &states.mean[k]).norm() < 1e-13);
        }
    }

    #[test]
    fn reduction_is_reproducible() {
        let sys = SystemSpec::qubit(0.1);
        let noise = NoiseSpec::single(0, Axis::Z, 4.0, 1.0, 0.0);
        let a = ensemble_maps(&sys, &noise, 0.2, 3, 2000, 5).unwrap();
        let b = ensemble_maps(&sys, &noise, 0.2, 3, 2000, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decimation_keeps_every_other_map() {
        let s = analytic_dephasing_series(&|t: f64| (-t.abs()).exp(), 0.1, 0.2, 6).unwrap();
        let d = s.decimate(2).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.maps[0], s.maps[1]);
        assert!((d.dt - 0.4).abs() < 1e-15);
    }
}
