//! Transfer tensors, truncated propagation and memory-kernel extraction.

use crate::error::{invalid, Error, Result};
use crate::liouville::{CMatrix, DensityMatrix, Superoperator};
use crate::propagator::MapSeries;

/// Where a tensor series came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Simulated,
    Ingested,
}

/// Transfer tensors `T_1..T_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferTensorSeries {
    pub dt: f64,
    pub tensors: Vec<Superoperator>,
    pub source: Source,
}

impl TransferTensorSeries {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tensors.first().map_or(0, Superoperator::dim)
    }

    /// `T_n`, `n ≥ 1`.
    pub fn tensor(&self, n: usize) -> &Superoperator {
        &self.tensors[n - 1]
    }

    fn check_trunc(&self, k_trunc: usize) -> Result<()> {
        if k_trunc == 0 || k_trunc > self.len() {
            return Err(invalid(format!("truncation {k_trunc} outside 1..={}", self.len())));
        }
        Ok(())
    }
}

/// `T_n = E_n − Σ_{m=1}^{n−1} T_{n−m} E_m`.
pub fn build_ttms(maps: &MapSeries) -> Result<TransferTensorSeries> {
    build_ttms_from(maps, Source::Simulated)
}

pub fn build_ttms_from(maps: &MapSeries, source: Source) -> Result<TransferTensorSeries> {
    if maps.is_empty() {
        return Err(invalid("empty map series"));
    }
    let mut tensors: Vec<Superoperator> = Vec::with_capacity(maps.len());
    for n in 1..=maps.len() {
        let mut t = maps.maps[n - 1].matrix().clone();
        for m in 1..n {
            t -= tensors[n - m - 1].matrix() * maps.maps[m - 1].matrix();
        }
        tensors.push(Superoperator::new(maps.dim(), t)?);
    }
    Ok(TransferTensorSeries { dt: maps.dt, tensors, source })
}

/// `ρ(t_n) = Σ_{m=1}^{min(n, K_trunc)} T_m ρ(t_{n−m})` for `n = 0..=n_steps`.
pub fn predict_states(ttms: &TransferTensorSeries, k_trunc: usize, rho0: &DensityMatrix, n_steps: usize) -> Result<Vec<DensityMatrix>> {
    ttms.check_trunc(k_trunc)?;
    if rho0.dim() != ttms.dim() {
        return Err(Error::DimensionMismatch { expected: ttms.dim(), found: rho0.dim() });
    }
    let d = ttms.dim();
    let mut history = vec![crate::liouville::vectorize(rho0.matrix())];
    for n in 1..=n_steps {
        let mut v = nalgebra::DVector::zeros(d * d);
        for m in 1..=n.min(k_trunc) {
            v += ttms.tensor(m).matrix() * &history[n - m];
        }
        history.push(v);
    }
    Ok(history
        .iter()
        .map(|v| DensityMatrix::from_matrix_unchecked(crate::liouville::unvectorize(v, d)))
        .collect())
}

/// `E_n = Σ_{m=1}^{min(n, K_trunc)} T_m E_{n−m}` for `n = 1..=n_total`.
pub fn predict_maps(ttms: &TransferTensorSeries, k_trunc: usize, n_total: usize) -> Result<MapSeries> {
    ttms.check_trunc(k_trunc)?;
    let d = ttms.dim();
    let mut maps: Vec<CMatrix> = vec![CMatrix::identity(d * d, d * d)];
    for n in 1..=n_total {
        let mut e = CMatrix::zeros(d * d, d * d);
        for m in 1..=n.min(k_trunc) {
            e += ttms.tensor(m).matrix() * &maps[n - m];
        }
        maps.push(e);
    }
    let maps = maps.into_iter().skip(1).map(|m| Superoperator::new(d, m)).collect::<Result<Vec<_>>>()?;
    MapSeries::new(ttms.dt, maps)
}

/// Frobenius norm per tensor; with `subtract_identity`, `|T_1 − I|`
/// replaces `|T_1|`.
pub fn norm_profile(ttms: &TransferTensorSeries, subtract_identity: bool) -> Vec<f64> {
    ttms.tensors
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if k == 0 && subtract_identity {
                (t - &Superoperator::identity(t.dim())).frobenius_norm()
            } else {
                t.frobenius_norm()
            }
        })
        .collect()
}

/// Smallest `n` with `|T_n| / |T_1| < 1e-3`, or the series length.
pub fn default_truncation(ttms: &TransferTensorSeries) -> usize {
    let profile = norm_profile(ttms, false);
    let t1 = profile[0];
    profile.iter().position(|&x| x < 1e-3 * t1).map_or(ttms.len(), |k| k + 1)
}

/// Memory kernel samples `K(t)` with the system Liouvillian they were
/// extracted against.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSeries {
    pub dt: f64,
    pub times: Vec<f64>,
    pub kernels: Vec<Superoperator>,
    pub ls: Superoperator,
}

impl KernelSeries {
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Rebuilds `T_1 = 1 + L_s dt + K(t_1) dt²` from a series produced by
    /// [`extract_kernel`].
    pub fn first_tensor(&self) -> Superoperator {
        let id = Superoperator::identity(self.ls.dim());
        &(&id + &self.ls.scale(self.dt)) + &self.kernels[0].scale(self.dt * self.dt)
    }
}

fn check_ls(ttms: &TransferTensorSeries, ls: &Superoperator) -> Result<()> {
    if ttms.is_empty() {
        return Err(invalid("empty tensor series"));
    }
    if ls.dim() != ttms.dim() {
        return Err(Error::DimensionMismatch { expected: ttms.dim(), found: ls.dim() });
    }
    Ok(())
}

/// `K(t_n) = (T_n − (1 + L_s dt) δ_{n1}) / dt²` on `t_n = n·dt`.
pub fn extract_kernel(ttms: &TransferTensorSeries, ls: &Superoperator) -> Result<KernelSeries> {
    check_ls(ttms, ls)?;
    let dt = ttms.dt;
    let id = Superoperator::identity(ls.dim());
    let first = &id + &ls.scale(dt);
    let kernels = ttms
        .tensors
        .iter()
        .enumerate()
        .map(|(k, t)| if k == 0 { (t - &first).scale(1.0 / (dt * dt)) } else { t.scale(1.0 / (dt * dt)) })
        .collect();
    let times = (1..=ttms.len()).map(|n| n as f64 * dt).collect();
    Ok(KernelSeries { dt, times, kernels, ls: ls.clone() })
}

/// Kernel samples placed at the lag each tensor actually measures.
///
/// To second order in the noise, `T_n ≈ dt²·K(t_{n−1})` for `n ≥ 2` and
/// `T_1 − e^{L_s dt} ≈ ½ dt²·K(0)`. The series returned starts at `t = 0`.
pub fn extract_kernel_aligned(ttms: &TransferTensorSeries, ls: &Superoperator) -> Result<KernelSeries> {
    check_ls(ttms, ls)?;
    let dt = ttms.dt;
    let free = ls.scale(dt).exp();
    let kernels = ttms
        .tensors
        .iter()
        .enumerate()
        .map(|(k, t)| if k == 0 { (t - &free).scale(2.0 / (dt * dt)) } else { t.scale(1.0 / (dt * dt)) })
        .collect();
    let times = (0..ttms.len()).map(|n| n as f64 * dt).collect();
    Ok(KernelSeries { dt, times, kernels, ls: ls.clone() })
}

/// Estimates the generator from first tensors at steps `dt` and `2dt`,
/// cancelling the `dt²` kernel contribution:
/// `L dt ≈ (4(T_1 − 1) − (T_1' − 1)) / 2`.
pub fn estimate_generator(t1: &Superoperator, t1_double: &Superoperator, dt: f64) -> Result<Superoperator> {
    if t1.dim() != t1_double.dim() {
        return Err(Error::DimensionMismatch { expected: t1.dim(), found: t1_double.dim() });
    }
    let id = Superoperator::identity(t1.dim());
    let a = (t1 - &id).scale(4.0);
    let b = t1_double - &id;
    Ok((&a - &b).scale(0.5 / dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{dephasing_map, Axis};

    fn semigroup(e1: &Superoperator, k: usize) -> MapSeries {
        let mut maps = vec![e1.clone()];
        for _ in 1..k {
            let next = maps.last().unwrap().compose(e1).unwrap();
            maps.push(next);
        }
        MapSeries::new(0.1, maps).unwrap()
    }

    #[test]
    fn semigroup_has_one_tensor() {
        let t = build_ttms(&semigroup(&dephasing_map(0.2, 0.3), 8)).unwrap();
        for n in 2..=8 {
            assert!(t.tensor(n).frobenius_norm() < 1e-14);
        }
    }

    #[test]
    fn identity_maps() {
        let t = build_ttms(&semigroup(&Superoperator::identity(2), 5)).unwrap();
        assert_eq!(t.tensor(1), &Superoperator::identity(2));
        let profile = norm_profile(&t, true);
        assert!(profile.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_series_rejected() {
        assert!(build_ttms(&MapSeries::new(0.1, vec![]).unwrap()).is_err());
    }

    #[test]
    fn full_truncation_reproduces_maps() {
        let maps: Vec<Superoperator> = (1..=6).map(|n| dephasing_map(0.1 * (n * n) as f64, 0.2 * n as f64)).collect();
        let s = MapSeries::new(0.2, maps).unwrap();
        let t = build_ttms(&s).unwrap();
        let back = predict_maps(&t, 6, 6).unwrap();
        for (a, b) in s.maps.iter().zip(&back.maps) {
            assert!(a.max_abs_diff(b) < 1e-13);
        }
        let rho = DensityMatrix::from_bloch(&nalgebra::Vector3::new(0.6, 0.0, 0.0));
        let states = predict_states(&t, 6, &rho, 6).unwrap();
        for (n, st) in states.iter().enumerate().skip(1) {
            let direct = s.map(n).apply(&rho).unwrap();
            assert!((st.matrix() - direct.matrix()).norm() < 1e-13);
        }
    }

    #[test]
    fn kernel_identity_and_noiseless_limit() {
        let ls = Superoperator::liouvillian(&Axis::Z.pauli().map(|z| z * 0.1));
        let dt = 0.01;
        let free: Vec<Superoperator> = (1..=4).map(|n| ls.scale(n as f64 * dt).exp()).collect();
        let t = build_ttms(&MapSeries::new(dt, free).unwrap()).unwrap();
        let k = extract_kernel(&t, &ls).unwrap();
        assert!(k.first_tensor().max_abs_diff(t.tensor(1)) < 1e-12);
        // The literal kernel of free evolution is the O(dt⁰) Taylor
        // remainder L²/2, which stays bounded.
        assert!(k.kernels[0].frobenius_norm() < ls.compose(&ls).unwrap().frobenius_norm());
        let aligned = extract_kernel_aligned(&t, &ls).unwrap();
        assert!(aligned.kernels.iter().all(|x| x.frobenius_norm() < 1e-9));
        assert_eq!(aligned.times[0], 0.0);
    }

    #[test]
    fn truncation_default() {
        let t = build_ttms(&semigroup(&dephasing_map(0.2, 0.3), 8)).unwrap();
        assert_eq!(default_truncation(&t), 2);
    }

    #[test]
    fn generator_estimate_is_exact_on_quadratic_input() {
        let l = Superoperator::liouvillian(&Axis::X.pauli());
        let kern = dephasing_map(0.4, 0.0);
        let dt = 0.05;
        let id = Superoperator::identity(2);
        let t1 = &(&id + &l.scale(dt)) + &kern.scale(dt * dt);
        let t1d = &(&id + &l.scale(2.0 * dt)) + &kern.scale(4.0 * dt * dt);
        assert!(estimate_generator(&t1, &t1d, dt).unwrap().max_abs_diff(&l) < 1e-12);
    }
}
