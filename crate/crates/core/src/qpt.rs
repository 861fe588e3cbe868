//! Process tomography: preparation bases, simulated Pauli measurements,
//! linear-inversion reconstruction and record files.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::liouville::{vectorize, Axis, CMatrix, ChoiMatrix, DensityMatrix, Superoperator, C64, I, ONE, ZERO};
use crate::propagator::MapSeries;

/// Labeled pure preparation state.
#[derive(Clone, Debug)]
pub struct PrepState {
    pub label: String,
    pub state: DensityMatrix,
}

/// `d²` preparation states whose projectors span the operator space.
#[derive(Clone, Debug)]
pub struct PrepBasis {
    n_qubits: usize,
    states: Vec<PrepState>,
    /// Inverse of the matrix whose columns are the vectorized projectors.
    inverse: CMatrix,
    condition: f64,
}

const ILL_CONDITIONED: f64 = 1e8;

impl PrepBasis {
    pub fn single_qubit() -> Self {
        let s = 0.5f64.sqrt();
        let kets = [
            ("psi0", vec![ONE, ZERO]),
            ("psi1", vec![ZERO, ONE]),
            ("psiX", vec![C64::from(s), C64::from(s)]),
            ("psiY", vec![C64::from(s), I * s]),
        ];
        Self::from_kets(1, &kets).expect("single-qubit basis is complete")
    }

    pub fn two_qubit() -> Self {
        let s = 0.5f64.sqrt();
        let e = |k: usize| {
            let mut v = vec![ZERO; 4];
            v[k] = ONE;
            v
        };
        let sup = |a: usize, b: usize, phase: C64| {
            let mut v = vec![ZERO; 4];
            v[a] = C64::from(s);
            v[b] += phase * s;
            v
        };
        let kets = [
            ("psi00", e(0)),
            ("psi01", e(1)),
            ("psi10", e(2)),
            ("psi11", e(3)),
            ("psi0X", sup(0, 1, ONE)),
            ("psi0Y", sup(0, 1, I)),
            ("psi1X", sup(2, 3, ONE)),
            ("psi1Y", sup(2, 3, I)),
            ("psiX0", sup(0, 2, ONE)),
            ("psiY0", sup(0, 2, I)),
            ("psiX1", sup(3, 1, ONE)),
            ("psiY1", sup(1, 3, I)),
            ("Phi", sup(0, 3, ONE)),
            ("Psi", sup(1, 2, ONE)),
            ("PhiStar", sup(0, 3, I)),
            ("PsiStar", sup(1, 2, I)),
        ];
        Self::from_kets(2, &kets).expect("two-qubit basis is complete")
    }

    pub fn for_qubits(n_qubits: usize) -> Result<Self> {
        match n_qubits {
            1 => Ok(Self::single_qubit()),
            2 => Ok(Self::two_qubit()),
            n => Err(invalid(format!("no preparation basis for {n} qubits"))),
        }
    }

    fn from_kets(n_qubits: usize, kets: &[(&str, Vec<C64>)]) -> Result<Self> {
        let d = 1 << n_qubits;
        if kets.len() != d * d {
            return Err(invalid("a preparation basis needs d² states"));
        }
        let states = kets
            .iter()
            .map(|(label, v)| {
                Ok(PrepState { label: (*label).to_string(), state: DensityMatrix::from_ket(&DVector::from_vec(v.clone()))? })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut p = CMatrix::zeros(d * d, d * d);
        for (k, st) in states.iter().enumerate() {
            p.set_column(k, &vectorize(st.state.matrix()));
        }
        let sv = p.clone().singular_values();
        let condition = sv.max() / sv.min();
        if !condition.is_finite() || condition > ILL_CONDITIONED {
            return Err(Error::Singular(format!("preparation basis condition number {condition:e}")));
        }
        let inverse = p.try_inverse().ok_or_else(|| Error::Singular("preparation basis".into()))?;
        Ok(Self { n_qubits, states, inverse, condition })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn states(&self) -> &[PrepState] {
        &self.states
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s.label == label)
    }
}

/// One measured expectation value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QptRecord {
    pub time_index: usize,
    pub prep_label: String,
    pub pauli: String,
    pub expectation: f64,
    /// Number of shots; 0 for an exact value.
    pub shots: u64,
}

/// All Pauli strings over `{I,X,Y,Z}` of length `n`, the first character
/// acting on qubit 0.
pub fn pauli_strings(n: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..n {
        out = out.iter().flat_map(|s| ['I', 'X', 'Y', 'Z'].map(|c| format!("{s}{c}"))).collect();
    }
    out
}

pub fn pauli_operator(label: &str) -> Result<CMatrix> {
    let mut op = CMatrix::identity(1, 1);
    for c in label.chars() {
        let factor = match c {
            'I' => CMatrix::identity(2, 2),
            'X' => Axis::X.pauli(),
            'Y' => Axis::Y.pauli(),
            'Z' => Axis::Z.pauli(),
            other => return Err(invalid(format!("bad Pauli character '{other}'"))),
        };
        op = op.kronecker(&factor);
    }
    Ok(op)
}

/// Expectation values `Tr(P·E_k ρ_prep)` for every time, preparation and
/// Pauli string; binomially sampled when `shots > 0`.
pub fn simulate_qpt(maps: &MapSeries, basis: &PrepBasis, shots: u64, seed: u64) -> Result<Vec<QptRecord>> {
    if maps.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: maps.dim() });
    }
    let paulis: Vec<(String, CMatrix)> = pauli_strings(basis.n_qubits)
        .into_iter()
        .map(|s| {
            let op = pauli_operator(&s)?;
            Ok((s, op))
        })
        .collect::<Result<_>>()?;
    let identity: String = "I".repeat(basis.n_qubits);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, map) in maps.maps.iter().enumerate() {
        for prep in &basis.states {
            let rho = map.apply(&prep.state)?;
            for (label, op) in &paulis {
                let exact = (op * rho.matrix()).trace().re;
                let expectation = if shots == 0 || *label == identity {
                    exact
                } else {
                    let p = (0.5 * (1.0 + exact)).clamp(0.0, 1.0);
                    let hits = Binomial::new(shots, p).map_err(|e| invalid(e.to_string()))?.sample(&mut rng);
                    2.0 * hits as f64 / shots as f64 - 1.0
                };
                out.push(QptRecord {
                    time_index: k + 1,
                    prep_label: prep.label.clone(),
                    pauli: label.clone(),
                    expectation,
                    shots: if *label == identity { 0 } else { shots },
                });
            }
        }
    }
    Ok(out)
}

/// Linear-inversion reconstruction of `E_1..E_K` from a complete record
/// set. The all-identity Pauli string may be omitted; it defaults to 1.
pub fn reconstruct_maps(records: &[QptRecord], basis: &PrepBasis, dt: f64) -> Result<MapSeries> {
    let n = basis.n_qubits;
    let d = basis.dim();
    let paulis = pauli_strings(n);
    let pauli_index: HashMap<&str, usize> = paulis.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut by_time: BTreeMap<usize, HashMap<(usize, usize), f64>> = BTreeMap::new();
    for r in records {
        if r.time_index == 0 {
            return Err(invalid("time_index 0 is the identity map and must not be recorded"));
        }
        if !r.expectation.is_finite() || r.expectation.abs() > 1.0 + 1e-12 {
            return Err(invalid(format!("expectation {} out of range", r.expectation)));
        }
        let p = basis
            .index_of(&r.prep_label)
            .ok_or_else(|| invalid(format!("unknown preparation label '{}'", r.prep_label)))?;
        let q = *pauli_index
            .get(r.pauli.as_str())
            .ok_or_else(|| invalid(format!("bad Pauli string '{}' for {n} qubit(s)", r.pauli)))?;
        if by_time.entry(r.time_index).or_default().insert((p, q), r.expectation).is_some() {
            return Err(invalid(format!(
                "duplicate record for t={}, {}, {}",
                r.time_index, r.prep_label, r.pauli
            )));
        }
    }
    let k_max = by_time.keys().next_back().copied().unwrap_or(0);
    let missing_times: Vec<usize> = (1..=k_max).filter(|k| !by_time.contains_key(k)).collect();
    if !missing_times.is_empty() {
        return Err(Error::IncompleteRecords(format!("no records for time indices {missing_times:?}")));
    }
    let ops = paulis.iter().map(|s| pauli_operator(s)).collect::<Result<Vec<_>>>()?;
    let mut maps = Vec::with_capacity(k_max);
    for (&k, table) in &by_time {
        let mut missing = Vec::new();
        let mut out = CMatrix::zeros(d * d, d * d);
        for (p, prep) in basis.states.iter().enumerate() {
            let mut rho = CMatrix::zeros(d, d);
            for (q, op) in ops.iter().enumerate() {
                let value = match table.get(&(p, q)) {
                    Some(v) => *v,
                    None if q == 0 => 1.0,
                    None => {
                        missing.push(format!("({}, {})", prep.label, paulis[q]));
                        continue;
                    }
                };
                rho += op.map(|z| z * value);
            }
            out.set_column(p, &vectorize(&rho.map(|z| z / d as f64)));
        }
        if !missing.is_empty() {
            return Err(Error::IncompleteRecords(format!("t={k}: missing {}", missing.join(", "))));
        }
        maps.push(Superoperator::new(d, out * &basis.inverse)?);
    }
    MapSeries::new(dt, maps)
}

/// Smallest Choi eigenvalue per map; negative entries flag maps that are
/// not completely positive.
pub fn min_choi_eigenvalues(maps: &MapSeries) -> Vec<f64> {
    maps.maps.iter().map(|m| m.to_choi().min_eigenvalue()).collect()
}

/// Nearest completely positive, trace-preserving map in the Frobenius norm
/// of the Choi matrix (at most 200 iterations, residual below 1e-9).
pub fn project_cptp(s: &Superoperator) -> Result<Superoperator> {
    project_cptp_with(s, 200, 1e-9)
}

/// Dykstra's alternating projection between the positive semidefinite cone
/// and the affine set of Hermitian matrices with identity output trace.
pub fn project_cptp_with(s: &Superoperator, max_iterations: usize, tol: f64) -> Result<Superoperator> {
    let d = s.dim();
    let raw = s.to_choi().matrix().clone();
    let mut x = (&raw + raw.adjoint()).map(|z| z * 0.5);
    let n = d * d;
    let mut p = CMatrix::zeros(n, n);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        let y = psd_part(&(&x + &p));
        p = &x + &p - &y;
        let next = trace_preserving_part(&y, d);
        residual = (&next - &y).norm();
        let change = (&next - &x).norm();
        x = next;
        if residual < tol && change < tol {
            return Ok(Superoperator::from_choi(&ChoiMatrix::new(d, x)?));
        }
    }
    Err(Error::NonConvergence { what: "CPTP projection", iterations: max_iterations, residual })
}

fn psd_part(m: &CMatrix) -> CMatrix {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let clipped = CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i == j {
            C64::from(eig.eigenvalues[i].max(0.0))
        } else {
            ZERO
        }
    });
    v * clipped * v.adjoint()
}

/// Orthogonal projection onto `Σ_i X[(i,j),(i,j')] = δ_{jj'}`.
fn trace_preserving_part(m: &CMatrix, d: usize) -> CMatrix {
    let mut defect = CMatrix::zeros(d, d);
    for j in 0..d {
        for jp in 0..d {
            let s: C64 = (0..d).map(|i| m[(i * d + j, i * d + jp)]).sum();
            defect[(j, jp)] = s - if j == jp { ONE } else { ZERO };
        }
    }
    let mut out = m.clone();
    for i in 0..d {
        for j in 0..d {
            for jp in 0..d {
                out[(i * d + j, i * d + jp)] -= defect[(j, jp)] / d as f64;
            }
        }
    }
    out
}

/// Reads a record file with header `time_index,prep_label,pauli,expectation,shots`.
pub fn read_records(reader: impl Read) -> Result<Vec<QptRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let expected = ["time_index", "prep_label", "pauli", "expectation", "shots"];
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse { line: 1, message: format!("header must be '{}'", expected.join(",")) });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<QptRecord>() {
        match row {
            Ok(r) => out.push(r),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(Error::Parse { line, message: e.to_string() });
            }
        }
    }
    Ok(out)
}

pub fn write_records(writer: impl Write, records: &[QptRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
