//! State and process representations.
//!
//! Operators on a `d`-dimensional Hilbert space are vectorized row-major:
//! the entry `(i, i')` of a `d×d` matrix lands at position `i·d + i'`.
//! A superoperator is the `d²×d²` matrix acting on that vector, so for a
//! unitary `U` the map `ρ ↦ UρU†` is `U ⊗ conj(U)`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Tolerance for structural identities.
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Tolerance for physical checks on simulated data.
pub const PHYSICAL_TOL: f64 = 1e-10;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Pauli axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn pauli(self) -> CMatrix {
        match self {
            Axis::X => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
            Axis::Y => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
            Axis::Z => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        f.write_str(s)
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(invalid(format!("unknown axis '{other}'"))),
        }
    }
}

/// `σ^axis` acting on `qubit` of an `n_qubits` register. Qubit 0 is the
/// leftmost tensor factor.
pub fn embed_pauli(axis: Axis, qubit: usize, n_qubits: usize) -> CMatrix {
    embed(&axis.pauli(), qubit, n_qubits)
}

pub(crate) fn embed(op: &CMatrix, qubit: usize, n_qubits: usize) -> CMatrix {
    let id = CMatrix::identity(2, 2);
    let mut out = CMatrix::identity(1, 1);
    for q in 0..n_qubits {
        out = if q == qubit { out.kronecker(op) } else { out.kronecker(&id) };
    }
    out
}

/// Row-major vectorization.
pub fn vectorize(m: &CMatrix) -> DVector<C64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |k, _| m[(k / c, k % c)])
}

/// Inverse of [`vectorize`] for a square `d×d` operator.
pub fn unvectorize(v: &DVector<C64>, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |i, j| v[i * d + j])
}

fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).map(|z| z * 0.5)
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub(crate) fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// A `d×d` density operator.
///
/// Construction checks Hermiticity and unit trace. Positivity is reported by
/// [`DensityMatrix::min_eigenvalue`] rather than enforced, since tomography
/// data may violate it slightly.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid("density matrix must be square"));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("density matrix"));
        }
        if max_abs(&(&m - m.adjoint())) > PHYSICAL_TOL {
            return Err(invalid("density matrix is not Hermitian"));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > PHYSICAL_TOL {
            return Err(invalid(format!("density matrix trace is {tr}, expected 1")));
        }
        Ok(Self(m))
    }

    pub fn from_ket(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(invalid("zero state vector"));
        }
        let psi = psi / C64::from(norm);
        Ok(Self(&psi * psi.adjoint()))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim).map(|z| z / dim as f64))
    }

    /// Wraps an operator produced by linear algebra on valid states, such
    /// as a truncated prediction, without re-validating it.
    pub fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(&self.0)
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    /// Bloch vector `r_α = Tr(σ^α ρ)`; qubits only.
    pub fn bloch(&self) -> Result<Vector3<f64>> {
        if self.dim() != 2 {
            return Err(Error::UnsupportedDimension(self.dim()));
        }
        Ok(bloch_of(&self.0))
    }

    pub fn from_bloch(r: &Vector3<f64>) -> Self {
        let mut m = CMatrix::identity(2, 2);
        for a in Axis::ALL {
            m += a.pauli().map(|z| z * r[a.index()]);
        }
        Self(m.map(|z| z * 0.5))
    }
}

fn bloch_of(m: &CMatrix) -> Vector3<f64> {
    Vector3::from_fn(|k, _| (Axis::ALL[k].pauli() * m).trace().re)
}

/// A `d²×d²` linear map on vectorized `d×d` operators.
///
/// The same container holds dynamical maps, transfer tensors, kernels and
/// generators; only dynamical maps are expected to preserve trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn new(dim: usize, matrix: CMatrix) -> Result<Self> {
        let n = dim * dim;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { dim, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        let n = dim * dim;
        Self { dim, matrix: CMatrix::identity(n, n) }
    }

    pub fn zeros(dim: usize) -> Self {
        let n = dim * dim;
        Self { dim, matrix: CMatrix::zeros(n, n) }
    }

    /// `ρ ↦ A ρ B`.
    pub fn sandwich(a: &CMatrix, b: &CMatrix) -> Self {
        Self { dim: a.nrows(), matrix: a.kronecker(&b.transpose()) }
    }

    /// `ρ ↦ U ρ U†`.
    pub fn from_unitary(u: &CMatrix) -> Self {
        Self { dim: u.nrows(), matrix: u.kronecker(&u.map(|z| z.conj())) }
    }

    /// `ρ ↦ −i[H, ρ]`.
    pub fn liouvillian(h: &CMatrix) -> Self {
        let id = CMatrix::identity(h.nrows(), h.nrows());
        let m = (h.kronecker(&id) - id.kronecker(&h.transpose())).map(|z| -I * z);
        Self { dim: h.nrows(), matrix: m }
    }

    /// `ρ ↦ [A, ρ]`.
    pub fn commutator(a: &CMatrix) -> Self {
        let id = CMatrix::identity(a.nrows(), a.nrows());
        Self { dim: a.nrows(), matrix: a.kronecker(&id) - id.kronecker(&a.transpose()) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    fn check_dim(&self, other: usize) -> Result<()> {
        if self.dim != other {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other });
        }
        Ok(())
    }

    /// Applies the map to a state. The result is not re-validated.
    pub fn apply(&self, state: &DensityMatrix) -> Result<DensityMatrix> {
        self.apply_operator(state.matrix()).map(DensityMatrix::from_matrix_unchecked)
    }

    /// Applies the map to an arbitrary `d×d` operator.
    pub fn apply_operator(&self, op: &CMatrix) -> Result<CMatrix> {
        self.check_dim(op.nrows())?;
        let v = &self.matrix * vectorize(op);
        Ok(unvectorize(&v, self.dim))
    }

    /// `self ∘ other`, i.e. `other` acts first.
    pub fn compose(&self, other: &Superoperator) -> Result<Superoperator> {
        self.check_dim(other.dim)?;
        Ok(Self { dim: self.dim, matrix: &self.matrix * &other.matrix })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn max_abs_diff(&self, other: &Superoperator) -> f64 {
        max_abs(&(&self.matrix - &other.matrix))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, matrix: self.matrix.map(|z| z * s) }
    }

    pub fn exp(&self) -> Self {
        Self { dim: self.dim, matrix: self.matrix.clone().exp() }
    }

    /// Largest violation of `Σ_i E[(i,i),(j,j')] = δ_{jj'}`.
    pub fn trace_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for j in 0..d {
            for jp in 0..d {
                let col = j * d + jp;
                let s: C64 = (0..d).map(|i| self.matrix[(i * d + i, col)]).sum();
                let target = if j == jp { ONE } else { ZERO };
                worst = worst.max((s - target).norm());
            }
        }
        worst
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        self.trace_defect() <= tol
    }

    /// Largest violation of `E[(i,i'),(j,j')] = conj(E[(i',i),(j',j)])`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for ip in 0..d {
                for j in 0..d {
                    for jp in 0..d {
                        let a = self.matrix[(i * d + ip, j * d + jp)];
                        let b = self.matrix[(ip * d + i, jp * d + j)].conj();
                        worst = worst.max((a - b).norm());
                    }
                }
            }
        }
        worst
    }

    /// Reshuffle into the Choi representation,
    /// `X[(i,j),(i',j')] = E[(i,i'),(j,j')]`.
    pub fn to_choi(&self) -> ChoiMatrix {
        ChoiMatrix { dim: self.dim, matrix: reshuffle(&self.matrix, self.dim) }
    }

    pub fn from_choi(x: &ChoiMatrix) -> Self {
        Self { dim: x.dim, matrix: reshuffle(&x.matrix, x.dim) }
    }

    /// Reorders a two-qubit superoperator from the standard Liouville index
    /// `(i1 i2, i1' i2')` to the subsystem-grouped index `(i1 i1', i2 i2')`,
    /// in which a product map is a plain Kronecker product.
    pub fn to_subsystem_order(&self) -> Result<CMatrix> {
        if self.dim != 4 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        Ok(permute_two_qubit(&self.matrix))
    }
}

// The reshuffle swaps the second and third of the four indices; applying it
// twice is the identity, so it serves both directions.
fn reshuffle(m: &CMatrix, d: usize) -> CMatrix {
    let n = d * d;
    CMatrix::from_fn(n, n, |r, c| {
        let (i, j) = (r / d, r % d);
        let (ip, jp) = (c / d, c % d);
        m[(i * d + ip, j * d + jp)]
    })
}

/// Maps a two-qubit Liouville (or Choi) index `(k1 k2, k1' k2')` to
/// `(k1 k1', k2 k2')`.
pub fn subsystem_index(standard: usize) -> usize {
    let (k, kp) = (standard / 4, standard % 4);
    let (k1, k2) = (k / 2, k % 2);
    let (k1p, k2p) = (kp / 2, kp % 2);
    (k1 * 2 + k1p) * 4 + (k2 * 2 + k2p)
}

/// Inverse of [`subsystem_index`].
pub fn standard_index(subsystem: usize) -> usize {
    (0..16).find(|&s| subsystem_index(s) == subsystem).expect("index in range")
}

fn permute_two_qubit(m: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(16, 16);
    for r in 0..16 {
        for c in 0..16 {
            out[(subsystem_index(r), subsystem_index(c))] = m[(r, c)];
        }
    }
    out
}

fn unpermute_two_qubit(m: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(16, 16);
    for r in 0..16 {
        for c in 0..16 {
            out[(r, c)] = m[(subsystem_index(r), subsystem_index(c))];
        }
    }
    out
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Superoperator> for &Superoperator {
            type Output = Superoperator;

            /// Panics if the dimensions differ.
            fn $method(self, rhs: &Superoperator) -> Superoperator {
                assert_eq!(self.dim, rhs.dim, "superoperator dimension mismatch");
                Superoperator { dim: self.dim, matrix: &self.matrix $op &rhs.matrix }
            }
        }

        impl $trait<Superoperator> for Superoperator {
            type Output = Superoperator;

            fn $method(self, rhs: Superoperator) -> Superoperator {
                (&self).$method(&rhs)
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);

impl Neg for &Superoperator {
    type Output = Superoperator;

    fn neg(self) -> Superoperator {
        Superoperator { dim: self.dim, matrix: -&self.matrix }
    }
}

/// Choi matrix indexed by operator pairs `A_k = |k⟩⟨k'|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiMatrix {
    dim: usize,
    matrix: CMatrix,
}

impl ChoiMatrix {
    pub fn new(dim: usize, matrix: CMatrix) -> Result<Self> {
        Superoperator::new(dim, matrix).map(|s| Self { dim: s.dim, matrix: s.matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.matrix - self.matrix.adjoint())) <= tol
    }

    /// Smallest eigenvalue of the Hermitian part; negative values flag a
    /// map that is not completely positive.
    pub fn min_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(&self.matrix)
    }

    /// Trace over the output index, `Σ_i X[(i,j),(i,j')]`. Equals the
    /// identity for trace-preserving maps.
    pub fn output_trace(&self) -> CMatrix {
        let d = self.dim;
        CMatrix::from_fn(d, d, |j, jp| (0..d).map(|i| self.matrix[(i * d + j, i * d + jp)]).sum())
    }
}

/// Reduced single-qubit factors of a two-qubit process plus the correlated
/// remainder.
#[derive(Clone, Debug)]
pub struct BipartiteFactors {
    pub first: ChoiMatrix,
    pub second: ChoiMatrix,
    pub correlated: ChoiMatrix,
}

/// Choi matrix of the product of two qubit processes, in the standard
/// two-qubit indexing.
pub fn choi_product(first: &ChoiMatrix, second: &ChoiMatrix) -> Result<ChoiMatrix> {
    for x in [first, second] {
        if x.dim != 2 {
            return Err(Error::UnsupportedDimension(x.dim));
        }
    }
    let grouped = first.matrix.kronecker(&second.matrix);
    Ok(ChoiMatrix { dim: 4, matrix: unpermute_two_qubit(&grouped) })
}

/// Splits a two-qubit Choi matrix into normalized partial traces over each
/// qubit and the remainder `x − x1⊗x2`.
pub fn factorize_bipartite(x: &ChoiMatrix) -> Result<BipartiteFactors> {
    if x.dim != 4 {
        return Err(Error::UnsupportedDimension(x.dim));
    }
    let grouped = permute_two_qubit(&x.matrix);
    let mut first = CMatrix::zeros(4, 4);
    let mut second = CMatrix::zeros(4, 4);
    for a in 0..4 {
        for b in 0..4 {
            for k in 0..4 {
                first[(a, b)] += grouped[(a * 4 + k, b * 4 + k)];
                second[(a, b)] += grouped[(k * 4 + a, k * 4 + b)];
            }
        }
    }
    let first = ChoiMatrix { dim: 2, matrix: first.map(|z| z * 0.5) };
    let second = ChoiMatrix { dim: 2, matrix: second.map(|z| z * 0.5) };
    let product = choi_product(&first, &second)?;
    let correlated = ChoiMatrix { dim: 4, matrix: &x.matrix - &product.matrix };
    Ok(BipartiteFactors { first, second, correlated })
}

/// Affine action of a qubit map on Bloch vectors, `r ↦ M r + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochAffine {
    pub m: Matrix3<f64>,
    pub c: Vector3<f64>,
}

impl BlochAffine {
    pub fn apply(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.m * r + self.c
    }

    /// Volume of the image of the Bloch ball relative to the ball itself.
    pub fn volume(&self) -> f64 {
        self.m.determinant()
    }

    /// Rebuilds the trace- and Hermiticity-preserving qubit map.
    pub fn to_superoperator(&self) -> Superoperator {
        // Images of the operator basis {I, σx, σy, σz}.
        let mut images = Vec::with_capacity(4);
        let mut img_id = CMatrix::identity(2, 2);
        for a in Axis::ALL {
            img_id += a.pauli().map(|z| z * self.c[a.index()]);
        }
        images.push(img_id);
        for a in Axis::ALL {
            let mut img = CMatrix::zeros(2, 2);
            for b in Axis::ALL {
                img += b.pauli().map(|z| z * self.m[(b.index(), a.index())]);
            }
            images.push(img);
        }
        let basis: Vec<CMatrix> = std::iter::once(CMatrix::identity(2, 2))
            .chain(Axis::ALL.iter().map(|a| a.pauli()))
            .collect();
        let mut matrix = CMatrix::zeros(4, 4);
        for j in 0..2 {
            for jp in 0..2 {
                // |j⟩⟨j'| = Σ_μ Tr(P_μ |j⟩⟨j'|)/2 · P_μ
                let mut out = CMatrix::zeros(2, 2);
                for (p, img) in basis.iter().zip(&images) {
                    let coeff = p[(jp, j)] * 0.5;
                    out += img.map(|z| z * coeff);
                }
                matrix.set_column(j * 2 + jp, &vectorize(&out));
            }
        }
        Superoperator { dim: 2, matrix }
    }
}

/// Bloch affine decomposition of a qubit map.
pub fn bloch_affine(s: &Superoperator) -> Result<BlochAffine> {
    if s.dim != 2 {
        return Err(Error::UnsupportedDimension(s.dim));
    }
    let half_id = CMatrix::identity(2, 2).map(|z| z * 0.5);
    let c = bloch_of(&s.apply_operator(&half_id)?);
    let mut m = Matrix3::zeros();
    for a in Axis::ALL {
        let col = bloch_of(&s.apply_operator(&a.pauli().map(|z| z * 0.5))?);
        m.set_column(a.index(), &col);
    }
    Ok(BlochAffine { m, c })
}

/// Qubit map that multiplies the coherence `ρ01` by `exp(−decay + i·phase)`
/// and leaves populations untouched.
pub fn dephasing_map(decay: f64, phase: f64) -> Superoperator {
    let f = C64::from_polar((-decay).exp(), phase);
    let mut m = CMatrix::zeros(4, 4);
    m[(0, 0)] = ONE;
    m[(1, 1)] = f;
    m[(2, 2)] = f.conj();
    m[(3, 3)] = ONE;
    Superoperator { dim: 2, matrix: m }
}

/// Random CPTP map with `n_kraus` Kraus operators taken from a Haar-like
/// isometry (QR of a complex Gaussian matrix).
pub fn random_channel<R: Rng + ?Sized>(dim: usize, n_kraus: usize, rng: &mut R) -> Superoperator {
    let rows = dim * n_kraus.max(1);
    let g = CMatrix::from_fn(rows, dim, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let q = g.qr().q();
    let mut matrix = CMatrix::zeros(dim * dim, dim * dim);
    for k in 0..n_kraus.max(1) {
        let kraus = q.rows(k * dim, dim).into_owned();
        matrix += kraus.kronecker(&kraus.map(|z| z.conj()));
    }
    Superoperator { dim, matrix }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plus_state() -> DensityMatrix {
        let s = 0.5f64.sqrt();
        DensityMatrix::from_ket(&DVector::from_vec(vec![C64::from(s), C64::from(s)])).unwrap()
    }

    #[test]
    fn identity_leaves_state_alone() {
        let rho = plus_state();
        let out = Superoperator::identity(2).apply(&rho).unwrap();
        assert_eq!(out, rho);
    }

    #[test]
    fn full_dephasing_kills_coherence() {
        let out = dephasing_map(f64::INFINITY, 0.0).apply(&plus_state()).unwrap();
        assert_relative_eq!(out.matrix()[(0, 0)].re, 0.5);
        assert_relative_eq!(out.matrix()[(1, 1)].re, 0.5);
        assert_eq!(out.matrix()[(0, 1)], ZERO);
    }

    #[test]
    fn dephasing_map_scales_coherence() {
        let out = dephasing_map(0.5, 0.4).apply(&plus_state()).unwrap();
        let expected = C64::from_polar(0.5 * (-0.5f64).exp(), 0.4);
        assert!((out.matrix()[(0, 1)] - expected).norm() < 1e-15);
    }

    #[test]
    fn apply_rejects_wrong_dimension() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(matches!(
            Superoperator::identity(2).apply(&rho),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dephasing_maps_compose_entrywise() {
        let a = dephasing_map(0.3, 0.1);
        let b = dephasing_map(0.2, -0.7);
        let ab = a.compose(&b).unwrap();
        assert!(ab.max_abs_diff(&dephasing_map(0.5, -0.6)) < 1e-15);
        assert_eq!(Superoperator::identity(2).compose(&a).unwrap(), a);
    }

    #[test]
    fn unitary_map_matches_conjugation() {
        let h = Axis::X.pauli().map(|z| z * 0.3) + Axis::Z.pauli().map(|z| z * 0.7);
        let u = h.map(|z| -I * z).exp();
        let rho = plus_state();
        let direct = &u * rho.matrix() * u.adjoint();
        let via = Superoperator::from_unitary(&u).apply(&rho).unwrap();
        assert!(max_abs(&(direct - via.matrix())) < 1e-14);
    }

    #[test]
    fn liouvillian_generates_unitary() {
        let h = Axis::Y.pauli().map(|z| z * 0.4);
        let l = Superoperator::liouvillian(&h).scale(1.3);
        let u = h.map(|z| -I * z * 1.3).exp();
        assert!(l.exp().max_abs_diff(&Superoperator::from_unitary(&u)) < 1e-13);
    }

    #[test]
    fn identity_choi_is_scaled_bell_projector() {
        let x = Superoperator::identity(2).to_choi();
        assert_relative_eq!(x.trace().re, 2.0);
        // |Φ⟩⟨Φ|·2 with |Φ⟩ = (|00⟩+|11⟩)/√2 has ones at the corners of {0,3}.
        for r in 0..4 {
            for c in 0..4 {
                let expected = if (r == 0 || r == 3) && (c == 0 || c == 3) { 1.0 } else { 0.0 };
                assert_relative_eq!(x.matrix()[(r, c)].re, expected);
            }
        }
    }

    #[test]
    fn dephasing_choi_has_four_nonzeros() {
        let x = dephasing_map(0.5, 0.2).to_choi();
        let nonzero: Vec<(usize, usize)> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .filter(|&(r, c)| x.matrix()[(r, c)].norm() > 0.0)
            .collect();
        assert_eq!(nonzero, vec![(0, 0), (0, 3), (3, 0), (3, 3)]);
    }

    #[test]
    fn frobenius_norm_values() {
        assert_relative_eq!(Superoperator::identity(2).frobenius_norm(), 2.0);
        assert_eq!(Superoperator::zeros(2).frobenius_norm(), 0.0);
    }

    #[test]
    fn bloch_of_identity_map() {
        let b = bloch_affine(&Superoperator::identity(2)).unwrap();
        assert_eq!(b.m, Matrix3::identity());
        assert_eq!(b.c, Vector3::zeros());
    }

    #[test]
    fn bloch_of_dephasing_map_is_scaled_rotation() {
        let (decay, angle) = (0.5, 0.2);
        // ρ01 picks up e^{iφ}; the Bloch vector rotates by −φ about z.
        let b = bloch_affine(&dephasing_map(decay, angle)).unwrap();
        let f = (-decay).exp();
        assert_relative_eq!(b.m[(0, 0)], f * angle.cos(), epsilon = 1e-15);
        assert_relative_eq!(b.m[(0, 1)], f * angle.sin(), epsilon = 1e-15);
        assert_relative_eq!(b.m[(1, 0)], -f * angle.sin(), epsilon = 1e-15);
        assert_relative_eq!(b.m[(1, 1)], f * angle.cos(), epsilon = 1e-15);
        assert_relative_eq!(b.m[(2, 2)], 1.0);
        assert_eq!(b.c, Vector3::zeros());
    }

    #[test]
    fn amplitude_damping_round_trip() {
        let g: f64 = 0.3;
        let k0 = CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, C64::from((1.0 - g).sqrt())]);
        let k1 = CMatrix::from_row_slice(2, 2, &[ZERO, C64::from(g.sqrt()), ZERO, ZERO]);
        let s = Superoperator::sandwich(&k0, &k0.adjoint()) + Superoperator::sandwich(&k1, &k1.adjoint());
        let b = bloch_affine(&s).unwrap();
        assert_relative_eq!(b.c[2], g, epsilon = 1e-15);
        assert!(b.to_superoperator().max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn subsystem_index_matches_hand_labels() {
        // 1-based position 6 in the grouped order is |00⟩⟨11|.
        assert_eq!(standard_index(5), 3);
        // |01⟩⟨10| and |10⟩⟨01|.
        assert_eq!(standard_index(6), 6);
        assert_eq!(standard_index(9), 9);
        assert_eq!(standard_index(10), 12);
    }

    #[test]
    fn factorize_identity_channel() {
        let f = factorize_bipartite(&Superoperator::identity(4).to_choi()).unwrap();
        let id = Superoperator::identity(2).to_choi();
        assert!(max_abs(&(f.first.matrix() - id.matrix())) < 1e-15);
        assert!(max_abs(&(f.second.matrix() - id.matrix())) < 1e-15);
        assert!(f.correlated.matrix().norm() < 1e-15);
    }

    #[test]
    fn product_choi_matches_superoperator_kronecker() {
        let a = dephasing_map(0.3, 0.2);
        let b = BlochAffine {
            m: Matrix3::from_diagonal(&Vector3::new(0.8, 0.8, 0.6)),
            c: Vector3::new(0.0, 0.0, 0.4),
        }
        .to_superoperator();
        let prod = choi_product(&a.to_choi(), &b.to_choi()).unwrap();
        let s = Superoperator::from_choi(&prod);
        let grouped = a.matrix().kronecker(b.matrix());
        assert!(max_abs(&(s.to_subsystem_order().unwrap() - grouped)) < 1e-15);
    }

    #[test]
    fn density_matrix_validation() {
        let bad = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ZERO]);
        assert!(DensityMatrix::new(bad).is_err());
        let r = Vector3::new(0.1, -0.2, 0.3);
        let rho = DensityMatrix::from_bloch(&r);
        assert!((rho.bloch().unwrap() - r).norm() < 1e-15);
    }

    #[test]
    fn random_channel_is_cptp() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for d in [2, 4] {
            let s = random_channel(d, 3, &mut rng);
            assert!(s.is_trace_preserving(1e-12));
            assert!(s.to_choi().min_eigenvalue() > -1e-12);
        }
    }
}
