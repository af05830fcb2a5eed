//! Dense complex-matrix state representation and the superoperators shared by
//! the dynamics, filter and Lyapunov modules.
//!
//! All matrices are `n x n` [`CMatrix`] values. Types are immutable after
//! construction and every operation is a pure function.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const STATE_HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const PSD_TOL: f64 = 1e-9;
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

/// States whose smallest eigenvalue is above `-FAST_PATH_SHIFT` skip the
/// eigenvalue clip in [`project_to_physical`].
const FAST_PATH_SHIFT: f64 = 1e-12;
const MIN_TRACE: f64 = 1e-12;

pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

/// Largest `|m_ij - conj(m_ji)|`.
pub fn max_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

fn check_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Hermitian eigen-decomposition with eigenvalues in descending order.
fn sorted_eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn eigenvalues_hermitian(m: &CMatrix) -> Vec<f64> {
    sorted_eigh(&hermitize(m)).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

impl HermitianOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        check_square(&matrix)?;
        let asym = max_asymmetry(&matrix);
        if asym > HERMITIAN_TOL {
            return Err(Error::NotHermitian { max_asymmetry: asym });
        }
        Ok(Self {
            matrix: hermitize(&matrix),
        })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            matrix: CMatrix::from_fn(n, n, |i, j| if i == j { c(diag[i]) } else { c(0.0) }),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

/// A valid density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        check_square(&matrix)?;
        let rho = Self { matrix };
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            matrix: CMatrix::identity(n, n) * c(1.0 / n as f64),
        }
    }

    /// Rank-one state `|psi><psi|` for a normalized copy of `psi`.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let n = psi.len();
        Ok(Self {
            matrix: CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj() / (norm * norm)),
        })
    }

    /// Basis state `|k><k|`.
    pub fn basis(n: usize, k: usize) -> Self {
        Self {
            matrix: CMatrix::from_fn(n, n, |i, j| if i == k && j == k { c(1.0) } else { c(0.0) }),
        }
    }

    pub fn from_diagonal(p: &[f64]) -> Result<Self> {
        let n = p.len();
        Self::new(CMatrix::from_fn(n, n, |i, j| if i == j { c(p[i]) } else { c(0.0) }))
    }

    pub fn validate(&self) -> Result<()> {
        let asym = max_asymmetry(&self.matrix);
        if asym > STATE_HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("asymmetry {asym:e}")));
        }
        let tr = trace(&self.matrix);
        if (tr - c(1.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min_eig = eigenvalues_hermitian(&self.matrix)
            .last()
            .copied()
            .unwrap_or(0.0);
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!("eigenvalue {min_eig:e}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.matrix, &self.matrix).re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigenvalues_hermitian(&self.matrix)
    }
}

/// Distinct eigenvalues (descending) of a Hermitian operator with the
/// orthogonal projectors onto their eigenspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    projectors: Vec<CMatrix>,
    multiplicities: Vec<usize>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.projectors.first().map_or(0, |p| p.nrows())
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    /// `sum_k lambda_k Pi_k`.
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.dim();
        self.eigenvalues
            .iter()
            .zip(&self.projectors)
            .fold(CMatrix::zeros(n, n), |acc, (&l, p)| acc + p * c(l))
    }

    /// State `sum_k p_k Pi_k / m_k`, diagonal in the eigenbasis.
    pub fn state_from_populations(&self, p: &PopulationVector) -> Result<DensityMatrix> {
        check_dims(self.len(), p.len())?;
        let n = self.dim();
        let m = self
            .projectors
            .iter()
            .zip(&self.multiplicities)
            .zip(p.values())
            .fold(CMatrix::zeros(n, n), |acc, ((proj, &mult), &pk)| {
                acc + proj * c(pk / mult as f64)
            });
        DensityMatrix::new(m)
    }

    /// `Pi_k / m_k`: the maximally mixed state of eigenspace `k`.
    pub fn eigenspace_state(&self, k: usize) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(
            &self.projectors[k] * c(1.0 / self.multiplicities[k] as f64),
        )
    }
}

pub fn spectral_decomposition(
    l: &HermitianOperator,
    degeneracy_tolerance: f64,
) -> Result<SpectralDecomposition> {
    let n = l.dim();
    if n == 0 {
        return Err(Error::InvalidParameter {
            field: "L",
            reason: "empty operator".into(),
        });
    }
    let (values, vectors) = sorted_eigh(l.matrix());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if (values[*g.last().unwrap()] - v).abs() <= degeneracy_tolerance => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let mut eigenvalues = Vec::with_capacity(groups.len());
    let mut projectors = Vec::with_capacity(groups.len());
    let mut multiplicities = Vec::with_capacity(groups.len());
    for g in &groups {
        eigenvalues.push(g.iter().map(|&i| values[i]).sum::<f64>() / g.len() as f64);
        let mut proj = CMatrix::zeros(n, n);
        for &col in g {
            let v = vectors.column(col);
            proj += v * v.adjoint();
        }
        projectors.push(hermitize(&proj));
        multiplicities.push(g.len());
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        projectors,
        multiplicities,
    })
}

/// Eigenspace populations `p_k`, each in `[0, 1]`, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector {
    values: Vec<f64>,
}

impl PopulationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidState("empty population vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < -TRACE_TOL) {
            return Err(Error::InvalidState(format!("population {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("populations sum to {sum}")));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    /// Clamp negatives to zero and rescale the sum to one.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let clipped: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        let sum: f64 = clipped.iter().sum();
        if !(sum > MIN_TRACE) || !sum.is_finite() {
            return Err(Error::UnrecoverableState { trace: sum });
        }
        Ok(Self {
            values: clipped.into_iter().map(|v| v / sum).collect(),
        })
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            values: vec![1.0 / d as f64; d],
        }
    }

    pub fn vertex(d: usize, k: usize) -> Self {
        let mut values = vec![0.0; d];
        values[k] = 1.0;
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// `sum_k lambda_k p_k`.
    pub fn mean_eigenvalue(&self, eigenvalues: &[f64]) -> f64 {
        self.values.iter().zip(eigenvalues).map(|(p, l)| p * l).sum()
    }
}

pub fn populations(rho: &DensityMatrix, dec: &SpectralDecomposition) -> Result<PopulationVector> {
    check_dims(dec.dim(), rho.dim())?;
    Ok(populations_unchecked(rho.matrix(), dec))
}

pub(crate) fn populations_unchecked(rho: &CMatrix, dec: &SpectralDecomposition) -> PopulationVector {
    PopulationVector {
        values: dec
            .projectors
            .iter()
            .map(|p| trace_product(rho, p).re.clamp(0.0, 1.0))
            .collect(),
    }
}

/// `D_A(rho) = A rho A^+ - (A^+ A rho + rho A^+ A) / 2`.
pub fn dissipator(a: &CMatrix, rho: &CMatrix) -> Result<CMatrix> {
    check_square(a)?;
    check_dims(a.nrows(), rho.nrows())?;
    check_dims(a.nrows(), rho.ncols())?;
    let a_dag = a.adjoint();
    let ada = &a_dag * a;
    Ok(a * rho * &a_dag - (&ada * rho + rho * &ada) * c(0.5))
}

/// Dissipator of a Hermitian operator given its precomputed square.
pub(crate) fn dissipator_hermitian(a: &CMatrix, a_sq: &CMatrix, rho: &CMatrix) -> CMatrix {
    a * rho * a - (a_sq * rho + rho * a_sq) * c(0.5)
}

/// `M_L(rho) = L rho + rho L - tr(rho (L + L^+)) rho`.
pub fn innovation_superop(l: &HermitianOperator, rho: &CMatrix) -> Result<CMatrix> {
    check_dims(l.dim(), rho.nrows())?;
    check_dims(l.dim(), rho.ncols())?;
    Ok(innovation_hermitian(l.matrix(), rho))
}

pub(crate) fn innovation_hermitian(l: &CMatrix, rho: &CMatrix) -> CMatrix {
    let expect = 2.0 * trace_product(l, rho).re;
    l * rho + rho * l - rho * c(expect)
}

/// Precomputed eigenbasis of `H` for exact evaluation of `exp(-i H x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryPropagator {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
}

impl UnitaryPropagator {
    pub fn new(h: &HermitianOperator) -> Self {
        let (eigenvalues, eigenvectors) = sorted_eigh(h.matrix());
        Self {
            eigenvalues,
            eigenvectors,
        }
    }

    /// `exp(-i H x)`.
    pub fn unitary(&self, x: f64) -> CMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &e) in self.eigenvalues.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -e * x);
            for i in 0..n {
                scaled[(i, j)] *= phase;
            }
        }
        scaled * v.adjoint()
    }

    /// `exp(-i H x) m exp(i H x)`.
    pub fn conjugate(&self, x: f64, m: &CMatrix) -> CMatrix {
        if x == 0.0 {
            return m.clone();
        }
        let u = self.unitary(x);
        &u * m * u.adjoint()
    }
}

pub fn unitary_conjugate(h: &HermitianOperator, x: f64, rho: &DensityMatrix) -> Result<DensityMatrix> {
    check_dims(h.dim(), rho.dim())?;
    let out = UnitaryPropagator::new(h).conjugate(x, rho.matrix());
    Ok(DensityMatrix::from_matrix_unchecked(hermitize(&out)))
}

/// Whether `m + shift I` (Hermitian) admits a Cholesky factorization, i.e.
/// is positive definite.
fn cholesky_succeeds(m: &CMatrix, shift: f64) -> bool {
    let n = m.nrows();
    let mut lower = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)].re + shift;
        for k in 0..j {
            diag -= lower[(j, k)].norm_sqr();
        }
        if !(diag > 0.0) {
            return false;
        }
        let root = diag.sqrt();
        lower[(j, j)] = c(root);
        for i in j + 1..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= lower[(i, k)] * lower[(j, k)].conj();
            }
            lower[(i, j)] = v / root;
        }
    }
    true
}

/// Repair numerical drift: Hermitize, clip negative eigenvalues, renormalize
/// the trace.
pub fn project_to_physical(m: &CMatrix) -> Result<DensityMatrix> {
    check_square(m)?;
    let herm = hermitize(m);
    let n = herm.nrows();
    let repaired = if cholesky_succeeds(&herm, FAST_PATH_SHIFT) {
        herm
    } else {
        let (values, vectors) = sorted_eigh(&herm);
        let mut scaled = vectors.clone();
        for (j, &v) in values.iter().enumerate() {
            let w = c(v.max(0.0));
            for i in 0..n {
                scaled[(i, j)] *= w;
            }
        }
        hermitize(&(scaled * vectors.adjoint()))
    };
    let tr = trace(&repaired).re;
    if !(tr > MIN_TRACE) || !tr.is_finite() {
        return Err(Error::UnrecoverableState { trace: tr });
    }
    Ok(DensityMatrix::from_matrix_unchecked(repaired * c(1.0 / tr)))
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spin2_l() -> HermitianOperator {
        HermitianOperator::from_real_diagonal(&[2.0, 1.0, 0.0, -1.0, -2.0])
    }

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn spin2_decomposition_is_canonical_basis() {
        let dec = spectral_decomposition(&spin2_l(), DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(dec.eigenvalues(), &[2.0, 1.0, 0.0, -1.0, -2.0]);
        for (k, p) in dec.projectors().iter().enumerate() {
            assert!(max_abs(&(p - DensityMatrix::basis(5, k).matrix())) < 1e-12);
        }
        assert_eq!(dec.multiplicities(), &[1; 5]);
    }

    #[test]
    fn scalar_operator_has_single_eigenspace() {
        let l = HermitianOperator::new(CMatrix::identity(4, 4) * c(3.0)).unwrap();
        let dec = spectral_decomposition(&l, DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(dec.len(), 1);
        assert!((dec.eigenvalues()[0] - 3.0).abs() < 1e-12);
        assert!(max_abs(&(&dec.projectors()[0] - CMatrix::identity(4, 4))) < 1e-10);
        assert_eq!(dec.multiplicities(), &[4]);
    }

    #[test]
    fn non_hermitian_rejected_with_asymmetry() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0);
        match HermitianOperator::new(m) {
            Err(Error::NotHermitian { max_asymmetry }) => assert!((max_asymmetry - 1.0).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_eigenvalues_grouped() {
        let l = HermitianOperator::from_real_diagonal(&[1.0, 0.0, 1.0 + 1e-10, 0.0]);
        let dec = spectral_decomposition(&l, DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(dec.len(), 2);
        assert_eq!(dec.multiplicities(), &[2, 2]);
    }

    #[test]
    fn populations_of_projector_and_mixed_state() {
        let dec = spectral_decomposition(&spin2_l(), DEFAULT_DEGENERACY_TOL).unwrap();
        for j in 0..5 {
            let p = populations(&DensityMatrix::basis(5, j), &dec).unwrap();
            for k in 0..5 {
                assert_eq!(p.get(k), if k == j { 1.0 } else { 0.0 });
            }
        }
        let p = populations(&DensityMatrix::maximally_mixed(5), &dec).unwrap();
        for v in p.values() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let err = populations(&DensityMatrix::maximally_mixed(3), &dec).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 5, found: 3 });
    }

    #[test]
    fn superoperators_vanish_on_eigenprojectors() {
        let l = spin2_l();
        for k in 0..5 {
            let pk = DensityMatrix::basis(5, k);
            assert!(max_abs(&dissipator(l.matrix(), pk.matrix()).unwrap()) < 1e-14);
            assert!(max_abs(&innovation_superop(&l, pk.matrix()).unwrap()) < 1e-14);
        }
        let mixed = DensityMatrix::maximally_mixed(5);
        assert!(max_abs(&dissipator(l.matrix(), mixed.matrix()).unwrap()) < 1e-14);
    }

    #[test]
    fn innovation_of_mixed_state_is_two_fifths_l() {
        let l = spin2_l();
        let m = innovation_superop(&l, DensityMatrix::maximally_mixed(5).matrix()).unwrap();
        assert!(max_abs(&(m - l.matrix() * c(0.4))) < 1e-15);
    }

    #[test]
    fn superoperators_are_traceless_and_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = random_complex(&mut rng, 4);
            let rho = random_state(&mut rng, 4);
            let d = dissipator(&a, rho.matrix()).unwrap();
            assert!(trace(&d).norm() < 1e-11);
            assert!(max_asymmetry(&d) < 1e-10);
            let l = random_hermitian(&mut rng, 4);
            let m = innovation_superop(&l, rho.matrix()).unwrap();
            assert!(trace(&m).norm() < 1e-11);
            assert!(max_asymmetry(&m) < 1e-10);
        }
        assert!(dissipator(&CMatrix::zeros(3, 3), DensityMatrix::maximally_mixed(2).matrix()).is_err());
    }

    #[test]
    fn unitary_conjugation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_state(&mut rng, 4);
        let h = random_hermitian(&mut rng, 4);
        let same = unitary_conjugate(&h, 0.0, &rho).unwrap();
        assert!(max_abs(&(same.matrix() - rho.matrix())) < 1e-15);

        let diag_h = HermitianOperator::from_real_diagonal(&[0.3, -1.0, 2.0, 0.1]);
        let diag_rho = DensityMatrix::from_diagonal(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = unitary_conjugate(&diag_h, 1.7, &diag_rho).unwrap();
        assert!(max_abs(&(out.matrix() - diag_rho.matrix())) < 1e-14);

        let out = unitary_conjugate(&h, 0.83, &rho).unwrap();
        assert!((out.purity() - rho.purity()).abs() < 1e-10);
        assert!((trace(out.matrix()) - c(1.0)).norm() < 1e-9);
        let (a, b) = (out.eigenvalues(), rho.eigenvalues());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_clips_and_renormalizes() {
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.01), c(-0.01)]));
        let out = project_to_physical(&m).unwrap();
        assert!(max_abs(&(out.matrix() - DensityMatrix::basis(2, 0).matrix())) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_state(&mut rng, 5);
        let again = project_to_physical(rho.matrix()).unwrap();
        assert!(max_abs(&(again.matrix() - rho.matrix())) < 1e-12);

        let zero = CMatrix::zeros(3, 3);
        assert!(matches!(project_to_physical(&zero), Err(Error::UnrecoverableState { .. })));
        let neg = CMatrix::identity(3, 3) * c(-1.0);
        assert!(matches!(project_to_physical(&neg), Err(Error::UnrecoverableState { .. })));
    }

    #[test]
    fn projection_repairs_perturbed_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let rho = DensityMatrix::basis(4, 1);
            let noise = random_complex(&mut rng, 4) * c(0.05);
            let out = project_to_physical(&(rho.matrix() + noise)).unwrap();
            out.validate().unwrap();
        }
    }

    #[test]
    fn cholesky_check_detects_indefinite_complex_matrix() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[c(0.5), Complex64::new(0.0, 0.6), Complex64::new(0.0, -0.6), c(0.5)],
        );
        assert!(!cholesky_succeeds(&m, 0.0));
        assert!(cholesky_succeeds(&(m * c(0.5) + CMatrix::identity(2, 2) * c(0.25)), 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn decomposition_reconstructs(seed in any::<u64>(), n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random_hermitian(&mut rng, n);
            let dec = spectral_decomposition(&l, DEFAULT_DEGENERACY_TOL).unwrap();
            prop_assert!(max_abs(&(dec.reconstruct() - l.matrix())) < 1e-10);
            let id = dec.projectors().iter().fold(CMatrix::zeros(n, n), |a, p| a + p);
            prop_assert!(max_abs(&(id - CMatrix::identity(n, n))) < 1e-10);
            for (i, p) in dec.projectors().iter().enumerate() {
                prop_assert!(max_abs(&(p * p - p)) < 1e-10);
                for q in dec.projectors().iter().skip(i + 1) {
                    prop_assert!(max_abs(&(p * q)) < 1e-10);
                }
            }
            let rho = random_state(&mut rng, n);
            let p = populations(&rho, &dec).unwrap();
            prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn conjugation_composes(seed in any::<u64>(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hermitian(&mut rng, 4);
            let rho = random_state(&mut rng, 4);
            let two_step = unitary_conjugate(&h, y, &unitary_conjugate(&h, x, &rho).unwrap()).unwrap();
            let one_step = unitary_conjugate(&h, x + y, &rho).unwrap();
            prop_assert!(max_abs(&(two_step.matrix() - one_step.matrix())) < 1e-9);
        }
    }
}
