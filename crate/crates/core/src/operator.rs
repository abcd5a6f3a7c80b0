//! Dense Hermitian linear algebra on small joint Hilbert spaces.
//!
//! Everything downstream (Hamiltonians, conserved charges, density matrices,
//! propagators) is an [`OperatorMatrix`]. Operator functions are evaluated
//! through the spectral decomposition returned by [`eigh`], so `f(A)` is
//! always `V f(Λ) V†`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest joint dimension any constructor will produce.
pub const DEFAULT_DIM_CAP: usize = 4096;

/// Relative tolerance used by the Hermitian and real-in-basis flags.
pub const FLAG_TOL: f64 = 1e-12;

/// Eigenvalues below `CLAMP_RATIO * λ_max` are raised to that floor before
/// logarithms or fractional powers are taken.
pub const CLAMP_RATIO: f64 = 1e-14;

const EIGEN_MAX_ITER: usize = 100_000;

/// Which subsystem a local operator lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::A => f.write_str("A"),
            Side::B => f.write_str("B"),
        }
    }
}

/// Square complex matrix with Hermitian and real-in-basis flags.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    entries: DMatrix<C64>,
    hermitian: bool,
    real_in_basis: bool,
}

fn max_norm(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn max_imag(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

fn hermitian_residual(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut r: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

impl OperatorMatrix {
    fn check_square(entries: &DMatrix<C64>) -> Result<()> {
        if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square with dim >= 1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(())
    }

    /// A general (not necessarily Hermitian) operator. The real-in-basis flag
    /// is detected; when set, residual imaginary parts are dropped.
    pub fn new(mut entries: DMatrix<C64>) -> Result<Self> {
        Self::check_square(&entries)?;
        let scale = max_norm(&entries);
        let real_in_basis = max_imag(&entries) <= FLAG_TOL * scale;
        if real_in_basis {
            entries.iter_mut().for_each(|z| z.im = 0.0);
        }
        Ok(Self { entries, hermitian: false, real_in_basis })
    }

    /// A Hermitian operator, symmetrized as `(A + A†)/2`.
    ///
    /// Fails when the anti-Hermitian part exceeds `FLAG_TOL` relative to the
    /// largest entry.
    pub fn hermitian(entries: DMatrix<C64>) -> Result<Self> {
        Self::check_square(&entries)?;
        let scale = max_norm(&entries);
        let residual = hermitian_residual(&entries);
        let allowed = FLAG_TOL * scale;
        if residual > allowed {
            return Err(Error::NotHermitian { residual, allowed });
        }
        let sym = (&entries + entries.adjoint()) * C64::new(0.5, 0.0);
        let mut op = Self::new(sym)?;
        op.hermitian = true;
        Ok(op)
    }

    pub fn from_real(entries: DMatrix<f64>) -> Result<Self> {
        Self::new(entries.map(|x| C64::new(x, 0.0)))
    }

    pub fn from_real_symmetric(entries: DMatrix<f64>) -> Result<Self> {
        Self::hermitian(entries.map(|x| C64::new(x, 0.0)))
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim.max(1)])
    }

    pub fn zeros(dim: usize) -> Self {
        Self::diagonal(&vec![0.0; dim.max(1)])
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len().max(1);
        let mut m = DMatrix::<C64>::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        Self { entries: m, hermitian: true, real_in_basis: true }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_real(&self) -> bool {
        self.real_in_basis
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        max_norm(&self.entries)
    }

    /// Largest imaginary part of any entry in the computational basis.
    pub fn imag_residual(&self) -> f64 {
        max_imag(&self.entries)
    }

    pub fn hermitian_residual(&self) -> f64 {
        hermitian_residual(&self.entries)
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self { entries: self.entries.adjoint(), ..*self }
    }

    pub fn transpose(&self) -> Self {
        Self { entries: self.entries.transpose(), ..*self }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { entries: &self.entries * C64::new(factor, 0.0), ..*self }
    }

    /// Tr[self · other] without forming the product.
    pub fn trace_product(&self, other: &OperatorMatrix) -> C64 {
        let a = &self.entries;
        let b = &other.entries;
        let n = a.nrows();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += a[(i, k)] * b[(k, i)];
            }
        }
        acc
    }

    /// Maximum entrywise distance to another operator of the same dimension.
    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        self.entries.iter().zip(other.entries.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
    }

    fn combine(&self, other: &OperatorMatrix, entries: DMatrix<C64>) -> Self {
        Self {
            entries,
            hermitian: self.hermitian && other.hermitian,
            real_in_basis: self.real_in_basis && other.real_in_basis,
        }
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        self.combine(rhs, &self.entries + &rhs.entries)
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        self.combine(rhs, &self.entries - &rhs.entries)
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        OperatorMatrix {
            entries: &self.entries * &rhs.entries,
            hermitian: false,
            real_in_basis: self.real_in_basis && rhs.real_in_basis,
        }
    }
}

/// Ascending spectrum with a unitary matrix of eigenvectors (as columns).
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<C64>,
    pub source_dim: usize,
}

impl EigenSystem {
    /// `V f(Λ) V†` as a Hermitian operator.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<OperatorMatrix> {
        let values = self
            .eigenvalues
            .iter()
            .map(|&x| {
                let y = f(x);
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::Domain(format!("f({x:e}) = {y}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let real = self.eigenvectors.iter().all(|z| z.im == 0.0);
        let entries = self.spectral_sum(|i| C64::new(values[i], 0.0));
        Ok(OperatorMatrix { entries: symmetrize(entries), hermitian: true, real_in_basis: real })
    }

    /// `V f(Λ) V†` for a complex-valued spectral function.
    pub fn map_complex(&self, f: impl Fn(f64) -> C64) -> Result<OperatorMatrix> {
        let values: Vec<C64> = self.eigenvalues.iter().map(|&x| f(x)).collect();
        if let Some(bad) = values.iter().find(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Domain(format!("non-finite spectral value {bad}")));
        }
        OperatorMatrix::new(self.spectral_sum(|i| values[i]))
    }

    fn spectral_sum(&self, value: impl Fn(usize) -> C64) -> DMatrix<C64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= value(j);
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// Largest eigenvalue over smallest, after clamping.
    pub fn condition_number(&self) -> f64 {
        let (clamped, _) = self.clamped();
        let max = clamped.last().copied().unwrap_or(0.0);
        let min = clamped.first().copied().unwrap_or(0.0);
        max / min
    }

    /// Eigenvalues raised to the clamp floor `CLAMP_RATIO · λ_max`, together
    /// with the number of eigenvalues that were raised.
    pub fn clamped(&self) -> (Vec<f64>, usize) {
        let max = self.eigenvalues.last().copied().unwrap_or(0.0);
        let floor = CLAMP_RATIO * max;
        let mut count = 0;
        let values = self
            .eigenvalues
            .iter()
            .map(|&x| {
                if x < floor {
                    count += 1;
                    floor
                } else {
                    x
                }
            })
            .collect();
        (values, count)
    }

    /// Applies `f` to the clamped spectrum. Requires a positive largest
    /// eigenvalue.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> Result<(OperatorMatrix, usize)> {
        let max = self.eigenvalues.last().copied().unwrap_or(0.0);
        if max <= 0.0 {
            return Err(Error::Domain(format!("spectrum has no positive eigenvalue (max {max:e})")));
        }
        let (values, count) = self.clamped();
        let clamped =
            EigenSystem { eigenvalues: values, eigenvectors: self.eigenvectors.clone(), source_dim: self.source_dim };
        Ok((clamped.map(f)?, count))
    }

    pub fn reconstruct(&self) -> OperatorMatrix {
        self.map(|x| x).expect("identity map is finite")
    }
}

fn symmetrize(m: DMatrix<C64>) -> DMatrix<C64> {
    (&m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Multiplies each column by a phase so its first non-negligible component is
/// real and positive.
fn fix_phases(vectors: &mut DMatrix<C64>) {
    for mut col in vectors.column_iter_mut() {
        let scale = col.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
        if let Some(first) = col.iter().find(|z| z.norm() > 1e-8 * scale).copied() {
            let phase = first.conj() / first.norm();
            col *= phase;
        }
    }
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
///
/// Real symmetric inputs go through the real solver and yield real
/// eigenvectors.
pub fn eigh(a: &OperatorMatrix) -> Result<EigenSystem> {
    if !a.hermitian {
        let residual = a.hermitian_residual();
        return Err(Error::NotHermitian { residual, allowed: FLAG_TOL * a.max_abs() });
    }
    let n = a.dim();
    let (values, mut vectors) = if a.real_in_basis {
        let real = a.entries.map(|z| z.re);
        let eig = SymmetricEigen::try_new(real, f64::EPSILON, EIGEN_MAX_ITER).ok_or_else(|| Error::Numerical {
            what: "real symmetric eigensolver did not converge".into(),
            residual: f64::NAN,
        })?;
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors.map(|x| C64::new(x, 0.0)))
    } else {
        let eig = SymmetricEigen::try_new(a.entries.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or_else(|| {
            Error::Numerical { what: "Hermitian eigensolver did not converge".into(), residual: f64::NAN }
        })?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let eigenvalues = order.iter().map(|&i| values[i]).collect();
    let mut sorted = DMatrix::<C64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        sorted.set_column(dst, &vectors.column(src));
    }
    vectors = sorted;
    fix_phases(&mut vectors);

    Ok(EigenSystem { eigenvalues, eigenvectors: vectors, source_dim: n })
}

/// `f(A)` for Hermitian `A`, evaluated on the exact spectrum.
pub fn op_func(a: &OperatorMatrix, f: impl Fn(f64) -> f64) -> Result<OperatorMatrix> {
    eigh(a)?.map(f)
}

/// `f(A)` on the clamped spectrum; returns the clamp count alongside.
pub fn op_func_clamped(a: &OperatorMatrix, f: impl Fn(f64) -> f64) -> Result<(OperatorMatrix, usize)> {
    eigh(a)?.map_clamped(f)
}

/// `f(A)` for a complex-valued spectral function, e.g. `e^{-iτx}`.
pub fn op_func_complex(a: &OperatorMatrix, f: impl Fn(f64) -> C64) -> Result<OperatorMatrix> {
    eigh(a)?.map_complex(f)
}

pub fn kron(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<OperatorMatrix> {
    kron_with_cap(a, b, DEFAULT_DIM_CAP)
}

pub fn kron_with_cap(a: &OperatorMatrix, b: &OperatorMatrix, cap: usize) -> Result<OperatorMatrix> {
    let requested = a.dim().checked_mul(b.dim()).ok_or(Error::Capacity { requested: usize::MAX, cap })?;
    if requested > cap {
        return Err(Error::Capacity { requested, cap });
    }
    Ok(OperatorMatrix {
        entries: a.entries.kronecker(&b.entries),
        hermitian: a.hermitian && b.hermitian,
        real_in_basis: a.real_in_basis && b.real_in_basis,
    })
}

/// Largest entry magnitude of `ab − ba`.
pub fn commutator_norm(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "commutator of {}x{} and {}x{}",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    let ab = &a.entries * &b.entries;
    let ba = &b.entries * &a.entries;
    Ok(max_norm(&(ab - ba)))
}

/// Reference magnitude for commutator tolerances.
pub fn commutator_scale(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
    (a.max_abs() * b.max_abs()).max(1.0)
}

/// Lifts a local operator to the joint space: `X ⊗ 1` on side A, `1 ⊗ X` on
/// side B.
pub fn embed(local: &OperatorMatrix, side: Side, dims: (usize, usize)) -> Result<OperatorMatrix> {
    let (dim_a, dim_b) = dims;
    let expected = match side {
        Side::A => dim_a,
        Side::B => dim_b,
    };
    if local.dim() != expected {
        return Err(Error::DimensionMismatch(format!(
            "cannot embed a {}-dimensional operator on side {side} of dimension {expected}",
            local.dim()
        )));
    }
    match side {
        Side::A => kron(local, &OperatorMatrix::identity(dim_b)),
        Side::B => kron(&OperatorMatrix::identity(dim_a), local),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::Pauli;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut impl Rng, n: usize, real: bool) -> OperatorMatrix {
        let m = DMatrix::<C64>::from_fn(n, n, |_, _| {
            let im = if real { 0.0 } else { rng.random_range(-1.0..1.0) };
            C64::new(rng.random_range(-1.0..1.0), im)
        });
        OperatorMatrix::hermitian((&m + m.adjoint()) * C64::new(0.5, 0.0)).unwrap()
    }

    fn random_vector(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn kron_identities() {
        let id2 = OperatorMatrix::identity(2);
        assert_eq!(kron(&id2, &id2).unwrap(), OperatorMatrix::identity(4));
        let z = Pauli::Z.matrix();
        let zi = kron(&z, &id2).unwrap();
        assert_eq!(zi, OperatorMatrix::diagonal(&[1.0, 1.0, -1.0, -1.0]));
        assert!(zi.is_hermitian());
    }

    #[test]
    fn kron_matches_index_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Pauli::X.matrix();
        let xx = kron(&x, &x).unwrap();
        let v = random_vector(&mut rng, 4);
        // (a ⊗ b)[(i·2+k),(j·2+l)] = a[i,j]·b[k,l]
        let mut expected = [C64::new(0.0, 0.0); 4];
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        expected[i * 2 + k] += x.entries()[(i, j)] * x.entries()[(k, l)] * v[j * 2 + l];
                    }
                }
            }
        }
        for (r, e) in expected.iter().enumerate() {
            let got: C64 = (0..4).map(|c| xx.entries()[(r, c)] * v[c]).sum();
            assert!((got - e).norm() < 1e-14);
        }
    }

    #[test]
    fn kron_respects_capacity() {
        let a = OperatorMatrix::identity(64);
        assert!(matches!(kron_with_cap(&a, &a, 1024), Err(Error::Capacity { requested: 4096, cap: 1024 })));
        assert!(matches!(kron(&a, &OperatorMatrix::identity(128)), Err(Error::Capacity { .. })));
    }

    #[test]
    fn eigh_simple_spectra() {
        let e = eigh(&Pauli::Z.matrix()).unwrap();
        assert_eq!(e.eigenvalues, vec![-1.0, 1.0]);
        let e = eigh(&OperatorMatrix::identity(5)).unwrap();
        assert!(e.eigenvalues.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let op = OperatorMatrix::from_real(m).unwrap();
        assert!(matches!(eigh(&op), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn hermitian_constructor_symmetrizes_or_fails() {
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-14, 2.0]);
        let op = OperatorMatrix::from_real_symmetric(tiny).unwrap();
        assert!(op.hermitian_residual() == 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.6, 2.0]);
        assert!(matches!(OperatorMatrix::from_real_symmetric(bad), Err(Error::NotHermitian { .. })));
        assert!(OperatorMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eigh_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for real in [false, true] {
            let a = random_hermitian(&mut rng, 8, real);
            let e = eigh(&a).unwrap();
            assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            let residual = e.reconstruct().max_abs_diff(&a);
            assert!(residual <= 1e-10 * a.max_abs(), "residual {residual:e}");
            let v = &e.eigenvectors;
            let gram = v.adjoint() * v;
            let off = max_norm(&(gram - DMatrix::<C64>::identity(8, 8)));
            assert!(off <= 1e-10);
        }
    }

    #[test]
    fn eigenvector_phases_are_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_hermitian(&mut rng, 6, false);
        let e = eigh(&a).unwrap();
        for col in e.eigenvectors.column_iter() {
            let first = col.iter().find(|z| z.norm() > 1e-8).unwrap();
            assert!(first.im.abs() < 1e-15 && first.re > 0.0);
        }
    }

    #[test]
    fn op_func_basic_cases() {
        let zero = OperatorMatrix::zeros(3);
        assert_eq!(op_func(&zero, f64::exp).unwrap(), OperatorMatrix::identity(3));
        let d = OperatorMatrix::diagonal(&[1.0, 4.0]);
        let s = op_func(&d, f64::sqrt).unwrap();
        assert!(s.max_abs_diff(&OperatorMatrix::diagonal(&[1.0, 2.0])) < 1e-15);
    }

    #[test]
    fn op_func_exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_hermitian(&mut rng, 6, false);
        // rescale spectrum into [-2, 2]
        let spread = eigh(&a).unwrap().eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let a = a.scaled(2.0 / spread);
        let back = op_func(&op_func(&a, f64::exp).unwrap(), f64::ln).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-10);
    }

    #[test]
    fn op_func_domain_error_without_clamp() {
        let d = OperatorMatrix::diagonal(&[0.0, 1.0]);
        assert!(matches!(op_func(&d, f64::ln), Err(Error::Domain(_))));
        let (l, clamps) = op_func_clamped(&d, f64::ln).unwrap();
        assert_eq!(clamps, 1);
        assert!((l.entries()[(0, 0)].re - (1e-14f64).ln()).abs() < 1e-12);
        let neg = OperatorMatrix::diagonal(&[-1.0, -2.0]);
        assert!(matches!(op_func_clamped(&neg, f64::ln), Err(Error::Domain(_))));
    }

    #[test]
    fn commutator_examples() {
        let x = Pauli::X.matrix();
        let z = Pauli::Z.matrix();
        assert_eq!(commutator_norm(&z, &z).unwrap(), 0.0);
        assert!((commutator_norm(&x, &z).unwrap() - 2.0).abs() < 1e-15);
        assert!(commutator_norm(&x, &OperatorMatrix::identity(4)).is_err());
    }

    #[test]
    fn embed_examples() {
        let z = Pauli::Z.matrix();
        assert_eq!(embed(&z, Side::A, (2, 2)).unwrap(), OperatorMatrix::diagonal(&[1.0, 1.0, -1.0, -1.0]));
        assert_eq!(embed(&OperatorMatrix::identity(2), Side::B, (2, 2)).unwrap(), OperatorMatrix::identity(4));
        assert!(embed(&z, Side::B, (2, 4)).is_err());
    }

    #[test]
    fn embedded_spectrum_is_pairwise_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ha = random_hermitian(&mut rng, 2, false);
        let hb = random_hermitian(&mut rng, 2, false);
        let total = &embed(&ha, Side::A, (2, 2)).unwrap() + &embed(&hb, Side::B, (2, 2)).unwrap();
        let ea = eigh(&ha).unwrap().eigenvalues;
        let eb = eigh(&hb).unwrap().eigenvalues;
        let mut sums: Vec<f64> = ea.iter().flat_map(|a| eb.iter().map(move |b| a + b)).collect();
        sums.sort_by(f64::total_cmp);
        let got = eigh(&total).unwrap().eigenvalues;
        for (g, s) in got.iter().zip(&sums) {
            assert!((g - s).abs() < 1e-13);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn exp_is_positive_definite_and_trace_matches(seed in any::<u64>(), n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_hermitian(&mut rng, n, seed % 2 == 0);
            let e = eigh(&a).unwrap();
            let recon = e.reconstruct().max_abs_diff(&a);
            prop_assert!(recon <= 1e-10 * a.max_abs().max(1e-300));
            let ex = op_func(&a, f64::exp).unwrap();
            prop_assert!(eigh(&ex).unwrap().eigenvalues[0] > 0.0);
            let expected: f64 = e.eigenvalues.iter().map(|x| x.exp()).sum();
            prop_assert!((ex.trace().re - expected).abs() <= 1e-12 * expected);
        }

        #[test]
        fn embedded_operators_commute(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_hermitian(&mut rng, 2, false);
            let y = random_hermitian(&mut rng, 4, false);
            let ex = embed(&x, Side::A, (2, 4)).unwrap();
            let ey = embed(&y, Side::B, (2, 4)).unwrap();
            prop_assert!(commutator_norm(&ex, &ey).unwrap() <= 1e-12 * commutator_scale(&ex, &ey));
        }

        #[test]
        fn kron_is_associative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_hermitian(&mut rng, 2, false);
            let b = random_hermitian(&mut rng, 3, false);
            let c = random_hermitian(&mut rng, 2, true);
            let left = kron(&kron(&a, &b).unwrap(), &c).unwrap();
            let right = kron(&a, &kron(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) <= 1e-14);
        }
    }
}
