//! Dense complex matrices and the handful of kernels the rest of the crate
//! needs: Hermitian eigendecomposition, unitary exponentials, polar
//! projection onto the unitary group, element-wise l1 norm and gate fidelity.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Global tolerance for unitarity checks on exactly constructed unitaries.
pub const UNITARITY_TOL: f64 = 1e-9;

const HERMITIAN_TOL: f64 = 1e-8;
const JACOBI_MAX_SWEEPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not Hermitian (max |H - H^dagger| = {defect:e})")]
    NotHermitian { defect: f64 },
    #[error("matrix is not anti-Hermitian (max |A + A^dagger| = {defect:e})")]
    NotAntiHermitian { defect: f64 },
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("matrix is rank deficient (singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("matrix is not unitary (||U U^dagger - 1||_1 = {defect:e})")]
    NotUnitary { defect: f64 },
    #[error("not a density matrix: {0}")]
    NotDensity(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Dense square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), dim * dim, "expected {} entries", dim * dim);
        Self { dim, data }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Builds a matrix from separate real and imaginary parts, both row-major.
    pub fn from_parts(dim: usize, re: &[f64], im: &[f64]) -> Self {
        assert_eq!(re.len(), dim * dim);
        assert_eq!(im.len(), dim * dim);
        let data = re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect();
        Self { dim, data }
    }

    pub fn diag(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        Self::from_fn(d, |i, j| self.data[j * d + i].conj())
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&z| f(z)).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: C64, other: &ComplexMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self += s * other` for real `s`.
    pub fn axpy_real(&mut self, s: f64, other: &ComplexMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            let out_row = &mut out[i * d..(i + 1) * d];
            for (k, &a) in row.iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                let other_row = &other.data[k * d..(k + 1) * d];
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        ComplexMatrix { dim: d, data: out }
    }

    /// `self^dagger * other` without materializing the adjoint.
    pub fn adjoint_matmul(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for k in 0..d {
            let a_row = &self.data[k * d..(k + 1) * d];
            let b_row = &other.data[k * d..(k + 1) * d];
            for (i, &a) in a_row.iter().enumerate() {
                let a = a.conj();
                if a == ZERO {
                    continue;
                }
                let out_row = &mut out[i * d..(i + 1) * d];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        ComplexMatrix { dim: d, data: out }
    }

    /// `self * other^dagger`.
    pub fn matmul_adjoint(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            let a_row = &self.data[i * d..(i + 1) * d];
            for j in 0..d {
                let b_row = &other.data[j * d..(j + 1) * d];
                out[i * d + j] = a_row.iter().zip(b_row).map(|(&a, &b)| a * b.conj()).sum();
            }
        }
        ComplexMatrix { dim: d, data: out }
    }

    /// Commutator `[self, other] = self*other - other*self`.
    pub fn commutator(&self, other: &ComplexMatrix) -> ComplexMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    /// Kronecker product with `self` as the left (more significant) factor.
    pub fn kron(&self, other: &ComplexMatrix) -> ComplexMatrix {
        let (a, b) = (self.dim, other.dim);
        let d = a * b;
        ComplexMatrix::from_fn(d, |i, j| self[(i / b, j / b)] * other[(i % b, j % b)])
    }

    /// Hermitian part `(A + A^dagger) / 2`.
    pub fn hermitian_part(&self) -> ComplexMatrix {
        let d = self.dim;
        ComplexMatrix::from_fn(d, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// Largest entrywise modulus of `A - A^dagger`.
    pub fn hermitian_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Largest entrywise modulus of `A + A^dagger`.
    pub fn anti_hermitian_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self[(i, j)] + self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Element-wise l1 norm `sum_ij |a_ij|`.
    pub fn l1_norm(&self) -> f64 {
        l1_norm(self)
    }

    /// `||U U^dagger - 1||_1`.
    pub fn unitarity_defect(&self) -> f64 {
        let mut p = self.matmul_adjoint(self);
        for i in 0..self.dim {
            p[(i, i)] -= ONE;
        }
        p.l1_norm()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        ComplexMatrix { dim: self.dim, data }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        ComplexMatrix { dim: self.dim, data }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.map(|z| -z)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

// Serialized as nested arrays [[[re, im], ...], ...].
impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.dim)
            .map(|i| (0..self.dim).map(|j| [self[(i, j)].re, self[(i, j)].im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(D::Error::custom(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            data.extend(row.into_iter().map(|[re, im]| C64::new(re, im)));
        }
        Ok(ComplexMatrix { dim, data })
    }
}

/// Element-wise l1 norm `sum_ij |a_ij|`.
pub fn l1_norm(a: &ComplexMatrix) -> f64 {
    a.as_slice().iter().map(|z| z.norm()).sum()
}

/// A matrix known to be unitary to within [`UNITARITY_TOL`] (or the
/// eigensolver tolerance for computed exponentials).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct UnitaryMatrix(ComplexMatrix);

impl UnitaryMatrix {
    pub fn identity(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim))
    }

    /// Wraps `m` after checking `||m m^dagger - 1||_1 <= tol`.
    pub fn new(m: ComplexMatrix, tol: f64) -> Result<Self, LinalgError> {
        if !m.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let defect = m.unitarity_defect();
        if defect > tol {
            return Err(LinalgError::NotUnitary { defect });
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn then(&self, later: &UnitaryMatrix) -> UnitaryMatrix {
        UnitaryMatrix(later.0.matmul(&self.0))
    }
}

impl<'de> Deserialize<'de> for UnitaryMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(deserializer)?;
        // Stored unitaries come from eigensolver-based exponentials; allow for
        // accumulated rounding in long Trotter products.
        UnitaryMatrix::new(m, 1e-8).map_err(D::Error::custom)
    }
}

/// Positive semidefinite, unit-trace Hermitian matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub const TOL: f64 = 1e-10;

    pub fn new(m: ComplexMatrix) -> Result<Self, LinalgError> {
        Self::validate(&m)?;
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn validate(m: &ComplexMatrix) -> Result<(), LinalgError> {
        if !m.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let defect = m.hermitian_defect();
        if defect > Self::TOL {
            return Err(LinalgError::NotDensity(format!("Hermitian defect {defect:e}")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > Self::TOL {
            return Err(LinalgError::NotDensity(format!("trace {tr}")));
        }
        let (evals, _) = herm_eig(&m.hermitian_part())?;
        if let Some(&lo) = evals.first() {
            if lo < -Self::TOL {
                return Err(LinalgError::NotDensity(format!("negative eigenvalue {lo:e}")));
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn purity(&self) -> f64 {
        self.0.matmul(&self.0).trace().re
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(deserializer)?;
        DensityMatrix::new(m).map_err(D::Error::custom)
    }
}

/// Eigendecomposition `H = V diag(lambda) V^dagger` of a Hermitian matrix by
/// cyclic complex Jacobi rotations. Eigenvalues are returned ascending and the
/// columns of `V` are the matching eigenvectors.
pub fn herm_eig(h: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix), LinalgError> {
    if !h.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let defect = h.hermitian_defect();
    if defect > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(LinalgError::NotHermitian { defect });
    }
    let d = h.dim();
    let mut a = h.hermitian_part();
    let mut v = ComplexMatrix::identity(d);
    if d == 1 {
        return Ok((vec![a[(0, 0)].re], v));
    }

    let scale = a.frobenius_norm();
    let threshold = f64::EPSILON * f64::EPSILON * scale * scale;
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_sqr(&a) <= threshold || scale == 0.0 {
            converged = true;
            break;
        }
        for p in 0..d - 1 {
            for q in p + 1..d {
                let apq = a[(p, q)];
                let abs_apq = apq.norm();
                if abs_apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Rotation zeroing a[p][q]: the 2x2 block [[app, apq], [conj(apq), aqq]]
                // is diagonalized by [[c, -s e^{i phi}], [s e^{-i phi}, c]] with
                // e^{i phi} = apq / |apq|.
                let phase = apq / abs_apq;
                let theta = (aqq - app) / (2.0 * abs_apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let sp = phase * s; // s e^{i phi}
                // A <- A J where J = [[c, sp], [-conj(sp), c]] acting on columns p, q.
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c - akq * sp.conj();
                    a[(k, q)] = akp * sp + akq * c;
                }
                // A <- J^dagger A acting on rows p, q.
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c - aqk * sp;
                    a[(q, k)] = apk * sp.conj() + aqk * c;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * sp.conj();
                    v[(k, q)] = vkp * sp + vkq * c;
                }
            }
        }
    }
    if !converged {
        let off = off_diagonal_sqr(&a);
        if off > threshold * 1e4 {
            return Err(LinalgError::NoConvergence { sweeps: JACOBI_MAX_SWEEPS, residual: off.sqrt() });
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let evals = order.iter().map(|&i| a[(i, i)].re).collect();
    let vecs = ComplexMatrix::from_fn(d, |r, c| v[(r, order[c])]);
    Ok((evals, vecs))
}

fn off_diagonal_sqr(a: &ComplexMatrix) -> f64 {
    let d = a.dim();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s
}

/// `V diag(f) V^dagger`.
pub fn reconstruct(v: &ComplexMatrix, f: &[C64]) -> ComplexMatrix {
    let d = v.dim();
    let scaled = ComplexMatrix::from_fn(d, |i, j| v[(i, j)] * f[j]);
    scaled.matmul_adjoint(v)
}

/// `exp(-i s H)` for Hermitian `H`.
pub fn expm_hermitian_generator(h: &ComplexMatrix, s: f64) -> Result<UnitaryMatrix, LinalgError> {
    let (evals, v) = herm_eig(h)?;
    let phases: Vec<C64> = evals.iter().map(|&l| (-I * (s * l)).exp()).collect();
    Ok(UnitaryMatrix::new_unchecked(reconstruct(&v, &phases)))
}

/// `exp(Omega)` for anti-Hermitian `Omega`, via the Hermitian generator `i Omega`.
pub fn expm_antihermitian(omega: &ComplexMatrix) -> Result<UnitaryMatrix, LinalgError> {
    let defect = omega.anti_hermitian_defect();
    if defect > HERMITIAN_TOL * omega.max_abs().max(1.0) {
        return Err(LinalgError::NotAntiHermitian { defect });
    }
    expm_hermitian_generator(&omega.scale(I), 1.0)
}

/// Closest unitary in Frobenius norm: the polar factor `W = A (A^dagger A)^{-1/2}`,
/// which equals `U V^dagger` from the SVD `A = U S V^dagger`.
pub fn nearest_unitary(a: &ComplexMatrix) -> Result<UnitaryMatrix, LinalgError> {
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let gram = a.adjoint_matmul(a);
    let (evals, v) = herm_eig(&gram)?;
    let d = a.dim();
    let largest = evals[d - 1].max(0.0).sqrt();
    let smallest = evals[0].max(0.0).sqrt();
    if largest == 0.0 || smallest <= 1e-12 * largest {
        let ratio = if largest == 0.0 { 0.0 } else { smallest / largest };
        return Err(LinalgError::RankDeficient { ratio });
    }
    let inv_sqrt: Vec<C64> = evals.iter().map(|&l| C64::new(1.0 / l.sqrt(), 0.0)).collect();
    let w = a.matmul(&reconstruct(&v, &inv_sqrt));
    Ok(UnitaryMatrix::new_unchecked(w))
}

/// Gate fidelity `|Tr(U^dagger V) / d|^2`.
pub fn gate_fidelity(u: &ComplexMatrix, v: &ComplexMatrix) -> Result<f64, LinalgError> {
    if u.dim() != v.dim() {
        return Err(LinalgError::DimensionMismatch { left: u.dim(), right: v.dim() });
    }
    let overlap: C64 = u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a.conj() * b).sum();
    Ok((overlap / u.dim() as f64).norm_sqr())
}

/// `U rho U^dagger`.
pub fn evolve_state(rho: &DensityMatrix, u: &UnitaryMatrix) -> Result<DensityMatrix, LinalgError> {
    if rho.dim() != u.dim() {
        return Err(LinalgError::DimensionMismatch { left: rho.dim(), right: u.dim() });
    }
    let out = u.matrix().matmul(rho.matrix()).matmul_adjoint(u.matrix());
    Ok(DensityMatrix::new_unchecked(out))
}
