//! Complex 2×2 operator algebra for a single qubit.
//!
//! Basis ordering is `(|1⟩, |0⟩)`: row/column 0 is the excited state, so
//! `m11 = ⟨1|ρ|1⟩` is the excited-state population and `σ_z|1⟩ = +|1⟩`.
//! Energies are in units of Ω and times in units of 1/Ω, with ħ = 1.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Pauli axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A general complex 2×2 matrix. Used for density matrices, Hamiltonians and
/// the auxiliary memory matrices alike; physical constraints are checked by
/// the caller where they matter.
#[derive(Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "[f64; 8]", from = "[f64; 8]")]
pub struct QubitOperator {
    pub m: [[Complex64; 2]; 2],
}

impl fmt::Debug for QubitOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]
        )
    }
}

impl From<QubitOperator> for [f64; 8] {
    fn from(op: QubitOperator) -> Self {
        let m = op.m;
        [
            m[0][0].re, m[0][0].im, m[0][1].re, m[0][1].im, m[1][0].re, m[1][0].im, m[1][1].re,
            m[1][1].im,
        ]
    }
}

impl From<[f64; 8]> for QubitOperator {
    fn from(v: [f64; 8]) -> Self {
        QubitOperator::new(
            Complex64::new(v[0], v[1]),
            Complex64::new(v[2], v[3]),
            Complex64::new(v[4], v[5]),
            Complex64::new(v[6], v[7]),
        )
    }
}

impl QubitOperator {
    pub const fn new(m11: Complex64, m12: Complex64, m21: Complex64, m22: Complex64) -> Self {
        Self {
            m: [[m11, m12], [m21, m22]],
        }
    }

    pub fn from_real(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Self::new(m11.into(), m12.into(), m21.into(), m22.into())
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self::from_real(1.0, 0.0, 0.0, 1.0)
    }

    /// `|1⟩⟨1|`, the north pole of the Bloch sphere.
    pub fn excited() -> Self {
        Self::from_real(1.0, 0.0, 0.0, 0.0)
    }

    /// `|0⟩⟨0|`, the south pole of the Bloch sphere.
    pub fn ground() -> Self {
        Self::from_real(0.0, 0.0, 0.0, 1.0)
    }

    pub fn maximally_mixed() -> Self {
        Self::from_real(0.5, 0.0, 0.0, 0.5)
    }

    /// Density matrix with the given Bloch vector, `(1 + r·σ)/2`.
    pub fn from_bloch(x: f64, y: f64, z: f64) -> Self {
        Self::new(
            Complex64::new(0.5 * (1.0 + z), 0.0),
            Complex64::new(0.5 * x, -0.5 * y),
            Complex64::new(0.5 * x, 0.5 * y),
            Complex64::new(0.5 * (1.0 - z), 0.0),
        )
    }

    /// `σ₊ = |1⟩⟨0|`.
    pub fn sigma_plus() -> Self {
        Self::from_real(0.0, 1.0, 0.0, 0.0)
    }

    /// `σ₋ = |0⟩⟨1|`.
    pub fn sigma_minus() -> Self {
        Self::from_real(0.0, 0.0, 1.0, 0.0)
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn dagger(&self) -> Self {
        let m = &self.m;
        Self::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        let a = &self.m;
        let b = &rhs.m;
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    /// `[self, rhs]`.
    pub fn commutator(&self, rhs: &Self) -> Self {
        self.matmul(rhs) - rhs.matmul(self)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let m = &self.m;
        Self::new(s * m[0][0], s * m[0][1], s * m[1][0], s * m[1][1])
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise deviation from hermiticity, `max |A − A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        (*self - self.dagger()).max_abs()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// Hermitian, unit trace within 1e-10, eigenvalues ≥ −1e-8.
    pub fn is_density_matrix(&self) -> bool {
        if !self.is_hermitian(1e-10) || (self.trace() - 1.0).norm() > 1e-10 {
            return false;
        }
        let (lo, _) = self.hermitian_eigenvalues();
        lo >= -1e-8
    }

    /// Eigenvalues of the hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> (f64, f64) {
        let a = self.m[0][0].re;
        let d = self.m[1][1].re;
        let b = 0.5 * (self.m[0][1] + self.m[1][0].conj());
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        (mean - r, mean + r)
    }

    pub fn entries(&self) -> [Complex64; 4] {
        [self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]]
    }

    pub fn from_entries(e: [Complex64; 4]) -> Self {
        Self::new(e[0], e[1], e[2], e[3])
    }

    /// Entrywise approximate equality.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (*self - *other).max_abs() <= tol
    }
}

impl Add for QubitOperator {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        out += rhs;
        out
    }
}

impl AddAssign for QubitOperator {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..2 {
            for j in 0..2 {
                self.m[i][j] += rhs.m[i][j];
            }
        }
    }
}

impl Sub for QubitOperator {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        out -= rhs;
        out
    }
}

impl SubAssign for QubitOperator {
    fn sub_assign(&mut self, rhs: Self) {
        for i in 0..2 {
            for j in 0..2 {
                self.m[i][j] -= rhs.m[i][j];
            }
        }
    }
}

impl Neg for QubitOperator {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale((-1.0).into())
    }
}

impl Mul<f64> for QubitOperator {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs.into())
    }
}

impl Mul<Complex64> for QubitOperator {
    type Output = Self;
    fn mul(self, rhs: Complex64) -> Self {
        self.scale(rhs)
    }
}

impl Mul<QubitOperator> for f64 {
    type Output = QubitOperator;
    fn mul(self, rhs: QubitOperator) -> QubitOperator {
        rhs.scale(self.into())
    }
}

impl Mul<QubitOperator> for Complex64 {
    type Output = QubitOperator;
    fn mul(self, rhs: QubitOperator) -> QubitOperator {
        rhs.scale(self)
    }
}

impl Mul for QubitOperator {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.matmul(&rhs)
    }
}

/// Standard Pauli matrix in the `(|1⟩, |0⟩)` basis.
pub fn pauli(axis: Axis) -> QubitOperator {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    match axis {
        Axis::X => QubitOperator::new(zero, one, one, zero),
        Axis::Y => QubitOperator::new(zero, -I, I, zero),
        Axis::Z => QubitOperator::new(one, zero, zero, -one),
    }
}

/// Liouvillian action `−i[H, A]`.
pub fn liouville_apply(h: &QubitOperator, a: &QubitOperator) -> QubitOperator {
    h.commutator(a).scale(-I)
}

/// Half the trace norm, `‖A‖₁ / 2`, for an arbitrary 2×2 matrix.
///
/// Hermitian traceless input (the difference of two density matrices) takes
/// the closed form `sqrt(A11² + |A12|²)`; everything else goes through the
/// singular values.
pub fn trace_norm_half(a: &QubitOperator) -> f64 {
    let scale = a.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    let tol = 1e-14 * scale;
    if a.is_hermitian(tol) && a.trace().norm() <= tol {
        trace_norm_half_traceless_hermitian(a)
    } else {
        trace_norm_half_svd(a)
    }
}

/// Closed form for hermitian traceless `A`: the eigenvalues are `±sqrt(A11² + |A12|²)`.
pub fn trace_norm_half_traceless_hermitian(a: &QubitOperator) -> f64 {
    let d = 0.5 * (a.m[0][0].re - a.m[1][1].re);
    let off = 0.5 * (a.m[0][1] + a.m[1][0].conj());
    d.hypot(off.norm())
}

/// `(σ₁ + σ₂)/2` from the singular values of a general 2×2 matrix.
///
/// For 2×2, `σ₁ + σ₂ = sqrt(‖A‖_F² + 2|det A|)`.
pub fn trace_norm_half_svd(a: &QubitOperator) -> f64 {
    let m = &a.m;
    let fro2: f64 = a.entries().iter().map(|z| z.norm_sqr()).sum();
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).norm();
    0.5 * (fro2 + 2.0 * det).max(0.0).sqrt()
}

/// `(tr σ_x ρ, tr σ_y ρ, tr σ_z ρ)`.
pub fn bloch_vector(rho: &QubitOperator) -> [f64; 3] {
    let m = &rho.m;
    let off = m[0][1] + m[1][0].conj();
    [
        off.re,
        // tr(σ_y ρ) = −i ρ21 + i ρ12 = 2 Im(ρ21) for hermitian ρ
        (I * (m[0][1] - m[1][0])).re,
        (m[0][0] - m[1][1]).re,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_density(x: f64, y: f64, z: f64, shrink: f64) -> QubitOperator {
        let n = (x * x + y * y + z * z).sqrt().max(1e-12);
        let r = shrink / n.max(1.0);
        QubitOperator::from_bloch(x * r, y * r, z * r)
    }

    #[test]
    fn pauli_basics() {
        let ex = QubitOperator::excited();
        assert_eq!((pauli(Axis::Z) * ex).trace().re, 1.0);
        let x = pauli(Axis::X);
        assert!((x * x).approx_eq(&QubitOperator::identity(), 0.0));
        assert_eq!(pauli(Axis::Y).trace(), Complex64::new(0.0, 0.0));
        let y = pauli(Axis::Y);
        assert!((y * y).approx_eq(&QubitOperator::identity(), 0.0));
        // σ_x σ_y = i σ_z
        assert!((x * y).approx_eq(&(pauli(Axis::Z) * I), 0.0));
    }

    #[test]
    fn liouville_commutators() {
        let z = pauli(Axis::Z);
        assert_eq!(liouville_apply(&z, &z), QubitOperator::zero());
        let omega = 1.7;
        let out = liouville_apply(&(z * omega), &pauli(Axis::X));
        assert!(out.approx_eq(&(pauli(Axis::Y) * (2.0 * omega)), 1e-15));
    }

    #[test]
    fn trace_norm_cases() {
        assert_eq!(trace_norm_half(&QubitOperator::zero()), 0.0);
        let d = QubitOperator::excited() - QubitOperator::ground();
        assert!((trace_norm_half(&d) - 1.0).abs() < 1e-15);
        let a = QubitOperator::from_real(0.3, 0.0, 0.0, -0.3);
        assert!((trace_norm_half(&a) - 0.3).abs() < 1e-15);
        assert!((trace_norm_half_svd(&a) - trace_norm_half_traceless_hermitian(&a)).abs() < 1e-12);
    }

    #[test]
    fn trace_norm_non_hermitian() {
        // σ₊ has singular values (1, 0)
        assert!((trace_norm_half(&QubitOperator::sigma_plus()) - 0.5).abs() < 1e-15);
        // identity: singular values (1, 1)
        assert!((trace_norm_half(&QubitOperator::identity()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bloch_poles() {
        assert_eq!(bloch_vector(&QubitOperator::ground()), [0.0, 0.0, -1.0]);
        assert_eq!(bloch_vector(&QubitOperator::excited()), [0.0, 0.0, 1.0]);
        assert_eq!(bloch_vector(&QubitOperator::maximally_mixed()), [0.0, 0.0, 0.0]);
        let v = bloch_vector(&QubitOperator::from_bloch(0.1, -0.4, 0.3));
        assert!((v[0] - 0.1).abs() < 1e-15 && (v[1] + 0.4).abs() < 1e-15 && (v[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn density_check() {
        assert!(QubitOperator::ground().is_density_matrix());
        assert!(!QubitOperator::from_real(1.2, 0.0, 0.0, -0.2).is_density_matrix());
        assert!(!QubitOperator::sigma_plus().is_density_matrix());
    }

    fn cplx() -> impl Strategy<Value = Complex64> {
        (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| Complex64::new(a, b))
    }

    fn any_op() -> impl Strategy<Value = QubitOperator> {
        (cplx(), cplx(), cplx(), cplx()).prop_map(|(a, b, c, d)| QubitOperator::new(a, b, c, d))
    }

    fn hermitian() -> impl Strategy<Value = QubitOperator> {
        (-2.0..2.0f64, -2.0..2.0f64, cplx())
            .prop_map(|(a, d, b)| QubitOperator::new(a.into(), b, b.conj(), d.into()))
    }

    fn density() -> impl Strategy<Value = QubitOperator> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..1.0f64)
            .prop_map(|(x, y, z, s)| random_density(x, y, z, s))
    }

    proptest! {
        #[test]
        fn trace_norm_is_metric(a in density(), b in density(), c in density()) {
            let d = |p: &QubitOperator, q: &QubitOperator| trace_norm_half(&(*p - *q));
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn liouvillian_is_traceless(h in hermitian(), a in any_op()) {
            prop_assert!(liouville_apply(&h, &a).trace().norm() <= 1e-12);
        }

        #[test]
        fn liouvillian_preserves_hermiticity(h in hermitian(), a in hermitian()) {
            prop_assert!(liouville_apply(&h, &a).hermiticity_defect() <= 1e-12);
        }

        #[test]
        fn closed_form_matches_svd((x, y) in (-1.0..1.0f64, cplx())) {
            let a = QubitOperator::new(x.into(), y, y.conj(), (-x).into());
            prop_assert!((trace_norm_half_traceless_hermitian(&a) - trace_norm_half_svd(&a)).abs() <= 1e-12);
        }

        #[test]
        fn bloch_norm_bounded(r in density()) {
            let v = bloch_vector(&r);
            prop_assert!((v[0]*v[0] + v[1]*v[1] + v[2]*v[2]).sqrt() <= 1.0 + 1e-8);
        }
    }
}
