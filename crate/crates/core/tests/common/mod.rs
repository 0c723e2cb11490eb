#![allow(dead_code)]

use std::sync::OnceLock;

use num_complex::Complex64;
use spinbath::bath::{fit_correlation, BathSpec, CorrelationFit};

pub const REFERENCE_TOL: f64 = 1e-7;
pub const REFERENCE_HORIZON: f64 = 70.0;
pub const REFERENCE_MAX_TERMS: usize = 6;

/// The reference-bath fit, computed once per test binary.
pub fn reference_fit() -> &'static CorrelationFit {
    static FIT: OnceLock<CorrelationFit> = OnceLock::new();
    FIT.get_or_init(|| {
        fit_correlation(&BathSpec::reference(), REFERENCE_HORIZON, REFERENCE_TOL, REFERENCE_MAX_TERMS)
            .expect("reference fit")
    })
}

/// Complex trigamma ψ′(z) for Re z > 0: shift up with ψ′(z) = ψ′(z+1) + 1/z²,
/// then the asymptotic series.
pub fn trigamma(mut z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    while z.norm() < 12.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let w = 1.0 / z;
    let w2 = w * w;
    // 1/z + 1/2z² + Σ B_{2n}/z^{2n+1}
    let coeffs = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0];
    let mut series = Complex64::new(0.0, 0.0);
    let mut p = w * w2;
    for c in coeffs {
        series += p * c;
        p *= w2;
    }
    acc + w + 0.5 * w2 + series
}

/// Closed form of the ohmic kernel, from expanding coth into a geometric series
/// and summing the Laplace transforms term by term (a = 1/ω_c, z = a + it):
/// Re C = (ξ/2)[2 Re ψ′(z/β)/β² − Re z⁻²],  Im C = −(ξ/2)·2at/(a² + t²)².
pub fn correlation_closed_form(spec: &BathSpec, t: f64) -> Complex64 {
    let a = 1.0 / spec.omega_c;
    let b = spec.beta;
    let z = Complex64::new(a, t);
    let thermal = (trigamma(z / b) + trigamma(z.conj() / b)) / (b * b);
    let re = 0.5 * spec.xi * (thermal - 1.0 / (z * z)).re;
    let im = -0.5 * spec.xi * 2.0 * a * t / (a * a + t * t).powi(2);
    Complex64::new(re, im)
}
