//! Bosonic bath: spectral density, the two-time correlation function
//!
//! ```text
//! C(t) = ∫₀^∞ dω J(ω) [cos(ωt) coth(βω/2) − i sin(ωt)]
//! ```
//!
//! and its compression into a short sum of complex exponentials.

mod fit;
pub(crate) mod quadrature;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{
    fit_correlation, fit_correlation_with, fit_samples, CorrelationFit, ExpTerm, FitControls,
    FitError,
};

/// Below this value of `βω` the thermal factor is replaced by its small-ω limit.
const COTH_SWITCH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BathError {
    #[error("invalid bath parameter: {0}")]
    InvalidParameter(String),
    #[error("spectral density evaluated at negative frequency {0}")]
    NegativeFrequency(f64),
    #[error("correlation quadrature at t = {t} did not converge (estimate {value}, error {error:e})")]
    QuadratureNotConverged { t: f64, value: Complex64, error: f64 },
}

/// Ohmic bath `J(ω) = (ξ/2) ω e^{−ω/ω_c}` at inverse temperature β.
/// All quantities in units of Ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub xi: f64,
    pub omega_c: f64,
    pub beta: f64,
}

impl BathSpec {
    pub fn new(xi: f64, omega_c: f64, beta: f64) -> Result<Self, BathError> {
        let spec = Self { xi, omega_c, beta };
        spec.validate()?;
        Ok(spec)
    }

    /// ξ = 0.1, ω_c = 7.5Ω, β = 10/Ω.
    pub fn reference() -> Self {
        Self {
            xi: 0.1,
            omega_c: 7.5,
            beta: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), BathError> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(BathError::InvalidParameter(format!("xi = {} must be >= 0", self.xi)));
        }
        if !(self.omega_c > 0.0 && self.omega_c.is_finite()) {
            return Err(BathError::InvalidParameter(format!(
                "omega_c = {} must be > 0",
                self.omega_c
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(BathError::InvalidParameter(format!("beta = {} must be > 0", self.beta)));
        }
        Ok(())
    }

    pub fn with_xi(&self, xi: f64) -> Self {
        Self { xi, ..*self }
    }
}

/// A spectral density the correlation quadrature can integrate.
pub trait SpectralDensity: Sync {
    fn density(&self, omega: f64) -> f64;

    /// `lim_{ω→0} J(ω)/ω`; sets the finite value of `J(ω) coth(βω/2)` at ω = 0.
    fn zero_slope(&self) -> f64;

    /// Frequency scale over which `J` decays; sets the quadrature partition.
    fn decay_scale(&self) -> f64;

    /// Upper integration limit.
    fn upper_limit(&self) -> f64 {
        60.0 * self.decay_scale()
    }

    /// Bound on `∫_W^∞ J(ω) coth(βω/2) dω`.
    fn tail_bound(&self, upper: f64, beta: f64) -> f64;
}

impl SpectralDensity for BathSpec {
    fn density(&self, omega: f64) -> f64 {
        0.5 * self.xi * omega * (-omega / self.omega_c).exp()
    }

    fn zero_slope(&self) -> f64 {
        0.5 * self.xi
    }

    fn decay_scale(&self) -> f64 {
        self.omega_c
    }

    fn tail_bound(&self, upper: f64, beta: f64) -> f64 {
        let wc = self.omega_c;
        let coth = 1.0 / (0.5 * beta * upper).tanh();
        0.5 * self.xi * wc * (upper + wc) * (-upper / wc).exp() * coth
    }
}

/// `J(ω) = (ξ/2) ω e^{−ω/ω_c}`.
pub fn spectral_density(spec: &BathSpec, omega: f64) -> Result<f64, BathError> {
    if omega < 0.0 || omega.is_nan() {
        return Err(BathError::NegativeFrequency(omega));
    }
    Ok(spec.density(omega))
}

/// Tolerances for the correlation quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadControls {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Target number of initial panels per oscillation period of `cos(ωt)`.
    pub panels_per_period: f64,
    pub max_panels: usize,
}

impl Default for QuadControls {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            panels_per_period: 1.0,
            max_panels: 400_000,
        }
    }
}

impl QuadControls {
    /// Twice the initial resolution and a hundredfold tighter tolerance.
    pub fn refined(&self) -> Self {
        Self {
            abs_tol: self.abs_tol * 1e-2,
            rel_tol: self.rel_tol * 1e-2,
            panels_per_period: self.panels_per_period * 2.0,
            max_panels: self.max_panels * 4,
        }
    }
}

/// `J(ω) coth(βω/2)`, using the small-frequency limit `2 J'(0)/β` near zero.
fn thermal_weight<J: SpectralDensity + ?Sized>(j: &J, beta: f64, omega: f64) -> f64 {
    let x = beta * omega;
    if x < COTH_SWITCH {
        2.0 * j.zero_slope() / beta
    } else {
        j.density(omega) / (0.5 * x).tanh()
    }
}

fn breakpoints<J: SpectralDensity + ?Sized>(j: &J, t: f64, controls: &QuadControls) -> Vec<f64> {
    let scale = j.decay_scale();
    let upper = j.upper_limit();
    // beyond ~46 decay lengths the integrand is below 1e-20 of its peak
    let dense_end = (46.0 * scale).min(upper);
    let mut width = 0.5 * scale;
    if t.abs() > 0.0 {
        width = width.min(2.0 * std::f64::consts::PI / t.abs() / controls.panels_per_period);
    }
    let n = (dense_end / width).ceil().max(1.0) as usize;
    let mut out: Vec<f64> = (0..=n).map(|i| dense_end * i as f64 / n as f64).collect();
    if upper > dense_end {
        out.push(upper);
    }
    out
}

/// Correlation function for an arbitrary spectral density.
pub fn correlation_function_with<J: SpectralDensity + ?Sized>(
    j: &J,
    beta: f64,
    t: f64,
    controls: &QuadControls,
) -> Result<Complex64, BathError> {
    let breaks = breakpoints(j, t, controls);
    let integrand = |w: f64| {
        let (s, c) = (w * t).sin_cos();
        Complex64::new(thermal_weight(j, beta, w) * c, -j.density(w) * s)
    };
    let upper = *breaks.last().expect("non-empty partition");
    let tail = j.tail_bound(upper, beta);
    match quadrature::integrate(integrand, &breaks, controls.abs_tol, controls.rel_tol, controls.max_panels) {
        Ok(out) if tail <= controls.abs_tol.max(controls.rel_tol * out.value.norm()) => Ok(out.value),
        Ok(out) => Err(BathError::QuadratureNotConverged {
            t,
            value: out.value,
            error: out.error + tail,
        }),
        Err(fail) => Err(BathError::QuadratureNotConverged {
            t,
            value: fail.value,
            error: fail.error + tail,
        }),
    }
}

/// Bath correlation function `C(t)` of the ohmic bath by adaptive quadrature.
pub fn correlation_function(spec: &BathSpec, t: f64) -> Result<Complex64, BathError> {
    spec.validate()?;
    if spec.xi == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    correlation_function_with(spec, spec.beta, t, &QuadControls::default())
}

/// `C(t)` sampled on a uniform grid over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSamples {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl KernelSamples {
    pub fn uniform(horizon: f64, count: usize, f: impl Fn(f64) -> Result<Complex64, BathError>) -> Result<Self, BathError> {
        let n = count.max(2);
        let times: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
        let values = times.iter().map(|&t| f(t)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { times, values })
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Samples the ohmic correlation function on `count` uniform points.
pub fn sample_correlation(spec: &BathSpec, horizon: f64, count: usize) -> Result<KernelSamples, BathError> {
    spec.validate()?;
    if !(horizon > 0.0) {
        return Err(BathError::InvalidParameter(format!("horizon = {horizon} must be > 0")));
    }
    KernelSamples::uniform(horizon, count, |t| correlation_function(spec, t))
}
