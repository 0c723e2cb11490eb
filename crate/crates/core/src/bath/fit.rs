//! Multi-exponential compression `C(t) ≈ Σ_k α_k e^{γ_k t}`.
//!
//! For each term count k = 1, 2, … the fit is seeded from a matrix-pencil
//! estimate of the poles, from the previous (k−1)-term optimum extended by one
//! pole, and from a few seeded random pole sets. Every seed is polished by a
//! complex Levenberg–Marquardt iteration over all `(α_k, γ_k)` and the best
//! result is kept. The first k whose residual meets the tolerance is accepted.
//!
//! The residual is the squared L2 norm `∫₀^T |C(t) − Σ α_k e^{γ_k t}|² dt`
//! evaluated with trapezoid weights on the uniform sample grid.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{sample_correlation, BathError, BathSpec, KernelSamples};

/// Poles are kept strictly inside the left half plane by at least this much.
const MIN_DECAY: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub alpha: Complex64,
    pub gamma: Complex64,
}

/// Exponential representation of the bath kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFit {
    pub terms: Vec<ExpTerm>,
    /// Trapezoid-weighted squared residual over the fit grid.
    pub residual: f64,
    pub sample_horizon: f64,
}

impl CorrelationFit {
    /// A single zero-amplitude term: the kernel of an uncoupled system.
    pub fn uncoupled() -> Self {
        Self {
            terms: vec![ExpTerm {
                alpha: Complex64::new(0.0, 0.0),
                gamma: Complex64::new(-1.0, 0.0),
            }],
            residual: 0.0,
            sample_horizon: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.terms.iter().map(|term| term.alpha * (term.gamma * t).exp()).sum()
    }

    /// Same poles, amplitudes multiplied by `factor` (the kernel is linear in ξ).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| ExpTerm {
                    alpha: t.alpha * factor,
                    gamma: t.gamma,
                })
                .collect(),
            residual: self.residual * factor * factor,
            sample_horizon: self.sample_horizon,
        }
    }

    pub fn max_decay_rate(&self) -> f64 {
        self.terms.iter().map(|t| -t.gamma.re).fold(0.0, f64::max)
    }

    /// Hex digest of the exact term values. Snapshots carry it so they are
    /// never propagated with a different kernel.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.terms {
            for v in [t.alpha.re, t.alpha.im, t.gamma.re, t.gamma.im] {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher.finalize()[..12].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_decaying(&self) -> bool {
        self.terms.iter().all(|t| t.gamma.re <= 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct FitControls {
    /// Uniform samples over `[0, horizon]`.
    pub samples: usize,
    pub seed: u64,
    pub random_starts: usize,
    /// Iteration budget for the screening pass over all seeds.
    pub screening_iterations: usize,
    /// Iteration budget when polishing the best screened seeds.
    pub max_iterations: usize,
}

impl Default for FitControls {
    fn default() -> Self {
        Self {
            samples: 2001,
            seed: 0x5eed,
            random_starts: 6,
            screening_iterations: 80,
            max_iterations: 3000,
        }
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error("invalid fit request: {0}")]
    InvalidRequest(String),
    #[error("no fit with at most {max_terms} terms reached residual {tol:e} (best {} terms, residual {:e})", best.len(), best.residual)]
    NotConverged {
        best: Box<CorrelationFit>,
        tol: f64,
        max_terms: usize,
    },
}

/// Fits the ohmic kernel with default controls.
pub fn fit_correlation(spec: &BathSpec, horizon: f64, tol: f64, max_terms: usize) -> Result<CorrelationFit, FitError> {
    fit_correlation_with(spec, horizon, tol, max_terms, &FitControls::default())
}

pub fn fit_correlation_with(
    spec: &BathSpec,
    horizon: f64,
    tol: f64,
    max_terms: usize,
    controls: &FitControls,
) -> Result<CorrelationFit, FitError> {
    spec.validate()?;
    validate_request(horizon, tol, max_terms)?;
    if spec.xi == 0.0 {
        let mut fit = CorrelationFit::uncoupled();
        fit.sample_horizon = horizon;
        return Ok(fit);
    }
    let samples = sample_correlation(spec, horizon, controls.samples)?;
    fit_samples(&samples, tol, max_terms, controls)
}

fn validate_request(horizon: f64, tol: f64, max_terms: usize) -> Result<(), FitError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(FitError::InvalidRequest(format!("horizon = {horizon} must be > 0")));
    }
    if !(tol > 0.0) {
        return Err(FitError::InvalidRequest(format!("tol = {tol} must be > 0")));
    }
    if max_terms == 0 {
        return Err(FitError::InvalidRequest("max_terms must be >= 1".into()));
    }
    Ok(())
}

/// Fits pre-sampled kernel values (uniform grid starting at t = 0).
pub fn fit_samples(
    samples: &KernelSamples,
    tol: f64,
    max_terms: usize,
    controls: &FitControls,
) -> Result<CorrelationFit, FitError> {
    validate_request(samples.horizon(), tol, max_terms)?;
    if samples.times.len() < 4 * max_terms + 2 {
        return Err(FitError::InvalidRequest(format!(
            "{} samples cannot determine {max_terms} terms",
            samples.times.len()
        )));
    }
    let first = samples.values[0].norm();
    let last = samples.values.last().map(|v| v.norm()).unwrap_or(0.0);
    if last > tol * first {
        log::warn!(
            "|C(horizon)| = {last:e} has not decayed below tol·|C(0)| = {:e}; consider a longer horizon",
            tol * first
        );
    }
    if samples.values.iter().all(|v| v.norm() == 0.0) {
        let mut fit = CorrelationFit::uncoupled();
        fit.sample_horizon = samples.horizon();
        return Ok(fit);
    }

    let problem = Problem::new(samples);
    let mut rng = ChaCha8Rng::seed_from_u64(controls.seed);
    let mut previous: Option<Candidate> = None;
    let mut overall: Option<Candidate> = None;
    for k in 1..=max_terms {
        let best = problem.fit_terms(k, previous.as_ref(), controls, &mut rng);
        log::debug!("k = {k}: residual {:e}", best.ssr);
        let accepted = best.ssr <= tol;
        if overall.as_ref().is_none_or(|o| best.ssr < o.ssr) {
            overall = Some(best.clone());
        }
        if accepted {
            return Ok(best.into_fit(samples.horizon()));
        }
        previous = Some(best);
    }
    let best = overall.expect("at least one term count tried");
    Err(FitError::NotConverged {
        best: Box::new(best.into_fit(samples.horizon())),
        tol,
        max_terms,
    })
}

#[derive(Debug, Clone)]
struct Candidate {
    alpha: Vec<Complex64>,
    gamma: Vec<Complex64>,
    ssr: f64,
}

impl Candidate {
    fn into_fit(self, horizon: f64) -> CorrelationFit {
        let mut terms: Vec<ExpTerm> = self
            .alpha
            .into_iter()
            .zip(self.gamma)
            .map(|(alpha, gamma)| ExpTerm { alpha, gamma })
            .collect();
        // slowest decay first
        terms.sort_by(|a, b| b.gamma.re.total_cmp(&a.gamma.re));
        CorrelationFit {
            terms,
            residual: self.ssr,
            sample_horizon: horizon,
        }
    }
}

struct Problem {
    times: Vec<f64>,
    dt: f64,
    sqrt_w: Vec<f64>,
    /// Samples pre-multiplied by the square-root weights.
    target: Vec<Complex64>,
    raw: Vec<Complex64>,
}

impl Problem {
    fn new(samples: &KernelSamples) -> Self {
        let n = samples.times.len();
        let dt = samples.step();
        let sqrt_w: Vec<f64> = (0..n)
            .map(|i| if i == 0 || i == n - 1 { (0.5 * dt).sqrt() } else { dt.sqrt() })
            .collect();
        let target = samples.values.iter().zip(&sqrt_w).map(|(v, w)| v * w).collect();
        Self {
            times: samples.times.clone(),
            dt,
            sqrt_w,
            target,
            raw: samples.values.clone(),
        }
    }

    fn len(&self) -> usize {
        self.times.len()
    }

    /// Weighted basis column `√w_i e^{γ t_i}`, built by repeated multiplication
    /// with periodic exact resets.
    fn column(&self, gamma: Complex64, out: &mut [Complex64]) {
        let z = (gamma * self.dt).exp();
        let mut cur = Complex64::new(1.0, 0.0);
        for (i, o) in out.iter_mut().enumerate() {
            if i % 64 == 0 {
                cur = (gamma * self.times[i]).exp();
            }
            *o = cur * self.sqrt_w[i];
            cur *= z;
        }
    }

    fn basis(&self, gamma: &[Complex64]) -> DMatrix<Complex64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, gamma.len());
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for (j, &g) in gamma.iter().enumerate() {
            self.column(g, &mut col);
            m.column_mut(j).copy_from_slice(&col);
        }
        m
    }

    /// Optimal amplitudes for fixed poles (weighted linear least squares).
    fn amplitudes(&self, gamma: &[Complex64]) -> Option<Candidate> {
        let a = self.basis(gamma);
        let b = DVector::from_column_slice(&self.target);
        let svd = a.clone().svd(true, true);
        let alpha = svd.solve(&b, 1e-13).ok()?;
        let resid = &b - &a * &alpha;
        let ssr = resid.norm_squared();
        ssr.is_finite().then(|| Candidate {
            alpha: alpha.iter().copied().collect(),
            gamma: gamma.to_vec(),
            ssr,
        })
    }

    fn residual(&self, alpha: &[Complex64], cols: &DMatrix<Complex64>) -> (Vec<Complex64>, f64) {
        let mut r = self.target.clone();
        for (j, a) in alpha.iter().enumerate() {
            for (ri, e) in r.iter_mut().zip(cols.column(j).iter()) {
                *ri -= a * e;
            }
        }
        let ssr = r.iter().map(|z| z.norm_sqr()).sum();
        (r, ssr)
    }

    /// Complex Levenberg–Marquardt on all amplitudes and poles. The model is
    /// holomorphic in its parameters, so the Gauss–Newton system can be formed
    /// directly in complex arithmetic.
    fn polish(&self, start: Candidate, max_iter: usize) -> Candidate {
        let k = start.alpha.len();
        let n = self.len();
        let mut alpha = start.alpha;
        let mut gamma = start.gamma;
        let mut cols = self.basis(&gamma);
        let (mut r, mut ssr) = self.residual(&alpha, &cols);
        let mut lambda = 1e-3;
        let mut stalled = 0;
        let mut jac = DMatrix::<Complex64>::zeros(n, 2 * k);
        for _ in 0..max_iter {
            for j in 0..k {
                for i in 0..n {
                    let e = cols[(i, j)];
                    jac[(i, j)] = e;
                    jac[(i, k + j)] = alpha[j] * self.times[i] * e;
                }
            }
            let jh = jac.adjoint();
            let normal = &jh * &jac;
            let grad = &jh * DVector::from_column_slice(&r);
            let mut accepted = false;
            while lambda < 1e14 {
                let mut damped = normal.clone();
                for d in 0..2 * k {
                    let diag = normal[(d, d)].re.max(1e-300);
                    damped[(d, d)] += Complex64::new(lambda * diag, 0.0);
                }
                let Some(step) = damped.lu().solve(&grad) else {
                    lambda *= 10.0;
                    continue;
                };
                let trial_alpha: Vec<Complex64> = (0..k).map(|j| alpha[j] + step[j]).collect();
                let trial_gamma: Vec<Complex64> = (0..k).map(|j| gamma[j] + step[k + j]).collect();
                if trial_gamma.iter().any(|g| g.re > -MIN_DECAY || !g.re.is_finite() || !g.im.is_finite()) {
                    lambda *= 4.0;
                    continue;
                }
                let trial_cols = self.basis(&trial_gamma);
                let (trial_r, trial_ssr) = self.residual(&trial_alpha, &trial_cols);
                if trial_ssr.is_finite() && trial_ssr < ssr {
                    let gain = (ssr - trial_ssr) / ssr.max(1e-300);
                    alpha = trial_alpha;
                    gamma = trial_gamma;
                    cols = trial_cols;
                    r = trial_r;
                    ssr = trial_ssr;
                    lambda = (lambda / 3.0).max(1e-15);
                    stalled = if gain < 1e-12 { stalled + 1 } else { 0 };
                    accepted = true;
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted || stalled >= 4 {
                break;
            }
        }
        Candidate { alpha, gamma, ssr }
    }

    fn seeds(&self, k: usize, previous: Option<&Candidate>, random: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Complex64>> {
        let mut seeds = Vec::new();
        if let Some(poles) = matrix_pencil(&self.raw, self.dt, k) {
            seeds.push(poles);
        }
        if let Some(prev) = previous {
            for extra in [
                Complex64::new(-0.3, 0.0),
                Complex64::new(-2.0, -1.0),
                Complex64::new(-10.0, -10.0),
                Complex64::new(-40.0, -40.0),
            ] {
                let mut g = prev.gamma.clone();
                g.push(extra);
                seeds.push(g);
            }
        }
        for _ in 0..random {
            let g = (0..k)
                .map(|_| {
                    let rate = rng.random_range(0.1f64.ln()..60.0f64.ln()).exp();
                    Complex64::new(-rate, rng.random_range(-60.0..10.0))
                })
                .collect();
            seeds.push(g);
        }
        seeds
    }

    fn fit_terms(&self, k: usize, previous: Option<&Candidate>, controls: &FitControls, rng: &mut ChaCha8Rng) -> Candidate {
        let mut screened: Vec<Candidate> = self
            .seeds(k, previous, controls.random_starts, rng)
            .into_iter()
            .filter_map(|g| self.amplitudes(&g))
            .map(|c| self.polish(c, controls.screening_iterations))
            .collect();
        screened.sort_by(|a, b| a.ssr.total_cmp(&b.ssr));
        screened.truncate(2);
        if screened.is_empty() {
            // every seed was degenerate; fall back to a fixed ladder of real poles
            let ladder: Vec<Complex64> = (0..k).map(|j| Complex64::new(-(0.5 * 3f64.powi(j as i32)), 0.0)).collect();
            let c = self.amplitudes(&ladder).unwrap_or(Candidate {
                alpha: vec![Complex64::new(0.0, 0.0); k],
                gamma: ladder,
                ssr: f64::INFINITY,
            });
            screened.push(c);
        }
        screened
            .into_iter()
            .map(|c| self.polish(c, controls.max_iterations))
            .min_by(|a, b| a.ssr.total_cmp(&b.ssr))
            .expect("non-empty")
    }
}

/// Matrix-pencil estimate of `k` poles of a uniformly sampled signal.
pub(crate) fn matrix_pencil(values: &[Complex64], dt: f64, k: usize) -> Option<Vec<Complex64>> {
    let stride = (values.len() / 400).max(1);
    let sub: Vec<Complex64> = values.iter().step_by(stride).copied().collect();
    let m = sub.len();
    let pencil = m / 3;
    if pencil < k + 1 || m - pencil < k {
        return None;
    }
    let rows = m - pencil;
    let hankel = DMatrix::from_fn(rows, pencil + 1, |i, j| sub[i + j]);
    let svd = hankel.svd(false, true);
    let v_t = svd.v_t?;
    // signal subspace: the first k right singular vectors (rows of Vᴴ, transposed
    // without conjugation so that shifting rows multiplies by the poles)
    let w = v_t.rows(0, k).transpose();
    let w1 = w.rows(0, pencil).into_owned();
    let w2 = w.rows(1, pencil).into_owned();
    let pinv = w1.pseudo_inverse(1e-14).ok()?;
    let reduced = pinv * w2;
    let z = reduced.eigenvalues()?;
    let h = dt * stride as f64;
    Some(
        z.iter()
            .map(|&zi| {
                let zi = if zi.norm() < 1e-300 { Complex64::new(1e-300, 0.0) } else { zi };
                let g = zi.ln() / h;
                Complex64::new(g.re.min(-1e-3), g.im)
            })
            .collect(),
    )
}
