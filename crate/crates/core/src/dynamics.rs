//! Time-local propagation in the extended space `(ρ_s, K_1, …, K_n)`:
//!
//! ```text
//! dρ_s/dt = L_s(t) ρ_s − i[σ_x, Σ_k (K_k + K_k†)]
//! dK_k/dt = (L_s(t) + γ_k) K_k − i α_k σ_x ρ_s
//! ```
//!
//! with `L_s(t) A = −i[H_s(t), A]`. Only the `K_k` are stored; `K_k†` is
//! their conjugate transpose, which obeys the conjugated equation exactly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::CorrelationFit;
use crate::integrator::{Dopri5, OdeControls, OdeError};
use crate::operators::{pauli, Axis, QubitOperator};

/// Qubit splitting: `H_s = Ω σ_z` with Ω = 1 sets the units.
pub const OMEGA: f64 = 1.0;

/// Fraction of the shorter of the carrier and Rabi periods allowed per step
/// while a drive is on.
const DRIVE_STEP_FRACTION: f64 = 0.02;

const TRACE_DRIFT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state carries {found} auxiliary matrices but the fit has {expected} terms")]
    AuxMismatch { expected: usize, found: usize },
    #[error("{source} (max |Re γ| = {max_decay:.3e}, drive amplitude {drive_amplitude})")]
    Integration {
        source: OdeError,
        max_decay: f64,
        drive_amplitude: f64,
    },
    #[error("trace of ρ_s drifted by {drift:e} over the propagation")]
    TraceDrift { drift: f64 },
    #[error("no stationary state by t = {t_max}: |dρ/dt| = {rho_rate:e}, max |dK/dt| = {aux_rate:e}")]
    NotConverged { t_max: f64, rho_rate: f64, aux_rate: f64 },
    #[error("initial state {0} needs a stored source state")]
    MissingSource(&'static str),
    #[error("invalid drive: {0}")]
    InvalidDrive(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Classical drive on `σ_x`, active for `window.0 ≤ t < window.1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    /// Rabi frequency Ω_R.
    pub amplitude: f64,
    /// Carrier ω_L.
    pub frequency: f64,
    pub rwa: bool,
    pub window: (f64, f64),
}

impl DriveSpec {
    pub fn off() -> Self {
        Self {
            amplitude: 0.0,
            frequency: 2.0 * OMEGA,
            rwa: false,
            window: (0.0, 0.0),
        }
    }

    /// Resonant pulse `ω_L = 2Ω` on `[0, duration)`.
    pub fn resonant(amplitude: f64, rwa: bool, duration: f64) -> Self {
        Self {
            amplitude,
            frequency: 2.0 * OMEGA,
            rwa,
            window: (0.0, duration),
        }
    }

    pub fn with_window(self, t_on: f64, t_off: f64) -> Self {
        Self {
            window: (t_on, t_off),
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(DynamicsError::InvalidDrive(format!("amplitude {} must be >= 0", self.amplitude)));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(DynamicsError::InvalidDrive(format!("frequency {} must be > 0", self.frequency)));
        }
        let (on, off) = self.window;
        if !(on.is_finite() && off.is_finite() && on <= off) {
            return Err(DynamicsError::InvalidDrive(format!("window [{on}, {off}] is not ordered")));
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.amplitude > 0.0 && t >= self.window.0 && t < self.window.1
    }

    pub fn duration(&self) -> f64 {
        self.window.1 - self.window.0
    }

    /// Step cap that resolves both the carrier and the Rabi oscillation.
    pub fn step_cap(&self) -> f64 {
        if self.amplitude == 0.0 {
            return f64::INFINITY;
        }
        let tau = std::f64::consts::TAU;
        DRIVE_STEP_FRACTION * (tau / self.frequency).min(tau / self.amplitude)
    }
}

/// `H_s(t) = Ω σ_z + H_d(t)`.
pub fn system_hamiltonian(drive: &DriveSpec, t: f64) -> QubitOperator {
    let mut h = pauli(Axis::Z) * OMEGA;
    if drive.is_active(t) {
        let phase = drive.frequency * t;
        if drive.rwa {
            // (Ω_R/2)(σ₊ e^{−iω_L t} + σ₋ e^{iω_L t})
            let e = Complex64::from_polar(0.5 * drive.amplitude, -phase);
            h.m[0][1] += e;
            h.m[1][0] += e.conj();
        } else {
            let v = drive.amplitude * phase.cos();
            h.m[0][1] += v;
            h.m[1][0] += v;
        }
    }
    h
}

/// Reduced state plus one auxiliary matrix per kernel term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub rho: QubitOperator,
    pub aux: Vec<QubitOperator>,
    pub t: f64,
}

impl ExtendedState {
    /// Factorized state: `aux = 0`.
    pub fn factorized(rho: QubitOperator, terms: usize, t: f64) -> Self {
        Self {
            rho,
            aux: vec![QubitOperator::zero(); terms],
            t,
        }
    }

    pub fn len(&self) -> usize {
        4 * (1 + self.aux.len())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check_fit(&self, fit: &CorrelationFit) -> Result<(), DynamicsError> {
        if self.aux.len() != fit.len() {
            return Err(DynamicsError::AuxMismatch {
                expected: fit.len(),
                found: self.aux.len(),
            });
        }
        Ok(())
    }

    pub fn write_flat(&self, out: &mut [Complex64]) {
        for (chunk, op) in out.chunks_exact_mut(4).zip(std::iter::once(&self.rho).chain(&self.aux)) {
            chunk.copy_from_slice(&op.entries());
        }
    }

    pub fn from_flat(flat: &[Complex64], t: f64) -> Self {
        let mut ops = flat.chunks_exact(4).map(|c| QubitOperator::from_entries([c[0], c[1], c[2], c[3]]));
        let rho = ops.next().expect("flat state holds ρ_s");
        Self { rho, aux: ops.collect(), t }
    }

    /// Componentwise `a·self + b·other` (same time, same term count).
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        Self {
            rho: self.rho * a + other.rho * b,
            aux: self.aux.iter().zip(&other.aux).map(|(x, y)| *x * a + *y * b).collect(),
            t: self.t,
        }
    }

    /// Same `ρ_s` with the auxiliary matrices cleared.
    pub fn factorized_part(&self) -> Self {
        Self::factorized(self.rho, self.aux.len(), self.t)
    }

    /// `ρ_s = 0` with the same auxiliary matrices.
    pub fn correlation_part(&self) -> Self {
        Self {
            rho: QubitOperator::zero(),
            aux: self.aux.clone(),
            t: self.t,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = (self.rho - other.rho).max_abs();
        for (x, y) in self.aux.iter().zip(&other.aux) {
            m = m.max((*x - *y).max_abs());
        }
        m
    }
}

/// Applies the generator to `blocks` consecutive extended states packed in `y`.
fn apply_generator(fit: &CorrelationFit, h: &QubitOperator, y: &[Complex64], dy: &mut [Complex64]) {
    let sx = pauli(Axis::X);
    let mi = Complex64::new(0.0, -1.0);
    let width = 4 * (1 + fit.len());
    for (yb, db) in y.chunks_exact(width).zip(dy.chunks_exact_mut(width)) {
        let rho = QubitOperator::from_entries([yb[0], yb[1], yb[2], yb[3]]);
        let sx_rho = sx * rho;
        let mut sum = QubitOperator::zero();
        for (k, term) in fit.terms.iter().enumerate() {
            let o = 4 * (k + 1);
            let kk = QubitOperator::from_entries([yb[o], yb[o + 1], yb[o + 2], yb[o + 3]]);
            sum += kk + kk.dagger();
            let dk = h.commutator(&kk) * mi + kk * term.gamma + sx_rho * (mi * term.alpha);
            db[o..o + 4].copy_from_slice(&dk.entries());
        }
        let drho = (h.commutator(&rho) + sx.commutator(&sum)) * mi;
        db[..4].copy_from_slice(&drho.entries());
    }
}

/// Time derivative of the extended state.
pub fn rhs(state: &ExtendedState, fit: &CorrelationFit, drive: &DriveSpec) -> Result<ExtendedState, DynamicsError> {
    state.check_fit(fit)?;
    let mut y = vec![Complex64::new(0.0, 0.0); state.len()];
    let mut dy = y.clone();
    state.write_flat(&mut y);
    apply_generator(fit, &system_hamiltonian(drive, state.t), &y, &mut dy);
    Ok(ExtendedState::from_flat(&dy, state.t))
}

/// Norms of `dρ/dt` and the largest `dK_k/dt` (Frobenius).
pub fn derivative_norms(state: &ExtendedState, fit: &CorrelationFit, drive: &DriveSpec) -> Result<(f64, f64), DynamicsError> {
    let d = rhs(state, fit, drive)?;
    let aux = d.aux.iter().map(|k| k.norm()).fold(0.0, f64::max);
    Ok((d.rho.norm(), aux))
}

/// Propagates extended states under one kernel fit and drive.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    fit: &'a CorrelationFit,
    drive: DriveSpec,
    controls: OdeControls,
}

impl<'a> Propagator<'a> {
    pub fn new(fit: &'a CorrelationFit, drive: DriveSpec, controls: OdeControls) -> Result<Self, DynamicsError> {
        drive.validate()?;
        Ok(Self { fit, drive, controls })
    }

    pub fn fit(&self) -> &CorrelationFit {
        self.fit
    }

    pub fn drive(&self) -> &DriveSpec {
        &self.drive
    }

    pub fn controls(&self) -> &OdeControls {
        &self.controls
    }

    /// `[t0, t_end]` cut at the drive-window edges, each piece tagged with its step cap.
    fn segments(&self, t0: f64, t_end: f64) -> Vec<(f64, f64, f64)> {
        let mut cuts = vec![t0];
        if self.drive.amplitude > 0.0 {
            for edge in [self.drive.window.0, self.drive.window.1] {
                if edge > t0 && edge < t_end {
                    cuts.push(edge);
                }
            }
        }
        cuts.push(t_end);
        cuts.windows(2)
            .filter(|w| w[1] > w[0] || t0 == t_end)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let cap = if self.drive.is_active(mid) {
                    self.controls.max_step.min(self.drive.step_cap())
                } else {
                    self.controls.max_step
                };
                (w[0], w[1], cap)
            })
            .collect()
    }

    fn wrap(&self, source: OdeError) -> DynamicsError {
        DynamicsError::Integration {
            source,
            max_decay: self.fit.max_decay_rate(),
            drive_amplitude: self.drive.amplitude,
        }
    }

    /// Propagates several states together with shared step control. The
    /// observer receives every output time in `[t0, t_end]` with all states.
    pub fn run_batch<O>(&self, states: &[ExtendedState], t_end: f64, outputs: &[f64], mut observe: O) -> Result<Vec<ExtendedState>, DynamicsError>
    where
        O: FnMut(f64, &[ExtendedState]),
    {
        let Some(first) = states.first() else {
            return Ok(Vec::new());
        };
        let t0 = first.t;
        for s in states {
            s.check_fit(self.fit)?;
            if s.t != t0 {
                return Err(DynamicsError::InvalidRequest("batched states must share their start time".into()));
            }
        }
        if !(t_end >= t0) {
            return Err(DynamicsError::InvalidRequest(format!("t_end = {t_end} precedes t = {t0}")));
        }
        let width = first.len();
        let mut y = vec![Complex64::new(0.0, 0.0); width * states.len()];
        for (chunk, s) in y.chunks_exact_mut(width).zip(states) {
            s.write_flat(chunk);
        }
        let traces: Vec<Complex64> = states.iter().map(|s| s.rho.trace()).collect();

        let mut solver = Dopri5::new(self.controls);
        let fit = self.fit;
        let drive = self.drive;
        let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            apply_generator(fit, &system_hamiltonian(&drive, t), y, dy);
        };
        let mut emitted = outputs.partition_point(|&s| s < t0);
        for (a, b, cap) in self.segments(t0, t_end) {
            solver.set_max_step(cap);
            // a time on a segment edge is emitted once, by the earlier segment
            let seg_out = &outputs[emitted..outputs.partition_point(|&s| s <= b)];
            emitted += seg_out.len();
            let mut sink = |t: f64, v: &[Complex64]| {
                let snap: Vec<ExtendedState> = v.chunks_exact(width).map(|c| ExtendedState::from_flat(c, t)).collect();
                observe(t, &snap);
            };
            solver.integrate(&mut f, a, &mut y, b, seg_out, &mut sink).map_err(|e| self.wrap(e))?;
        }
        let finals: Vec<ExtendedState> = y.chunks_exact(width).map(|c| ExtendedState::from_flat(c, t_end)).collect();
        for (s, tr0) in finals.iter().zip(&traces) {
            let drift = (s.rho.trace() - tr0).norm();
            if !(drift < TRACE_DRIFT_TOL) {
                return Err(DynamicsError::TraceDrift { drift });
            }
        }
        log::debug!(
            "propagated {} state(s) over [{t0}, {t_end}]: {} steps, {} rejected",
            states.len(),
            solver.stats.accepted,
            solver.stats.rejected
        );
        Ok(finals)
    }

    /// Propagates one state to `t_end`, reporting snapshots at `outputs`.
    pub fn run<O>(&self, state: &ExtendedState, t_end: f64, outputs: &[f64], mut observe: O) -> Result<ExtendedState, DynamicsError>
    where
        O: FnMut(&ExtendedState),
    {
        let mut out = self.run_batch(std::slice::from_ref(state), t_end, outputs, |_, s| observe(&s[0]))?;
        Ok(out.pop().expect("one state in, one out"))
    }
}

/// Snapshots of `state` propagated to `t_end`, one per output time.
pub fn integrate(
    state: &ExtendedState,
    fit: &CorrelationFit,
    drive: &DriveSpec,
    t_end: f64,
    controls: &OdeControls,
    output_times: &[f64],
) -> Result<Vec<ExtendedState>, DynamicsError> {
    let prop = Propagator::new(fit, *drive, *controls)?;
    let mut snaps = Vec::with_capacity(output_times.len());
    prop.run(state, t_end, output_times, |s| snaps.push(s.clone()))?;
    Ok(snaps)
}

/// Gibbs state of `Ω σ_z`: populations `e^{∓βΩ}/Z` on `|1⟩`, `|0⟩`.
pub fn gibbs_state(beta: f64) -> QubitOperator {
    let x = 2.0 * beta * OMEGA;
    // written to avoid overflow of e^{βΩ} at low temperature
    let p1 = 1.0 / (1.0 + x.exp());
    let p0 = 1.0 / (1.0 + (-x).exp());
    QubitOperator::from_real(p1, 0.0, 0.0, p0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibrationControls {
    pub tol_stationary: f64,
    pub t_max: f64,
    /// Length of each propagation chunk between stationarity checks.
    pub chunk: f64,
}

impl Default for EquilibrationControls {
    fn default() -> Self {
        Self {
            tol_stationary: 1e-10,
            t_max: 2000.0,
            chunk: 5.0,
        }
    }
}

/// Correlated equilibrium reached by field-free relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// The stationary state, with its clock reset to `t = 0`.
    pub state: ExtendedState,
    /// Relaxation time needed from Initial-C.
    pub horizon: f64,
    pub rho_rate: f64,
    pub aux_rate: f64,
}

/// Relaxes Initial-C (`ρ_s^eq`, `K = 0`) without drive until every
/// derivative norm is below `tol_stationary`.
pub fn equilibrate(
    fit: &CorrelationFit,
    beta: f64,
    eq: &EquilibrationControls,
    controls: &OdeControls,
) -> Result<Equilibrium, DynamicsError> {
    if !(eq.tol_stationary > 0.0 && eq.t_max > 0.0 && eq.chunk > 0.0) {
        return Err(DynamicsError::InvalidRequest(
            "equilibration needs positive tolerance, t_max and chunk".into(),
        ));
    }
    let drive = DriveSpec::off();
    // Near the fixed point the error estimate lets the step grow to the stability
    // edge of the fastest pole, where step-control noise swamps the derivative
    // threshold. Staying well inside the stability region damps that noise.
    let fastest = fit.terms.iter().map(|t| t.gamma.norm()).fold(0.0, f64::max);
    let cap = if fastest > 0.0 { 1.0 / fastest } else { f64::INFINITY };
    let prop = Propagator::new(fit, drive, controls.with_max_step(controls.max_step.min(cap)))?;
    let mut state = ExtendedState::factorized(gibbs_state(beta), fit.len(), 0.0);
    loop {
        let (rho_rate, aux_rate) = derivative_norms(&state, fit, &drive)?;
        if rho_rate < eq.tol_stationary && aux_rate < eq.tol_stationary {
            let horizon = state.t;
            state.t = 0.0;
            return Ok(Equilibrium {
                state,
                horizon,
                rho_rate,
                aux_rate,
            });
        }
        if state.t >= eq.t_max {
            return Err(DynamicsError::NotConverged {
                t_max: eq.t_max,
                rho_rate,
                aux_rate,
            });
        }
        let t_next = (state.t + eq.chunk).min(eq.t_max);
        state = prop.run(&state, t_next, &[], |_| {})?;
    }
}

/// Named initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStateKind {
    /// Correlated total equilibrium.
    A,
    /// Reduced state of A with the correlations dropped.
    B,
    /// `ρ_s^eq ⊗ ρ_b`.
    C,
    /// Given system state with a thermal bath.
    D(QubitOperator),
    PreparedSnapshot(ExtendedState),
    /// Factorized part of a stored snapshot (Prepared-A1, Prepared-C1).
    FactorizedSnapshot(ExtendedState),
    /// `ρ_s = 0` with the given auxiliary matrices.
    ZeroRho(Vec<QubitOperator>),
    /// Given `ρ_s` with `K = 0`.
    ZeroAux(QubitOperator),
}

pub fn build_initial(
    kind: &InitialStateKind,
    fit: &CorrelationFit,
    beta: f64,
    equilibrium: Option<&ExtendedState>,
) -> Result<ExtendedState, DynamicsError> {
    let n = fit.len();
    let state = match kind {
        InitialStateKind::A => equilibrium.ok_or(DynamicsError::MissingSource("A"))?.clone(),
        InitialStateKind::B => equilibrium.ok_or(DynamicsError::MissingSource("B"))?.factorized_part(),
        InitialStateKind::C => ExtendedState::factorized(gibbs_state(beta), n, 0.0),
        InitialStateKind::D(rho) | InitialStateKind::ZeroAux(rho) => ExtendedState::factorized(*rho, n, 0.0),
        InitialStateKind::PreparedSnapshot(s) => s.clone(),
        InitialStateKind::FactorizedSnapshot(s) => s.factorized_part(),
        InitialStateKind::ZeroRho(aux) => ExtendedState {
            rho: QubitOperator::zero(),
            aux: aux.clone(),
            t: 0.0,
        },
    };
    state.check_fit(fit)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::ExpTerm;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn one_term() -> CorrelationFit {
        CorrelationFit {
            terms: vec![ExpTerm {
                alpha: c(0.2, -0.05),
                gamma: c(-1.5, -0.7),
            }],
            residual: 0.0,
            sample_horizon: 10.0,
        }
    }

    #[test]
    fn field_free_hamiltonian() {
        let d = DriveSpec::resonant(0.0, false, 10.0);
        assert_eq!(system_hamiltonian(&d, 3.0), pauli(Axis::Z));
    }

    #[test]
    fn cosine_node_leaves_bare_hamiltonian() {
        let d = DriveSpec::resonant(0.7, false, 10.0);
        let t = std::f64::consts::FRAC_PI_2 / d.frequency;
        assert!(system_hamiltonian(&d, t).approx_eq(&pauli(Axis::Z), 1e-15));
    }

    #[test]
    fn drive_is_confined_to_window() {
        let d = DriveSpec::resonant(0.7, true, 1.0).with_window(1.0, 2.0);
        assert_eq!(system_hamiltonian(&d, 0.5), pauli(Axis::Z));
        assert_eq!(system_hamiltonian(&d, 2.0), pauli(Axis::Z));
        assert_ne!(system_hamiltonian(&d, 1.5), pauli(Axis::Z));
    }

    #[test]
    fn rwa_hamiltonian_is_hermitian() {
        let d = DriveSpec::resonant(1.3, true, 100.0);
        for i in 0..50 {
            assert!(system_hamiltonian(&d, 0.37 * i as f64).is_hermitian(1e-15));
        }
    }

    #[test]
    fn rejects_bad_drives() {
        assert!(DriveSpec::resonant(-1.0, false, 1.0).validate().is_err());
        assert!(DriveSpec::resonant(1.0, false, 1.0).with_window(2.0, 1.0).validate().is_err());
        let mut d = DriveSpec::off();
        d.frequency = 0.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn uncoupled_rhs_is_commutator() {
        let fit = CorrelationFit::uncoupled();
        let drive = DriveSpec::resonant(0.4, false, 10.0);
        let rho = QubitOperator::from_bloch(0.3, -0.2, 0.5);
        let s = ExtendedState::factorized(rho, 1, 0.9);
        let d = rhs(&s, &fit, &drive).unwrap();
        let expected = crate::operators::liouville_apply(&system_hamiltonian(&drive, 0.9), &rho);
        assert!(d.rho.approx_eq(&expected, 1e-15));
        assert_eq!(d.aux[0], QubitOperator::zero());
    }

    #[test]
    fn rhs_is_traceless_for_hermitian_rho() {
        let fit = one_term();
        let s = ExtendedState {
            rho: QubitOperator::from_bloch(0.1, 0.4, -0.6),
            aux: vec![QubitOperator::new(c(0.3, 0.1), c(-0.2, 0.5), c(0.7, -0.4), c(0.05, 0.2))],
            t: 0.0,
        };
        let d = rhs(&s, &fit, &DriveSpec::resonant(2.0, false, 5.0)).unwrap();
        assert!(d.rho.trace().norm() < 1e-15);
        assert!(d.rho.is_hermitian(1e-15));
    }

    #[test]
    fn aux_mismatch_is_reported() {
        let s = ExtendedState::factorized(QubitOperator::ground(), 3, 0.0);
        assert!(matches!(
            rhs(&s, &one_term(), &DriveSpec::off()),
            Err(DynamicsError::AuxMismatch { expected: 1, found: 3 })
        ));
    }

    #[test]
    fn flat_round_trip() {
        let s = ExtendedState {
            rho: QubitOperator::from_bloch(0.1, 0.2, 0.3),
            aux: vec![QubitOperator::new(c(1.0, 2.0), c(3.0, 4.0), c(5.0, 6.0), c(7.0, 8.0))],
            t: 1.5,
        };
        let mut flat = vec![c(0.0, 0.0); s.len()];
        s.write_flat(&mut flat);
        assert_eq!(ExtendedState::from_flat(&flat, 1.5), s);
    }

    #[test]
    fn segments_split_at_window_edges() {
        let fit = CorrelationFit::uncoupled();
        let drive = DriveSpec::resonant(1.0, false, 1.0).with_window(1.0, 3.0);
        let prop = Propagator::new(&fit, drive, OdeControls::default()).unwrap();
        let segs = prop.segments(0.0, 5.0);
        assert_eq!(segs.len(), 3);
        assert_eq!((segs[0].0, segs[0].1), (0.0, 1.0));
        assert!(segs[0].2.is_infinite());
        assert!((segs[1].2 - 0.02 * std::f64::consts::PI).abs() < 1e-15);
        assert!(segs[2].2.is_infinite());
    }

    #[test]
    fn gibbs_state_at_low_temperature() {
        let rho = gibbs_state(10.0);
        assert!(rho.is_density_matrix());
        let sz = (rho.m[0][0] - rho.m[1][1]).re;
        assert!((sz + 10.0f64.tanh()).abs() < 1e-15);
        let hot = gibbs_state(1e-9);
        assert!((hot.m[0][0].re - 0.5).abs() < 1e-8);
        assert!(gibbs_state(1e4).m[0][0].re >= 0.0);
    }

    #[test]
    fn build_requires_equilibrium() {
        let fit = one_term();
        assert!(matches!(
            build_initial(&InitialStateKind::A, &fit, 10.0, None),
            Err(DynamicsError::MissingSource("A"))
        ));
        let d = build_initial(&InitialStateKind::D(QubitOperator::ground()), &fit, 10.0, None).unwrap();
        assert_eq!(crate::operators::bloch_vector(&d.rho), [0.0, 0.0, -1.0]);
        assert!(d.aux.iter().all(|k| *k == QubitOperator::zero()));
    }
}
