//! Declarative experiments: scenario configs, pulse-duration search,
//! scans over drive amplitude and coupling, and prepared-state pipelines.
//!
//! A scenario is a TOML file. Times and frequencies are in units of Ω (and
//! 1/Ω); pulse-search windows are in units of π/Ω_R.
//!
//! ```toml
//! [bath]
//! xi = 0.1
//! omega_c = 7.5
//! beta = 10.0
//!
//! [drive]
//! amplitude = 40.0
//! duration = 0.04
//!
//! [[initial]]
//! kind = "A"
//!
//! [[initial]]
//! kind = "C"
//!
//! [output]
//! t_end = 20.0
//! ```

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::bath::{fit_correlation_with, BathSpec, CorrelationFit, FitControls, FitError};
use crate::bounds::{bound_series, BoundSeries, BoundsError};
use crate::dynamics::{
    build_initial, equilibrate, DriveSpec, DynamicsError, EquilibrationControls, Equilibrium, ExtendedState,
    InitialStateKind, Propagator, OMEGA,
};
use crate::integrator::OdeControls;
use crate::io::{read_fit, read_snapshot, FileError};
use crate::observables::{fidelity_excited, preparation_error, trace_distance, SeriesError, TimeSeries};
use crate::operators::QubitOperator;

/// Carrier periods are sampled at least this finely inside drive windows.
const POINTS_PER_CARRIER: f64 = 40.0;
/// The coarse duration grid resolves the carrier at least this finely.
const SEARCH_POINTS_PER_CARRIER: f64 = 16.0;
const MIN_COARSE_POINTS: usize = 200;
const INVPHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(
        "error minimum at the edge of the search window [{:.4}, {:.4}] (duration {duration:.6}, error {error:e}); widen optimize.window",
        window.0, window.1
    )]
    BoundaryHit { duration: f64, error: f64, window: (f64, f64) },
}

impl ScenarioError {
    fn config(path: &str, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.to_owned(),
            message: message.into(),
        }
    }

    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::File(_) => 2,
            Self::Dynamics(DynamicsError::InvalidDrive(_) | DynamicsError::InvalidRequest(_)) => 2,
            Self::Fit(FitError::InvalidRequest(_)) => 2,
            _ => 3,
        }
    }
}

// ---------------------------------------------------------------- config files

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_fit_tol")]
    pub tol: f64,
    #[serde(default = "default_max_terms")]
    pub max_terms: usize,
    #[serde(default = "default_fit_horizon")]
    pub horizon: f64,
    #[serde(default = "default_fit_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Load this fit instead of fitting.
    pub file: Option<PathBuf>,
}

fn default_fit_tol() -> f64 {
    1e-7
}
fn default_max_terms() -> usize {
    6
}
fn default_fit_horizon() -> f64 {
    70.0
}
fn default_fit_samples() -> usize {
    FitControls::default().samples
}
fn default_seed() -> u64 {
    FitControls::default().seed
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: default_fit_tol(),
            max_terms: default_max_terms(),
            horizon: default_fit_horizon(),
            samples: default_fit_samples(),
            seed: default_seed(),
            file: None,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.tol > 0.0) {
            return Err(ScenarioError::config("fit.tol", "must be > 0"));
        }
        if self.max_terms == 0 {
            return Err(ScenarioError::config("fit.max_terms", "must be >= 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ScenarioError::config("fit.horizon", "must be > 0"));
        }
        if self.samples < 4 * self.max_terms + 2 {
            return Err(ScenarioError::config("fit.samples", "too few samples for fit.max_terms"));
        }
        Ok(())
    }

    pub fn controls(&self) -> FitControls {
        FitControls {
            samples: self.samples,
            seed: self.seed,
            ..FitControls::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub amplitude: f64,
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    #[serde(default)]
    pub rwa: bool,
    #[serde(default)]
    pub t_on: f64,
    pub t_off: Option<f64>,
    pub duration: Option<f64>,
    /// Duration in units of π/Ω_R.
    pub pi_pulses: Option<f64>,
}

fn default_frequency() -> f64 {
    2.0 * OMEGA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum StateKind {
    A,
    B,
    C,
    D,
    #[serde(rename = "ground")]
    Ground,
    #[serde(rename = "excited")]
    Excited,
    #[serde(rename = "snapshot")]
    Snapshot,
    #[serde(rename = "factorized_snapshot")]
    FactorizedSnapshot,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: StateKind,
    pub label: Option<String>,
    /// Bloch vector for kind D.
    pub bloch: Option<[f64; 3]>,
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    State,
    Error,
    Fidelity,
    Distance,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Absolute end time.
    pub t_end: Option<f64>,
    /// End time relative to the start of the evolution.
    pub span: Option<f64>,
    #[serde(default = "default_output_samples")]
    pub samples: usize,
    pub times: Option<Vec<f64>>,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
}

fn default_output_samples() -> usize {
    2000
}
fn default_observables() -> Vec<Observable> {
    vec![Observable::State, Observable::Error, Observable::Fidelity, Observable::Distance]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            t_end: None,
            span: None,
            samples: default_output_samples(),
            times: None,
            observables: default_observables(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    pub max_step: Option<f64>,
}

fn default_rtol() -> f64 {
    OdeControls::default().rtol
}
fn default_atol() -> f64 {
    OdeControls::default().atol
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: default_rtol(),
            atol: default_atol(),
            max_step: None,
        }
    }
}

impl IntegratorConfig {
    fn resolve(&self) -> Result<OdeControls, ScenarioError> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(ScenarioError::config("integrator.rtol", "must be in (0, 1)"));
        }
        if !(self.atol > 0.0) {
            return Err(ScenarioError::config("integrator.atol", "must be > 0"));
        }
        let mut c = OdeControls {
            rtol: self.rtol,
            atol: self.atol,
            ..OdeControls::default()
        };
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(ScenarioError::config("integrator.max_step", "must be > 0"));
            }
            c = c.with_max_step(h);
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibrationConfig {
    #[serde(default = "default_eq_tol")]
    pub tol_stationary: f64,
    #[serde(default = "default_eq_tmax")]
    pub t_max: f64,
    #[serde(default = "default_eq_chunk")]
    pub chunk: f64,
}

fn default_eq_tol() -> f64 {
    EquilibrationControls::default().tol_stationary
}
fn default_eq_tmax() -> f64 {
    EquilibrationControls::default().t_max
}
fn default_eq_chunk() -> f64 {
    EquilibrationControls::default().chunk
}

impl Default for EquilibrationConfig {
    fn default() -> Self {
        Self {
            tol_stationary: default_eq_tol(),
            t_max: default_eq_tmax(),
            chunk: default_eq_chunk(),
        }
    }
}

impl EquilibrationConfig {
    fn resolve(&self) -> Result<EquilibrationControls, ScenarioError> {
        if !(self.tol_stationary > 0.0) {
            return Err(ScenarioError::config("equilibration.tol_stationary", "must be > 0"));
        }
        if !(self.t_max > 0.0) {
            return Err(ScenarioError::config("equilibration.t_max", "must be > 0"));
        }
        if !(self.chunk > 0.0) {
            return Err(ScenarioError::config("equilibration.chunk", "must be > 0"));
        }
        Ok(EquilibrationControls {
            tol_stationary: self.tol_stationary,
            t_max: self.t_max,
            chunk: self.chunk,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    /// Duration from the closed system started in |0⟩; error reported for the open system.
    UnitaryReference,
    /// Duration minimizing the open-system error of the first initial state.
    OpenSystem,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub mode: OptimizeMode,
    /// Search window in units of π/Ω_R.
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_coarse_points")]
    pub coarse_points: usize,
    #[serde(default = "default_search_rel_tol")]
    pub rel_tol: f64,
}

fn default_coarse_points() -> usize {
    MIN_COARSE_POINTS
}
fn default_search_rel_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "BathSpec::reference")]
    pub bath: BathSpec,
    #[serde(default)]
    pub fit: FitConfig,
    pub drive: Option<DriveConfig>,
    #[serde(default)]
    pub initial: Vec<InitialConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub equilibration: EquilibrationConfig,
    pub optimize: Option<OptimizeConfig>,
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ScenarioError> {
    toml::from_str(text).map_err(|e| {
        let message = e.message().to_owned();
        let path = e
            .span()
            .map(|s| {
                let line = text[..s.start].lines().count().max(1);
                format!("line {line}")
            })
            .unwrap_or_else(|| "config".into());
        ScenarioError::Config { path, message }
    })
}

fn read_config(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|e| ScenarioError::config(&path.display().to_string(), e.to_string()))
}

// ------------------------------------------------------------- resolved scenario

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    A,
    B,
    C,
    D(QubitOperator),
    Snapshot { path: PathBuf, factorized: bool },
    State(ExtendedState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInitial {
    pub label: String,
    pub spec: InitialSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveDuration {
    Fixed(f64),
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivePlan {
    pub amplitude: f64,
    pub frequency: f64,
    pub rwa: bool,
    pub t_on: f64,
    pub duration: DriveDuration,
}

impl DrivePlan {
    fn spec(&self, duration: f64) -> DriveSpec {
        DriveSpec {
            amplitude: self.amplitude,
            frequency: self.frequency,
            rwa: self.rwa,
            window: (self.t_on, self.t_on + duration),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSearch {
    pub mode: OptimizeMode,
    /// In units of π/Ω_R.
    pub window: (f64, f64),
    pub coarse_points: usize,
    pub rel_tol: f64,
}

impl PulseSearch {
    /// `[0.25, 1.5]·π/Ω_R`, or `[0.2, 1.2]·π/Ω_R` for Ω_R > 10Ω.
    pub fn default_window(amplitude: f64) -> (f64, f64) {
        if amplitude > 10.0 * OMEGA {
            (0.2, 1.2)
        } else {
            (0.25, 1.5)
        }
    }

    pub fn new(mode: OptimizeMode, amplitude: f64) -> Self {
        Self {
            mode,
            window: Self::default_window(amplitude),
            coarse_points: MIN_COARSE_POINTS,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputEnd {
    Absolute(f64),
    Span(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bath: BathSpec,
    pub fit: FitConfig,
    pub drive: Option<DrivePlan>,
    pub initial: Vec<LabeledInitial>,
    pub end: OutputEnd,
    pub samples: usize,
    pub times: Option<Vec<f64>>,
    pub observables: Vec<Observable>,
    pub controls: OdeControls,
    pub equilibration: EquilibrationControls,
    pub search: Option<PulseSearch>,
}

impl PartialEq for FitConfig {
    fn eq(&self, o: &Self) -> bool {
        (self.tol, self.max_terms, self.horizon, self.samples, self.seed, &self.file)
            == (o.tol, o.max_terms, o.horizon, o.samples, o.seed, &o.file)
    }
}

fn finite(path: &str, v: f64) -> Result<f64, ScenarioError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ScenarioError::config(path, "must be finite"))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        Self::from_config(parse_toml(text)?, base_dir)
    }

    /// Relative paths inside the file resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&read_config(path)?, dir)
    }

    pub fn from_config(cfg: ScenarioConfig, base_dir: &Path) -> Result<Self, ScenarioError> {
        cfg.bath
            .validate()
            .map_err(|e| ScenarioError::config("bath", e.to_string()))?;
        cfg.fit.validate()?;
        let mut fit = cfg.fit.clone();
        fit.file = fit.file.map(|f| base_dir.join(f));

        let search = match &cfg.optimize {
            None => None,
            Some(o) => {
                if cfg.drive.is_none() {
                    return Err(ScenarioError::config("optimize", "needs a [drive] section"));
                }
                if o.coarse_points < MIN_COARSE_POINTS {
                    return Err(ScenarioError::config(
                        "optimize.coarse_points",
                        format!("must be >= {MIN_COARSE_POINTS}"),
                    ));
                }
                if !(o.rel_tol > 0.0 && o.rel_tol < 0.1) {
                    return Err(ScenarioError::config("optimize.rel_tol", "must be in (0, 0.1)"));
                }
                let amp = cfg.drive.as_ref().map(|d| d.amplitude).unwrap_or(0.0);
                let window = match o.window {
                    Some([a, b]) => {
                        if !(a > 0.0 && b > a && b.is_finite()) {
                            return Err(ScenarioError::config("optimize.window", "needs 0 < lo < hi"));
                        }
                        (a, b)
                    }
                    None => PulseSearch::default_window(amp),
                };
                Some(PulseSearch {
                    mode: o.mode,
                    window,
                    coarse_points: o.coarse_points,
                    rel_tol: o.rel_tol,
                })
            }
        };

        let drive = match &cfg.drive {
            None => None,
            Some(d) => {
                let amplitude = finite("drive.amplitude", d.amplitude)?;
                if amplitude <= 0.0 {
                    return Err(ScenarioError::config("drive.amplitude", "must be > 0"));
                }
                if !(d.frequency > 0.0 && d.frequency.is_finite()) {
                    return Err(ScenarioError::config("drive.frequency", "must be > 0"));
                }
                let t_on = finite("drive.t_on", d.t_on)?;
                let given = [d.t_off.is_some(), d.duration.is_some(), d.pi_pulses.is_some()]
                    .iter()
                    .filter(|&&b| b)
                    .count();
                let duration = if search.is_some() {
                    if given > 0 {
                        return Err(ScenarioError::config(
                            "drive",
                            "t_off/duration/pi_pulses conflict with [optimize]",
                        ));
                    }
                    DriveDuration::Optimized
                } else {
                    if given != 1 {
                        return Err(ScenarioError::config(
                            "drive",
                            "give exactly one of t_off, duration, pi_pulses (or an [optimize] section)",
                        ));
                    }
                    let len = match (d.t_off, d.duration, d.pi_pulses) {
                        (Some(off), _, _) => finite("drive.t_off", off)? - t_on,
                        (_, Some(len), _) => finite("drive.duration", len)?,
                        (_, _, Some(n)) => finite("drive.pi_pulses", n)? * PI / amplitude,
                        _ => unreachable!(),
                    };
                    if len < 0.0 {
                        return Err(ScenarioError::config("drive", "pulse ends before it starts"));
                    }
                    DriveDuration::Fixed(len)
                };
                Some(DrivePlan {
                    amplitude,
                    frequency: d.frequency,
                    rwa: d.rwa,
                    t_on,
                    duration,
                })
            }
        };

        let mut initial = Vec::new();
        let entries = if cfg.initial.is_empty() {
            vec![InitialConfig {
                kind: StateKind::A,
                label: None,
                bloch: None,
                snapshot: None,
            }]
        } else {
            cfg.initial.clone()
        };
        for (i, e) in entries.iter().enumerate() {
            let path = format!("initial[{i}]");
            initial.push(resolve_initial(e, &path, base_dir)?);
        }
        let mut seen = BTreeSet::new();
        for (i, s) in initial.iter().enumerate() {
            if !seen.insert(s.label.clone()) {
                return Err(ScenarioError::config(&format!("initial[{i}].label"), format!("duplicate label {}", s.label)));
            }
        }

        let out = &cfg.output;
        let end = match (out.t_end, out.span) {
            (Some(_), Some(_)) => return Err(ScenarioError::config("output", "give t_end or span, not both")),
            (Some(t), None) => OutputEnd::Absolute(finite("output.t_end", t)?),
            (None, Some(s)) => {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(ScenarioError::config("output.span", "must be >= 0"));
                }
                OutputEnd::Span(s)
            }
            (None, None) => OutputEnd::Span(20.0),
        };
        if out.samples < 2 {
            return Err(ScenarioError::config("output.samples", "must be >= 2"));
        }
        if let Some(times) = &out.times {
            if times.is_empty() {
                return Err(ScenarioError::config("output.times", "must not be empty"));
            }
            if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(ScenarioError::config(&format!("output.times[{}]", k + 1), "times must increase"));
            }
        }
        Ok(Self {
            bath: cfg.bath,
            fit,
            drive,
            initial,
            end,
            samples: out.samples,
            times: out.times.clone(),
            observables: out.observables.clone(),
            controls: cfg.integrator.resolve()?,
            equilibration: cfg.equilibration.resolve()?,
            search,
        })
    }
}

fn resolve_initial(e: &InitialConfig, path: &str, base_dir: &Path) -> Result<LabeledInitial, ScenarioError> {
    let needs_snapshot = matches!(e.kind, StateKind::Snapshot | StateKind::FactorizedSnapshot);
    if needs_snapshot != e.snapshot.is_some() {
        return Err(ScenarioError::config(
            &format!("{path}.snapshot"),
            if needs_snapshot {
                "required for snapshot kinds"
            } else {
                "only allowed for snapshot kinds"
            },
        ));
    }
    if e.bloch.is_some() && e.kind != StateKind::D {
        return Err(ScenarioError::config(&format!("{path}.bloch"), "only allowed for kind D"));
    }
    let (spec, default_label) = match e.kind {
        StateKind::A => (InitialSpec::A, "A".to_owned()),
        StateKind::B => (InitialSpec::B, "B".to_owned()),
        StateKind::C => (InitialSpec::C, "C".to_owned()),
        StateKind::Ground => (InitialSpec::D(QubitOperator::ground()), "ground".to_owned()),
        StateKind::Excited => (InitialSpec::D(QubitOperator::excited()), "excited".to_owned()),
        StateKind::D => {
            let [x, y, z] = e.bloch.unwrap_or([0.0, 0.0, -1.0]);
            let r2 = x * x + y * y + z * z;
            if !(r2 <= 1.0 + 1e-12) {
                return Err(ScenarioError::config(&format!("{path}.bloch"), "Bloch vector longer than 1"));
            }
            (InitialSpec::D(QubitOperator::from_bloch(x, y, z)), "D".to_owned())
        }
        StateKind::Snapshot | StateKind::FactorizedSnapshot => {
            let p = base_dir.join(e.snapshot.as_ref().expect("checked above"));
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let factorized = e.kind == StateKind::FactorizedSnapshot;
            let label = if factorized { format!("{stem}_factorized") } else { stem };
            (InitialSpec::Snapshot { path: p, factorized }, label)
        }
    };
    let label = e.label.clone().unwrap_or(default_label);
    if label.is_empty() || label.contains(',') {
        return Err(ScenarioError::config(&format!("{path}.label"), "must be non-empty and contain no commas"));
    }
    Ok(LabeledInitial { label, spec })
}

// --------------------------------------------------------------- pulse search

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseOptimum {
    pub duration: f64,
    /// Open-system error of the scenario's first initial state at `duration`.
    pub error: f64,
    /// The minimized objective (closed-system error in unitary-reference mode).
    pub objective: f64,
}

/// Minimizes the preparation error of `start` over pulse durations in
/// `window` (absolute lengths). The drive switches on at `start.t`.
pub fn minimize_error(
    fit: &CorrelationFit,
    start: &ExtendedState,
    amplitude: f64,
    frequency: f64,
    rwa: bool,
    controls: &OdeControls,
    window: (f64, f64),
    coarse_points: usize,
    rel_tol: f64,
) -> Result<(f64, f64), ScenarioError> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(ScenarioError::config("optimize.window", "needs 0 < lo < hi"));
    }
    let t0 = start.t;
    let drive = DriveSpec {
        amplitude,
        frequency,
        rwa,
        window: (t0, t0 + hi),
    };
    let prop = Propagator::new(fit, drive, *controls)?;
    let carrier = std::f64::consts::TAU / frequency;
    let by_carrier = ((hi - lo) / (carrier / SEARCH_POINTS_PER_CARRIER)).ceil() as usize + 1;
    let n = coarse_points.max(by_carrier);
    let durations: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let outputs: Vec<f64> = durations.iter().map(|d| t0 + d).collect();
    let mut states = Vec::with_capacity(n);
    prop.run(start, t0 + hi, &outputs, |s| states.push(s.clone()))?;
    let errors: Vec<f64> = states.iter().map(|s| preparation_error(&s.rho)).collect();
    let j = errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j)
        .expect("non-empty grid");
    if j == 0 || j == n - 1 {
        return Err(ScenarioError::BoundaryHit {
            duration: durations[j],
            error: errors[j],
            window,
        });
    }

    // golden section inside the bracket around the best grid point,
    // restarting each evaluation from the nearest stored state below it
    let eval = |d: f64| -> Result<f64, ScenarioError> {
        let k = if d >= durations[j] { j } else { j - 1 };
        let s = prop.run(&states[k], t0 + d, &[], |_| {})?;
        Ok(preparation_error(&s.rho))
    };
    let (mut a, mut b) = (durations[j - 1], durations[j + 1]);
    let mut best = (durations[j], errors[j]);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    for (x, fx) in [(c, fc), (d, fd)] {
        if fx < best.1 {
            best = (x, fx);
        }
    }
    while b - a > rel_tol * best.0 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = eval(c)?;
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = eval(d)?;
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    Ok(best)
}

/// Error of `start` after a pulse of length `duration` switched on at `start.t`.
pub fn pulse_error(
    fit: &CorrelationFit,
    start: &ExtendedState,
    drive: DriveSpec,
    duration: f64,
    controls: &OdeControls,
) -> Result<(f64, ExtendedState), ScenarioError> {
    let drive = drive.with_window(start.t, start.t + duration);
    let prop = Propagator::new(fit, drive, *controls)?;
    let end = prop.run(start, start.t + duration, &[], |_| {})?;
    Ok((preparation_error(&end.rho), end))
}

/// Pulse duration for `start` under `search`, and the open-system error it gives.
pub fn optimize_duration(
    fit: &CorrelationFit,
    start: &ExtendedState,
    amplitude: f64,
    frequency: f64,
    rwa: bool,
    controls: &OdeControls,
    search: &PulseSearch,
) -> Result<PulseOptimum, ScenarioError> {
    if !(amplitude > 0.0) {
        return Err(ScenarioError::config("drive.amplitude", "pulse search needs amplitude > 0"));
    }
    let unit = PI / amplitude;
    let window = (search.window.0 * unit, search.window.1 * unit);
    let drive = DriveSpec {
        amplitude,
        frequency,
        rwa,
        window: (0.0, 0.0),
    };
    match search.mode {
        OptimizeMode::OpenSystem => {
            let (duration, error) = minimize_error(
                fit,
                start,
                amplitude,
                frequency,
                rwa,
                controls,
                window,
                search.coarse_points,
                search.rel_tol,
            )?;
            Ok(PulseOptimum {
                duration,
                error,
                objective: error,
            })
        }
        OptimizeMode::UnitaryReference => {
            let closed = CorrelationFit::uncoupled();
            let ground = ExtendedState::factorized(QubitOperator::ground(), closed.len(), start.t);
            let (duration, objective) = minimize_error(
                &closed,
                &ground,
                amplitude,
                frequency,
                rwa,
                controls,
                window,
                search.coarse_points,
                search.rel_tol,
            )?;
            let (error, _) = pulse_error(fit, start, drive, duration, controls)?;
            Ok(PulseOptimum {
                duration,
                error,
                objective,
            })
        }
    }
}

// ------------------------------------------------------------------- sessions

/// A scenario together with its kernel fit and, once needed, the equilibrium.
#[derive(Debug, Clone)]
pub struct Session {
    pub scenario: Scenario,
    pub fit: CorrelationFit,
    equilibrium: Option<Equilibrium>,
    optimum: Option<PulseOptimum>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub series: TimeSeries,
    /// States at the end of the run, by label.
    pub finals: Vec<(String, ExtendedState)>,
    pub drive: Option<DriveSpec>,
    pub optimum: Option<PulseOptimum>,
}

#[derive(Debug, Clone)]
pub struct PreparedStates {
    pub duration: f64,
    pub optimum: Option<PulseOptimum>,
    /// Prepared-A, Prepared-C, Prepared-A1, Prepared-C1, Prepared-D.
    pub states: Vec<(String, ExtendedState)>,
}

impl PreparedStates {
    pub fn get(&self, label: &str) -> Option<&ExtendedState> {
        self.states.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }
}

/// Coupling at which weak-coupling equilibria are relaxed before rescaling.
pub const RELAX_XI: f64 = 0.1;

/// Correlated equilibrium for a kernel fitted at coupling `xi`.
///
/// Relaxation slows down like 1/ξ, so below `RELAX_XI` the kernel is scaled up,
/// relaxed, and the result scaled back: the stationary ρ_s is diagonal and
/// does not depend on ξ, while the stationary auxiliary matrices are linear in ξ.
pub fn equilibrium_at(
    fit: &CorrelationFit,
    xi: f64,
    beta: f64,
    eq: &EquilibrationControls,
    controls: &OdeControls,
) -> Result<Equilibrium, DynamicsError> {
    if xi == 0.0 || xi >= RELAX_XI {
        return equilibrate(fit, beta, eq, controls);
    }
    let up = RELAX_XI / xi;
    let mut e = equilibrate(&fit.scaled(up), beta, eq, controls)?;
    for k in &mut e.state.aux {
        *k = *k * (1.0 / up);
    }
    e.rho_rate /= up;
    e.aux_rate /= up;
    // relaxation time grows like 1/ξ
    e.horizon *= up;
    Ok(e)
}

/// Fits the scenario's bath, or loads `fit.file` when set.
pub fn scenario_fit(scenario: &Scenario) -> Result<CorrelationFit, ScenarioError> {
    if let Some(path) = &scenario.fit.file {
        let (fit, bath) = read_fit(path)?;
        if let Some(b) = bath {
            if b != scenario.bath {
                return Err(ScenarioError::config(
                    "fit.file",
                    format!("fit was made for bath {b:?}, scenario uses {:?}", scenario.bath),
                ));
            }
        }
        return Ok(fit);
    }
    let f = &scenario.fit;
    let started = std::time::Instant::now();
    let fit = fit_correlation_with(&scenario.bath, f.horizon, f.tol, f.max_terms, &f.controls())?;
    log::info!(
        "fitted {} terms (residual {:.3e}) in {:.1?}",
        fit.len(),
        fit.residual,
        started.elapsed()
    );
    Ok(fit)
}

impl Session {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        let fit = scenario_fit(&scenario)?;
        Ok(Self::with_fit(scenario, fit))
    }

    pub fn with_fit(scenario: Scenario, fit: CorrelationFit) -> Self {
        Self {
            scenario,
            fit,
            equilibrium: None,
            optimum: None,
        }
    }

    pub fn set_equilibrium(&mut self, eq: Equilibrium) {
        self.equilibrium = Some(eq);
    }

    pub fn equilibrium(&mut self) -> Result<&Equilibrium, ScenarioError> {
        if self.equilibrium.is_none() {
            let s = &self.scenario;
            let eq = equilibrium_at(&self.fit, s.bath.xi, s.bath.beta, &s.equilibration, &s.controls)?;
            log::info!("equilibrium reached at t = {}", eq.horizon);
            self.equilibrium = Some(eq);
        }
        Ok(self.equilibrium.as_ref().expect("set above"))
    }

    pub fn initial_state(&mut self, spec: &InitialSpec) -> Result<ExtendedState, ScenarioError> {
        let beta = self.scenario.bath.beta;
        let kind = match spec {
            InitialSpec::A => InitialStateKind::A,
            InitialSpec::B => InitialStateKind::B,
            InitialSpec::C => InitialStateKind::C,
            InitialSpec::D(rho) => InitialStateKind::D(*rho),
            InitialSpec::Snapshot { path, factorized } => {
                let (_, s) = read_snapshot(path, &self.fit)?;
                if *factorized {
                    InitialStateKind::FactorizedSnapshot(s)
                } else {
                    InitialStateKind::PreparedSnapshot(s)
                }
            }
            InitialSpec::State(s) => InitialStateKind::PreparedSnapshot(s.clone()),
        };
        let eq = match kind {
            InitialStateKind::A | InitialStateKind::B => Some(self.equilibrium()?.state.clone()),
            _ => None,
        };
        Ok(build_initial(&kind, &self.fit, beta, eq.as_ref())?)
    }

    pub fn initial_states(&mut self) -> Result<Vec<(String, ExtendedState)>, ScenarioError> {
        let specs = self.scenario.initial.clone();
        specs
            .iter()
            .map(|i| Ok((i.label.clone(), self.initial_state(&i.spec)?)))
            .collect()
    }

    /// Runs the pulse search of the `[optimize]` section from the first initial state.
    pub fn optimize(&mut self) -> Result<PulseOptimum, ScenarioError> {
        if let Some(o) = self.optimum {
            return Ok(o);
        }
        let (Some(plan), Some(search)) = (self.scenario.drive, self.scenario.search) else {
            return Err(ScenarioError::config("optimize", "needs [drive] and [optimize] sections"));
        };
        let first = self.scenario.initial[0].spec.clone();
        let mut start = self.initial_state(&first)?;
        start.t = plan.t_on;
        let opt = optimize_duration(
            &self.fit,
            &start,
            plan.amplitude,
            plan.frequency,
            plan.rwa,
            &self.scenario.controls,
            &search,
        )?;
        log::info!(
            "optimized duration {:.9} ({:.6}·π/Ω_R), error {:.3e}",
            opt.duration,
            opt.duration * plan.amplitude / PI,
            opt.error
        );
        self.optimum = Some(opt);
        Ok(opt)
    }

    /// The drive with its duration fixed, optimizing first if required.
    pub fn drive(&mut self) -> Result<Option<DriveSpec>, ScenarioError> {
        let Some(plan) = self.scenario.drive else {
            return Ok(None);
        };
        let duration = match plan.duration {
            DriveDuration::Fixed(d) => d,
            DriveDuration::Optimized => self.optimize()?.duration,
        };
        Ok(Some(plan.spec(duration)))
    }

    /// Output grid on `[t0, t_end]`: `samples` uniform points, refined to
    /// 40 points per carrier period inside the drive window.
    pub fn output_grid(&self, t0: f64, drive: Option<&DriveSpec>) -> Result<(f64, Vec<f64>), ScenarioError> {
        let s = &self.scenario;
        let t_end = match s.end {
            OutputEnd::Absolute(t) => t,
            OutputEnd::Span(span) => t0 + span,
        };
        if t_end < t0 {
            return Err(ScenarioError::config(
                "output.t_end",
                format!("{t_end} precedes the initial time {t0}"),
            ));
        }
        if let Some(times) = &s.times {
            if times[0] < t0 || *times.last().expect("non-empty") > t_end {
                return Err(ScenarioError::config(
                    "output.times",
                    format!("times must lie in [{t0}, {t_end}]"),
                ));
            }
            return Ok((t_end, times.clone()));
        }
        let n = s.samples;
        let mut grid: Vec<f64> = (0..n).map(|k| t0 + (t_end - t0) * k as f64 / (n - 1) as f64).collect();
        if let Some(d) = drive {
            let (on, off) = (d.window.0.max(t0), d.window.1.min(t_end));
            if off > on {
                let dt = std::f64::consts::TAU / d.frequency / POINTS_PER_CARRIER;
                let m = ((off - on) / dt).ceil() as usize;
                grid.extend((0..=m).map(|k| on + (off - on) * k as f64 / m as f64));
            }
        }
        grid.sort_by(f64::total_cmp);
        let scale = (t_end - t0).abs().max(1.0);
        grid.dedup_by(|b, a| (*b - *a).abs() <= 1e-12 * scale);
        if let Some(last) = grid.last_mut() {
            *last = t_end;
        }
        Ok((t_end, grid))
    }

    pub fn run(&mut self) -> Result<ScenarioRun, ScenarioError> {
        let starts = self.initial_states()?;
        let t0 = starts[0].1.t;
        if let Some((l, s)) = starts.iter().find(|(_, s)| s.t != t0) {
            return Err(ScenarioError::config(
                "initial",
                format!("state {l} starts at t = {} but the first starts at {t0}", s.t),
            ));
        }
        let drive = self.drive()?;
        let (t_end, grid) = self.output_grid(t0, drive.as_ref())?;
        let prop = Propagator::new(&self.fit, drive.unwrap_or_else(DriveSpec::off), self.scenario.controls)?;
        let states: Vec<ExtendedState> = starts.iter().map(|(_, s)| s.clone()).collect();
        let mut times = Vec::with_capacity(grid.len());
        let mut rhos: Vec<Vec<QubitOperator>> = vec![Vec::with_capacity(grid.len()); states.len()];
        let finals = prop.run_batch(&states, t_end, &grid, |t, snap| {
            times.push(t);
            for (col, s) in rhos.iter_mut().zip(snap) {
                col.push(s.rho);
            }
        })?;

        let mut series = TimeSeries::new(times)?;
        let obs = &self.scenario.observables;
        let labels: Vec<&str> = starts.iter().map(|(l, _)| l.as_str()).collect();
        for (label, col) in labels.iter().zip(&rhos) {
            if obs.contains(&Observable::State) {
                series.push_state_columns(&format!("{label}_"), col)?;
            }
            if obs.contains(&Observable::Error) {
                series.push_column(format!("{label}_error"), col.iter().map(preparation_error).collect())?;
            }
            if obs.contains(&Observable::Fidelity) {
                series.push_column(format!("{label}_fidelity"), col.iter().map(fidelity_excited).collect())?;
            }
        }
        if obs.contains(&Observable::Distance) {
            for a in 0..labels.len() {
                for b in a + 1..labels.len() {
                    let d = rhos[a].iter().zip(&rhos[b]).map(|(x, y)| trace_distance(x, y)).collect();
                    series.push_column(format!("D_{}_{}", labels[a], labels[b]), d)?;
                }
            }
        }
        Ok(ScenarioRun {
            series,
            finals: labels.iter().map(|l| l.to_string()).zip(finals).collect(),
            drive,
            optimum: self.optimum,
        })
    }

    /// Applies the preparation pulse to Initial-A and Initial-C and returns
    /// Prepared-A, -C, their factorized parts A1, C1, and the ideal Prepared-D.
    /// The pulse starts at `t = 0`; snapshots carry `t = duration`.
    pub fn prepare(&mut self) -> Result<PreparedStates, ScenarioError> {
        let Some(plan) = self.scenario.drive else {
            return Err(ScenarioError::config("drive", "preparation needs a [drive] section"));
        };
        if plan.t_on != 0.0 {
            return Err(ScenarioError::config("drive.t_on", "preparation pulses start at t = 0"));
        }
        let duration = match plan.duration {
            DriveDuration::Fixed(d) => d,
            DriveDuration::Optimized => {
                let search = self.scenario.search.expect("validated with the drive");
                let start = self.initial_state(&InitialSpec::A)?;
                let opt = optimize_duration(
                    &self.fit,
                    &start,
                    plan.amplitude,
                    plan.frequency,
                    plan.rwa,
                    &self.scenario.controls,
                    &search,
                )?;
                self.optimum = Some(opt);
                opt.duration
            }
        };
        let a = self.initial_state(&InitialSpec::A)?;
        let c = self.initial_state(&InitialSpec::C)?;
        let prop = Propagator::new(&self.fit, plan.spec(duration), self.scenario.controls)?;
        let mut out = prop.run_batch(&[a, c], duration, &[], |_, _| {})?;
        let pc = out.pop().expect("two states");
        let pa = out.pop().expect("two states");
        let pd = ExtendedState::factorized(QubitOperator::excited(), self.fit.len(), duration);
        Ok(PreparedStates {
            duration,
            optimum: self.optimum,
            states: vec![
                ("Prepared-A1".into(), pa.factorized_part()),
                ("Prepared-C1".into(), pc.factorized_part()),
                ("Prepared-A".into(), pa),
                ("Prepared-C".into(), pc),
                ("Prepared-D".into(), pd),
            ],
        })
    }

    /// D, F, I between two states over the scenario's output grid and drive.
    pub fn bounds(&mut self, a: &ExtendedState, b: &ExtendedState) -> Result<BoundSeries, ScenarioError> {
        let drive = self.drive()?;
        let (t_end, grid) = self.output_grid(a.t, drive.as_ref())?;
        let prop = Propagator::new(&self.fit, drive.unwrap_or_else(DriveSpec::off), self.scenario.controls)?;
        Ok(bound_series(a, b, &prop, t_end, &grid)?)
    }
}

pub fn run_scenario(scenario: Scenario) -> Result<ScenarioRun, ScenarioError> {
    Session::new(scenario)?.run()
}

pub fn prepare_and_store(scenario: Scenario, dir: &Path) -> Result<PreparedStates, ScenarioError> {
    let mut session = Session::new(scenario)?;
    let prepared = session.prepare()?;
    for (label, state) in &prepared.states {
        let name = format!("{}.toml", label.to_lowercase().replace('-', "_"));
        crate::io::write_snapshot(&dir.join(name), label, state, &session.fit)?;
    }
    Ok(prepared)
}

// ----------------------------------------------------------------------- scans

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AxisConfig {
    List(Vec<f64>),
    Log { min: f64, max: f64, count: usize },
}

impl AxisConfig {
    fn values(&self, path: &str) -> Result<Vec<f64>, ScenarioError> {
        let v = match self {
            Self::List(v) => v.clone(),
            Self::Log { min, max, count } => {
                if !(*min > 0.0 && max > min && *count >= 2) {
                    return Err(ScenarioError::config(path, "log axis needs 0 < min < max and count >= 2"));
                }
                let (a, b) = (min.ln(), max.ln());
                (0..*count)
                    .map(|k| (a + (b - a) * k as f64 / (*count - 1) as f64).exp())
                    .collect()
            }
        };
        if v.is_empty() {
            return Err(ScenarioError::config(path, "axis is empty"));
        }
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(ScenarioError::config(path, "values must be finite and > 0"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    None,
    /// Non-RWA error minus the error of the RWA π-pulse, both from Initial-A.
    Rwa,
    /// Error from Initial-A minus the error from Initial-C at the same duration.
    InitialC,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub amplitudes: AxisConfig,
    pub xi: AxisConfig,
    pub mode: OptimizeMode,
    #[serde(default = "default_comparison")]
    pub comparison: Comparison,
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    /// Allow 1 < Ω_R/Ω ≤ 10, where resonant driving is left out by default.
    #[serde(default)]
    pub allow_excluded_band: bool,
    #[serde(default = "default_coarse_points")]
    pub coarse_points: usize,
    #[serde(default = "default_search_rel_tol")]
    pub rel_tol: f64,
    pub window: Option<[f64; 2]>,
}

fn default_comparison() -> Comparison {
    Comparison::None
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "BathSpec::reference")]
    pub bath: BathSpec,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub equilibration: EquilibrationConfig,
    pub scan: ScanSection,
}

/// Validated scan request. The kernel is fitted once at `bath.xi` and
/// rescaled for every ξ on the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub bath: BathSpec,
    pub fit: FitConfig,
    pub controls: OdeControls,
    pub equilibration: EquilibrationControls,
    pub amplitudes: Vec<f64>,
    pub xis: Vec<f64>,
    pub mode: OptimizeMode,
    pub comparison: Comparison,
    pub frequency: f64,
    pub allow_excluded_band: bool,
    pub coarse_points: usize,
    pub rel_tol: f64,
    pub window: Option<(f64, f64)>,
}

impl ScanPlan {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let cfg: ScanConfig = parse_toml(text)?;
        Self::from_config(cfg, base_dir)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&read_config(path)?, dir)
    }

    pub fn from_config(cfg: ScanConfig, base_dir: &Path) -> Result<Self, ScenarioError> {
        cfg.bath
            .validate()
            .map_err(|e| ScenarioError::config("bath", e.to_string()))?;
        if !(cfg.bath.xi > 0.0) {
            return Err(ScenarioError::config("bath.xi", "the reference fit of a scan needs xi > 0"));
        }
        cfg.fit.validate()?;
        let s = &cfg.scan;
        if s.coarse_points < MIN_COARSE_POINTS {
            return Err(ScenarioError::config(
                "scan.coarse_points",
                format!("must be >= {MIN_COARSE_POINTS}"),
            ));
        }
        if !(s.rel_tol > 0.0 && s.rel_tol < 0.1) {
            return Err(ScenarioError::config("scan.rel_tol", "must be in (0, 0.1)"));
        }
        if !(s.frequency > 0.0 && s.frequency.is_finite()) {
            return Err(ScenarioError::config("scan.frequency", "must be > 0"));
        }
        let window = match s.window {
            Some([a, b]) if a > 0.0 && b > a && b.is_finite() => Some((a, b)),
            Some(_) => return Err(ScenarioError::config("scan.window", "needs 0 < lo < hi")),
            None => None,
        };
        let mut fit = cfg.fit.clone();
        fit.file = fit.file.map(|f| base_dir.join(f));
        Ok(Self {
            bath: cfg.bath,
            fit,
            controls: cfg.integrator.resolve()?,
            equilibration: cfg.equilibration.resolve()?,
            amplitudes: s.amplitudes.values("scan.amplitudes")?,
            xis: s.xi.values("scan.xi")?,
            mode: s.mode,
            comparison: s.comparison,
            frequency: s.frequency,
            allow_excluded_band: s.allow_excluded_band,
            coarse_points: s.coarse_points,
            rel_tol: s.rel_tol,
            window,
        })
    }

    fn search(&self, amplitude: f64) -> PulseSearch {
        PulseSearch {
            mode: self.mode,
            window: self.window.unwrap_or_else(|| PulseSearch::default_window(amplitude)),
            coarse_points: self.coarse_points,
            rel_tol: self.rel_tol,
        }
    }
}

/// Resonant driving with `Ω < Ω_R ≤ 10Ω` is outside the scanned bands.
pub fn in_admissible_band(amplitude: f64) -> bool {
    (amplitude > 0.0 && amplitude <= OMEGA) || amplitude > 10.0 * OMEGA
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    BoundaryHit,
    Excluded,
    Failed(String),
}

impl CellStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::BoundaryHit => "boundary_hit",
            Self::Excluded => "excluded",
            Self::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanCell {
    pub amplitude: f64,
    pub xi: f64,
    pub status: CellStatus,
    pub duration: f64,
    pub error: f64,
    /// Error of the comparison variant (RWA π-pulse or Initial-C).
    pub reference_error: f64,
    /// `error − reference_error`, signed.
    pub difference: f64,
}

/// Rows of constant ξ, columns of constant Ω_R, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub amplitudes: Vec<f64>,
    pub xis: Vec<f64>,
    pub cells: Vec<ScanCell>,
}

impl ScanGrid {
    pub fn cell(&self, xi_index: usize, amplitude_index: usize) -> &ScanCell {
        &self.cells[xi_index * self.amplitudes.len() + amplitude_index]
    }

    /// Columns `amplitude, xi, status, duration, error, reference_error, difference`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "amplitude,xi,status,duration,error,reference_error,difference")?;
        for c in &self.cells {
            writeln!(
                w,
                "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                c.amplitude,
                c.xi,
                c.status.name(),
                c.duration,
                c.error,
                c.reference_error,
                c.difference
            )?;
        }
        Ok(())
    }
}

fn scan_cell(
    plan: &ScanPlan,
    fit: &CorrelationFit,
    eq: &Result<Equilibrium, String>,
    amplitude: f64,
    xi: f64,
) -> ScanCell {
    let mut cell = ScanCell {
        amplitude,
        xi,
        status: CellStatus::Ok,
        duration: f64::NAN,
        error: f64::NAN,
        reference_error: f64::NAN,
        difference: f64::NAN,
    };
    if !plan.allow_excluded_band && !in_admissible_band(amplitude) {
        cell.status = CellStatus::Excluded;
        return cell;
    }
    let eq = match eq {
        Ok(eq) => eq,
        Err(msg) => {
            cell.status = CellStatus::Failed(msg.clone());
            return cell;
        }
    };
    let result = (|| -> Result<(), ScenarioError> {
        let a = eq.state.clone();
        let opt = optimize_duration(fit, &a, amplitude, plan.frequency, false, &plan.controls, &plan.search(amplitude))?;
        cell.duration = opt.duration;
        cell.error = opt.error;
        let drive = DriveSpec {
            amplitude,
            frequency: plan.frequency,
            rwa: false,
            window: (0.0, 0.0),
        };
        match plan.comparison {
            Comparison::None => {}
            Comparison::Rwa => {
                let rwa = DriveSpec { rwa: true, ..drive };
                let (e, _) = pulse_error(fit, &a, rwa, PI / amplitude, &plan.controls)?;
                cell.reference_error = e;
                cell.difference = cell.error - e;
            }
            Comparison::InitialC => {
                let c = build_initial(&InitialStateKind::C, fit, plan.bath.beta, None)?;
                let (e, _) = pulse_error(fit, &c, drive, opt.duration, &plan.controls)?;
                cell.reference_error = e;
                cell.difference = cell.error - e;
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => {}
        Err(ScenarioError::BoundaryHit { duration, error, .. }) => {
            cell.status = CellStatus::BoundaryHit;
            cell.duration = duration;
            cell.error = error;
        }
        Err(e) => cell.status = CellStatus::Failed(e.to_string()),
    }
    cell
}

/// Runs every cell of the scan concurrently. Failures are recorded per cell.
pub fn run_scan(plan: &ScanPlan, base_fit: &CorrelationFit) -> ScanGrid {
    let fits: Vec<CorrelationFit> = plan.xis.iter().map(|xi| base_fit.scaled(xi / plan.bath.xi)).collect();
    let eqs: Vec<Result<Equilibrium, String>> = fits
        .par_iter()
        .zip(&plan.xis)
        .map(|(fit, &xi)| {
            equilibrium_at(fit, xi, plan.bath.beta, &plan.equilibration, &plan.controls).map_err(|e| e.to_string())
        })
        .collect();
    let jobs: Vec<(usize, f64)> = (0..plan.xis.len())
        .flat_map(|r| plan.amplitudes.iter().map(move |&a| (r, a)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(r, amp)| scan_cell(plan, &fits[r], &eqs[r], amp, plan.xis[r]))
        .collect();
    ScanGrid {
        amplitudes: plan.amplitudes.clone(),
        xis: plan.xis.clone(),
        cells,
    }
}

/// The reference fit of a scan: loaded from `fit.file` or fitted at `bath.xi`.
pub fn scan_fit(plan: &ScanPlan) -> Result<CorrelationFit, ScenarioError> {
    if let Some(path) = &plan.fit.file {
        let (fit, bath) = read_fit(path)?;
        if bath.is_some_and(|b| b != plan.bath) {
            return Err(ScenarioError::config("fit.file", "fit was made for a different bath"));
        }
        return Ok(fit);
    }
    let f = &plan.fit;
    Ok(fit_correlation_with(&plan.bath, f.horizon, f.tol, f.max_terms, &f.controls())?)
}
