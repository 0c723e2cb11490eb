//! Upper and lower bounds on the trace distance between two evolving states.
//!
//! The initial difference `Δ = (Δρ_s, ΔK)` splits into a factorized part
//! `(Δρ_s, 0)` and a correlation part `(0, ΔK)`. The generator is linear, so
//! the three pieces can be propagated on their own:
//!
//! ```text
//! D(t) = ½‖ρ-part of e^{Lt}Δ‖        F(t) = ½‖ρ-part of e^{Lt}(Δρ_s, 0)‖
//! I(t) = ½‖ρ-part of e^{Lt}(0, ΔK)‖  |I − F| ≤ D ≤ I + F
//! ```

use std::io::{self, Write};

use thiserror::Error;

use crate::dynamics::{DynamicsError, ExtendedState, Propagator};
use crate::operators::trace_norm_half;

pub const NECESSARY_MET: u32 = 1;
pub const SUFFICIENT_MET: u32 = 2;
pub const CORRELATION_WITNESS: u32 = 4;
pub const TRACE_DISTANCE_INCREASE: u32 = 8;

/// Default absolute tolerance for the witness comparisons.
pub const WITNESS_TOL: f64 = 1e-6;
/// Allowed violation of the sandwich inequality.
pub const SANDWICH_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("states start at different times ({0} and {1})")]
    TimeMismatch(f64, f64),
    #[error("sandwich violated at t = {t}: lower {lower:e}, D {d:e}, upper {upper:e}")]
    SandwichViolation { t: f64, d: f64, lower: f64, upper: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundSeries {
    pub times: Vec<f64>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

fn difference(a: &ExtendedState, b: &ExtendedState) -> Result<ExtendedState, BoundsError> {
    if a.t != b.t {
        return Err(BoundsError::TimeMismatch(a.t, b.t));
    }
    Ok(a.combine(1.0, b, -1.0))
}

/// Propagates `starts` together and returns `½‖ρ-part‖` of each at every output time.
fn trace_norm_series(
    prop: &Propagator,
    starts: &[ExtendedState],
    t_end: f64,
    outputs: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>), BoundsError> {
    let mut times = Vec::with_capacity(outputs.len());
    let mut series = vec![Vec::with_capacity(outputs.len()); starts.len()];
    prop.run_batch(starts, t_end, outputs, |t, states| {
        times.push(t);
        for (col, s) in series.iter_mut().zip(states) {
            col.push(trace_norm_half(&s.rho));
        }
    })?;
    Ok((times, series))
}

/// Factorized-part contribution `F(t′, t)` at each output time.
pub fn compute_f(
    a: &ExtendedState,
    b: &ExtendedState,
    prop: &Propagator,
    t_end: f64,
    outputs: &[f64],
) -> Result<Vec<f64>, BoundsError> {
    let start = difference(a, b)?.factorized_part();
    Ok(trace_norm_series(prop, &[start], t_end, outputs)?.1.remove(0))
}

/// Correlation-part contribution `I(t′, t)` at each output time.
pub fn compute_i(
    a: &ExtendedState,
    b: &ExtendedState,
    prop: &Propagator,
    t_end: f64,
    outputs: &[f64],
) -> Result<Vec<f64>, BoundsError> {
    let start = difference(a, b)?.correlation_part();
    Ok(trace_norm_series(prop, &[start], t_end, outputs)?.1.remove(0))
}

/// D, F and I on a common grid, with the sandwich inequality checked.
/// The three difference objects share one integrator so their steps coincide.
pub fn bound_series(
    a: &ExtendedState,
    b: &ExtendedState,
    prop: &Propagator,
    t_end: f64,
    outputs: &[f64],
) -> Result<BoundSeries, BoundsError> {
    let full = difference(a, b)?;
    let starts = [full.clone(), full.factorized_part(), full.correlation_part()];
    let (times, mut cols) = trace_norm_series(prop, &starts, t_end, outputs)?;
    let i = cols.pop().expect("three columns");
    let f = cols.pop().expect("three columns");
    let d = cols.pop().expect("three columns");
    let upper: Vec<f64> = i.iter().zip(&f).map(|(x, y)| x + y).collect();
    let lower: Vec<f64> = i.iter().zip(&f).map(|(x, y)| (x - y).abs()).collect();
    for k in 0..times.len() {
        if d[k] > upper[k] + SANDWICH_TOL || d[k] < lower[k] - SANDWICH_TOL {
            return Err(BoundsError::SandwichViolation {
                t: times[k],
                d: d[k],
                lower: lower[k],
                upper: upper[k],
            });
        }
    }
    Ok(BoundSeries {
        times,
        d,
        f,
        i,
        upper,
        lower,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessReport {
    /// Bitmask per output time.
    pub flags: Vec<u32>,
    pub tol: f64,
}

impl WitnessReport {
    /// Union of the flags over all times.
    pub fn any(&self) -> u32 {
        self.flags.iter().fold(0, |acc, f| acc | f)
    }

    pub fn raised(&self, flag: u32) -> bool {
        self.any() & flag != 0
    }
}

/// Flags each output time against the values at the first one.
pub fn witness_report(series: &BoundSeries, tol: f64) -> WitnessReport {
    let Some(&d0) = series.d.first() else {
        return WitnessReport { flags: Vec::new(), tol };
    };
    let (u0, l0) = (series.upper[0], series.lower[0]);
    let flags = (0..series.times.len())
        .map(|k| {
            let mut f = 0;
            if series.upper[k] > u0 + tol {
                f |= NECESSARY_MET;
            }
            if series.lower[k] > l0 + tol {
                f |= SUFFICIENT_MET;
            }
            if series.i[k] > tol {
                f |= CORRELATION_WITNESS;
            }
            if series.d[k] > d0 + tol {
                f |= TRACE_DISTANCE_INCREASE;
            }
            f
        })
        .collect();
    WitnessReport { flags, tol }
}

impl BoundSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Columns `t, D, F, I, upper, lower, flags`.
    pub fn write_csv<W: Write>(&self, mut w: W, tol: f64) -> Result<(), BoundsError> {
        let report = witness_report(self, tol);
        writeln!(w, "t,D,F,I,upper,lower,flags")?;
        for k in 0..self.times.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.times[k], self.d[k], self.f[k], self.i[k], self.upper[k], self.lower[k], report.flags[k]
            )?;
        }
        Ok(())
    }
}
