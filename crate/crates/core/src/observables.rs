//! Scalar diagnostics of reduced states and the sampled time series that
//! carries them to CSV.
//!
//! Index 1 is the excited state `|1⟩`, so `ρ11` is the excited population.

use std::io::{self, Write};

use thiserror::Error;

use crate::operators::{bloch_vector, pauli, trace_norm_half, Axis, QubitOperator};

pub fn sigma_z_expectation(rho: &QubitOperator) -> f64 {
    (pauli(Axis::Z) * *rho).trace().re
}

/// Half the trace norm of `ρa − ρb`.
pub fn trace_distance(rho_a: &QubitOperator, rho_b: &QubitOperator) -> f64 {
    trace_norm_half(&(*rho_a - *rho_b))
}

/// Trace distance to the excited state: `sqrt((1 − ρ11)² + |ρ12|²)`.
pub fn preparation_error(rho: &QubitOperator) -> f64 {
    let d = 1.0 - rho.m[0][0].re;
    (d * d + rho.m[0][1].norm_sqr()).sqrt()
}

/// Fidelity with the pure target `|1⟩`, i.e. `ρ11`.
pub fn fidelity_excited(rho: &QubitOperator) -> f64 {
    rho.m[0][0].re
}

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("column {name} has {found} rows, expected {expected}")]
    Length { name: String, expected: usize, found: usize },
    #[error("times must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("duplicate column {0}")]
    Duplicate(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Named real columns sampled on a common, strictly increasing time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>) -> Result<Self, SeriesError> {
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SeriesError::NotIncreasing(i + 1));
        }
        Ok(Self {
            times,
            columns: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), SeriesError> {
        let name = name.into();
        if values.len() != self.times.len() {
            return Err(SeriesError::Length {
                name,
                expected: self.times.len(),
                found: values.len(),
            });
        }
        if self.column(&name).is_some() {
            return Err(SeriesError::Duplicate(name));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Adds the standard per-state columns for a trajectory of reduced states.
    pub fn push_state_columns(&mut self, prefix: &str, states: &[QubitOperator]) -> Result<(), SeriesError> {
        let bloch: Vec<[f64; 3]> = states.iter().map(bloch_vector).collect();
        let col = |f: &dyn Fn(usize) -> f64| (0..states.len()).map(f).collect::<Vec<f64>>();
        self.push_column(format!("{prefix}sigma_z"), col(&|i| sigma_z_expectation(&states[i])))?;
        self.push_column(format!("{prefix}bloch_x"), col(&|i| bloch[i][0]))?;
        self.push_column(format!("{prefix}bloch_y"), col(&|i| bloch[i][1]))?;
        self.push_column(format!("{prefix}bloch_z"), col(&|i| bloch[i][2]))?;
        self.push_column(format!("{prefix}rho11"), col(&|i| states[i].m[0][0].re))?;
        self.push_column(format!("{prefix}re_rho12"), col(&|i| states[i].m[0][1].re))?;
        self.push_column(format!("{prefix}im_rho12"), col(&|i| states[i].m[0][1].im))?;
        Ok(())
    }

    /// CSV with a header row; every value printed with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SeriesError> {
        write!(w, "t")?;
        for (name, _) in &self.columns {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{t:.16e}")?;
            for (_, v) in &self.columns {
                write!(w, ",{:.16e}", v[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}
