//! TOML files for kernel fits and extended-state snapshots.
//!
//! Snapshots record the fingerprint of the fit they were propagated with and
//! refuse to load against any other fit.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::{BathSpec, CorrelationFit, ExpTerm};
use crate::dynamics::ExtendedState;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: snapshot was made with fit {found}, current fit is {expected}")]
    FingerprintMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct FitFile {
    fingerprint: String,
    residual: f64,
    sample_horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bath: Option<BathSpec>,
    /// Rows of `[Re α, Im α, Re γ, Im γ]`.
    terms: Vec<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotFile {
    label: String,
    fit_fingerprint: String,
    state: ExtendedState,
}

fn read(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), FileError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FileError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> FileError {
    FileError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

pub fn fit_to_toml(fit: &CorrelationFit, bath: Option<&BathSpec>) -> String {
    let file = FitFile {
        fingerprint: fit.fingerprint(),
        residual: fit.residual,
        sample_horizon: fit.sample_horizon,
        bath: bath.copied(),
        terms: fit
            .terms
            .iter()
            .map(|t| [t.alpha.re, t.alpha.im, t.gamma.re, t.gamma.im])
            .collect(),
    };
    toml::to_string(&file).expect("fit serializes")
}

pub fn fit_from_toml(text: &str, path: &Path) -> Result<(CorrelationFit, Option<BathSpec>), FileError> {
    let file: FitFile = toml::from_str(text).map_err(|e| parse_err(path, e))?;
    if file.terms.is_empty() {
        return Err(parse_err(path, "fit has no terms"));
    }
    let fit = CorrelationFit {
        terms: file
            .terms
            .iter()
            .map(|r| ExpTerm {
                alpha: Complex64::new(r[0], r[1]),
                gamma: Complex64::new(r[2], r[3]),
            })
            .collect(),
        residual: file.residual,
        sample_horizon: file.sample_horizon,
    };
    if !fit.is_decaying() {
        return Err(parse_err(path, "fit has a growing term (Re γ > 0)"));
    }
    if fit.fingerprint() != file.fingerprint {
        return Err(parse_err(path, "terms do not match the recorded fingerprint"));
    }
    Ok((fit, file.bath))
}

pub fn write_fit(path: &Path, fit: &CorrelationFit, bath: Option<&BathSpec>) -> Result<(), FileError> {
    write(path, &fit_to_toml(fit, bath))
}

pub fn read_fit(path: &Path) -> Result<(CorrelationFit, Option<BathSpec>), FileError> {
    fit_from_toml(&read(path)?, path)
}

pub fn write_snapshot(path: &Path, label: &str, state: &ExtendedState, fit: &CorrelationFit) -> Result<(), FileError> {
    let file = SnapshotFile {
        label: label.to_owned(),
        fit_fingerprint: fit.fingerprint(),
        state: state.clone(),
    };
    write(path, &toml::to_string(&file).expect("snapshot serializes"))
}

/// Loads a snapshot, rejecting it unless it was written with `fit`.
pub fn read_snapshot(path: &Path, fit: &CorrelationFit) -> Result<(String, ExtendedState), FileError> {
    let file: SnapshotFile = toml::from_str(&read(path)?).map_err(|e| parse_err(path, e))?;
    let expected = fit.fingerprint();
    if file.fit_fingerprint != expected {
        return Err(FileError::FingerprintMismatch {
            path: path.to_owned(),
            expected,
            found: file.fit_fingerprint,
        });
    }
    if file.state.aux.len() != fit.len() {
        return Err(parse_err(path, "auxiliary count does not match the fit"));
    }
    Ok((file.label, file.state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::QubitOperator;

    fn sample_fit() -> CorrelationFit {
        CorrelationFit {
            terms: vec![
                ExpTerm {
                    alpha: Complex64::new(0.1234567890123456, -3.3e-17),
                    gamma: Complex64::new(-0.7, 1.0 / 3.0),
                },
                ExpTerm {
                    alpha: Complex64::new(2.5e-9, 7.0),
                    gamma: Complex64::new(-31.9, -35.7),
                },
            ],
            residual: 2.9e-8,
            sample_horizon: 70.0,
        }
    }

    #[test]
    fn fit_round_trip_is_exact() {
        let fit = sample_fit();
        let text = fit_to_toml(&fit, Some(&BathSpec::reference()));
        let (back, bath) = fit_from_toml(&text, Path::new("mem")).unwrap();
        assert_eq!(back, fit);
        assert_eq!(back.fingerprint(), fit.fingerprint());
        assert_eq!(bath, Some(BathSpec::reference()));
    }

    #[test]
    fn tampered_fit_is_rejected() {
        let text = fit_to_toml(&sample_fit(), None).replace("-0.7", "-0.71");
        assert!(fit_from_toml(&text, Path::new("mem")).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.toml");
        let fit = sample_fit();
        let state = ExtendedState {
            rho: QubitOperator::from_bloch(0.1, -0.2, 1.0 / 7.0),
            aux: vec![QubitOperator::from_bloch(1e-300, 0.0, 0.0), QubitOperator::identity()],
            t: 0.123,
        };
        write_snapshot(&path, "Prepared-A", &state, &fit).unwrap();
        let (label, back) = read_snapshot(&path, &fit).unwrap();
        assert_eq!(label, "Prepared-A");
        assert_eq!(back, state);
        let other = fit.scaled(0.5);
        assert!(matches!(read_snapshot(&path, &other), Err(FileError::FingerprintMismatch { .. })));
    }
}
