//! System definition files.
//!
//! ```json
//! {
//!   "n": 2, "m": 2,
//!   "lambda": [1.0, -1.0],
//!   "A": [[0.0, -1.0], [1.0, 0.0]],
//!   "B": [[1.0, 0.0], [0.0, 1.0]],
//!   "x0_list": [[2.0, 1.0]],
//!   "seed": 7,
//!   "tolerances": { "semidefinite": 1e-7, "definite": 1e-8, "rtol": 1e-9, "atol": 1e-12 }
//! }
//! ```
//!
//! Only `n`, `m`, `lambda`, `A` and `B` are required. Unknown fields are rejected.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use qpstab::{ModelError, QpSystem, StateVector};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {field}: {message}")]
    Parse {
        line: usize,
        column: usize,
        /// Path of the offending field, e.g. `A[1][0]`, or `.` for the document.
        field: String,
        message: String,
    },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceFile {
    pub semidefinite: Option<f64>,
    pub definite: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    pub lambda: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub x0_list: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Option<ToleranceFile>,
}

/// A validated system together with the options it carries.
#[derive(Debug, Clone)]
pub struct ParsedInput {
    pub system: QpSystem,
    pub x0_list: Vec<StateVector>,
    pub seed: Option<u64>,
    pub tolerances: ToleranceFile,
}

pub fn parse_input(path: &Path) -> Result<ParsedInput, InputError> {
    let text = fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<ParsedInput, InputError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: SystemFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        InputError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: strip_position(&inner.to_string()),
        }
    })?;
    de.end().map_err(|e| InputError::Parse {
        line: e.line(),
        column: e.column(),
        field: ".".into(),
        message: strip_position(&e.to_string()),
    })?;
    validate(file)
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

fn matrix(
    field: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<f64>, InputError> {
    if rows.len() != nrows {
        return Err(InputError::Validation(format!(
            "{field} has {} rows, expected {nrows}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(InputError::Validation(format!(
                "{field}[{i}] has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn validate(file: SystemFile) -> Result<ParsedInput, InputError> {
    let SystemFile {
        n,
        m,
        lambda,
        a,
        b,
        x0_list,
        seed,
        tolerances,
    } = file;
    if n == 0 {
        return Err(InputError::Validation("n must be at least 1".into()));
    }
    if m < n {
        return Err(InputError::Validation(format!(
            "m = {m} must be at least n = {n}"
        )));
    }
    if lambda.len() != n {
        return Err(InputError::Validation(format!(
            "lambda has {} entries but n = {n}",
            lambda.len()
        )));
    }
    let a_cols = a.first().map_or(0, Vec::len);
    if a_cols != b.len() {
        return Err(InputError::Validation(format!(
            "cols(A) = {a_cols} does not match rows(B) = {}",
            b.len()
        )));
    }
    let a = matrix("A", &a, n, m)?;
    let b = matrix("B", &b, m, n)?;
    let system = QpSystem::new(DVector::from_vec(lambda), a, b)?;

    let x0_list = x0_list
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(k, x0)| {
            if x0.len() != n {
                return Err(InputError::Validation(format!(
                    "x0_list[{k}] has {} entries but n = {n}",
                    x0.len()
                )));
            }
            StateVector::new(x0).map_err(|e| InputError::Validation(format!("x0_list[{k}]: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let tolerances = tolerances.unwrap_or_default();
    for (name, value) in [
        ("semidefinite", tolerances.semidefinite),
        ("definite", tolerances.definite),
        ("rtol", tolerances.rtol),
        ("atol", tolerances.atol),
    ] {
        if let Some(v) = value {
            if !(v.is_finite() && v > 0.0) {
                return Err(InputError::Validation(format!(
                    "tolerances.{name} must be positive, got {v}"
                )));
            }
        }
    }

    Ok(ParsedInput {
        system,
        x0_list,
        seed,
        tolerances,
    })
}
