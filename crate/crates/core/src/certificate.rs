//! Diagonal stability certificates for the interaction matrix `Q = B A`.
//!
//! A certificate is a positive diagonal `C = diag(c)` together with the
//! spectrum of `M = C Q + Q^T C`. If `M` is negative definite the interior
//! equilibrium is globally asymptotically stable; if it is negative
//! semidefinite the equilibrium is stable.
//!
//! The search minimizes `lambda_max(M(c))` over the normalized simplex
//! `sum c_i = m` with `c = m softmax(theta)`, using multistart Nelder-Mead.
//! `M(alpha c) = alpha M(c)`, so the normalization loses nothing.
//! Matrices with a positive diagonal entry are reported inconclusive
//! without searching.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nelder_mead::{self, NelderMeadOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailure,
    #[error("invalid diagonal scaling: {0}")]
    InvalidScaling(String),
    #[error("dimension mismatch: Q is {rows}x{cols}, scaling has {len} entries")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("certificate verification failed: {0}")]
    VerificationMismatch(String),
}

/// Positive diagonal scaling `c`, normalized so that `sum c_i = m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagonalScaling {
    c: Vec<f64>,
}

impl DiagonalScaling {
    /// Validates positivity and rescales to `sum c_i = m`.
    pub fn new(c: Vec<f64>) -> Result<Self, CertificateError> {
        if c.is_empty() {
            return Err(CertificateError::InvalidScaling("empty scaling".into()));
        }
        if let Some((i, v)) = c
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(CertificateError::InvalidScaling(format!(
                "entry {i} is {v}, expected a positive finite number"
            )));
        }
        let scale = c.len() as f64 / c.iter().sum::<f64>();
        Ok(Self {
            c: c.into_iter().map(|v| v * scale).collect(),
        })
    }

    pub fn uniform(m: usize) -> Self {
        Self { c: vec![1.0; m] }
    }

    /// `c = m softmax(theta)`.
    pub fn from_logits(theta: &DVector<f64>) -> Self {
        let m = theta.len() as f64;
        let top = theta.max();
        let w: Vec<f64> = theta.iter().map(|t| (t - top).exp()).collect();
        let total: f64 = w.iter().sum();
        Self {
            c: w.into_iter().map(|v| m * v / total).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// Checks the type invariants; deserialized values bypass `new`.
    pub fn check(&self) -> Result<(), CertificateError> {
        if let Some((i, v)) = self
            .c
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(CertificateError::InvalidScaling(format!(
                "entry {i} is {v}, expected a positive finite number"
            )));
        }
        let sum: f64 = self.c.iter().sum();
        let m = self.c.len() as f64;
        if (sum - m).abs() > 1e-9 * m {
            return Err(CertificateError::InvalidScaling(format!(
                "entries sum to {sum}, expected {m}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    NegativeDefinite,
    NegativeSemiDefinite,
    Inconclusive,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NegativeDefinite => "negative definite",
            Self::NegativeSemiDefinite => "negative semidefinite",
            Self::Inconclusive => "inconclusive",
        })
    }
}

/// Relative thresholds; the absolute bands are `tol * max(1, |M|_F)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub definite: f64,
    pub semidefinite: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            definite: 1e-8,
            semidefinite: 1e-7,
        }
    }
}

impl Thresholds {
    pub fn definite_band(&self, m: &DMatrix<f64>) -> f64 {
        self.definite * m.norm().max(1.0)
    }

    pub fn semidefinite_band(&self, m: &DMatrix<f64>) -> f64 {
        self.semidefinite * m.norm().max(1.0)
    }
}

/// Result of classifying a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub classification: Classification,
    pub lambda_max: f64,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    pub frobenius_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub scaling: DiagonalScaling,
    pub classification: Classification,
    /// Largest eigenvalue of `M = C Q + Q^T C`.
    pub lambda_max: f64,
    /// `lambda_max / |M|_F` (zero when `M = 0`).
    pub margin: f64,
    /// Index of a positive diagonal entry of `Q`, if any. Such an entry rules
    /// out every positive scaling, since `M_ii = 2 c_i Q_ii > 0`.
    pub positive_diagonal: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub seed: u64,
    /// Number of Nelder-Mead starts; the first one is `c = 1`.
    pub starts: usize,
    pub thresholds: Thresholds,
    pub max_iterations: usize,
    /// Random starts draw `theta` uniformly from `[-start_radius, start_radius]^m`.
    pub start_radius: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            starts: 20,
            thresholds: Thresholds::default(),
            max_iterations: 4000,
            start_radius: 2.0,
        }
    }
}

/// `M = C Q + Q^T C`, symmetrized after forming.
pub fn symmetrized_form(q: &DMatrix<f64>, scaling: &DiagonalScaling) -> DMatrix<f64> {
    let c = scaling.as_slice();
    let cq = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| c[i] * q[(i, j)]);
    let m = &cq + cq.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn classify(m: &DMatrix<f64>, thresholds: &Thresholds) -> Result<Spectrum, CertificateError> {
    let eigenvalues = symmetric_eigenvalues(m)?;
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);
    let classification = if lambda_max < -thresholds.definite_band(m) {
        Classification::NegativeDefinite
    } else if lambda_max <= thresholds.semidefinite_band(m) {
        Classification::NegativeSemiDefinite
    } else {
        Classification::Inconclusive
    };
    Ok(Spectrum {
        classification,
        lambda_max,
        eigenvalues,
        frobenius_norm: m.norm(),
    })
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>, CertificateError> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let max_iterations = 1000 * m.nrows().max(1);
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, max_iterations)
        .ok_or(CertificateError::EigenFailure)?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CertificateError::EigenFailure);
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// First index with `Q_ii > 0`.
pub fn positive_diagonal(q: &DMatrix<f64>) -> Option<usize> {
    (0..q.nrows().min(q.ncols())).find(|&i| q[(i, i)] > 0.0)
}

fn certificate_for(
    q: &DMatrix<f64>,
    scaling: DiagonalScaling,
    thresholds: &Thresholds,
) -> Result<StabilityCertificate, CertificateError> {
    let m = symmetrized_form(q, &scaling);
    let spectrum = classify(&m, thresholds)?;
    let positive_diagonal = positive_diagonal(q);
    let classification = if positive_diagonal.is_some() {
        Classification::Inconclusive
    } else {
        spectrum.classification
    };
    let margin = if spectrum.frobenius_norm > 0.0 {
        spectrum.lambda_max / spectrum.frobenius_norm
    } else {
        0.0
    };
    Ok(StabilityCertificate {
        scaling,
        classification,
        lambda_max: spectrum.lambda_max,
        margin,
        positive_diagonal,
    })
}

/// Searches for a positive diagonal scaling minimizing `lambda_max(C Q + Q^T C)`.
///
/// Deterministic for a fixed `config.seed`. Starts run sequentially and the
/// reduction keeps the smallest objective, ties going to the earlier start.
pub fn search_certificate(
    q: &DMatrix<f64>,
    config: &CertificateConfig,
) -> Result<StabilityCertificate, CertificateError> {
    if !q.is_square() || q.nrows() == 0 {
        return Err(CertificateError::DimensionMismatch {
            rows: q.nrows(),
            cols: q.ncols(),
            len: q.nrows(),
        });
    }
    let dim = q.nrows();
    if positive_diagonal(q).is_some() {
        return certificate_for(q, DiagonalScaling::uniform(dim), &config.thresholds);
    }
    let objective = |theta: &DVector<f64>| {
        let m = symmetrized_form(q, &DiagonalScaling::from_logits(theta));
        match symmetric_eigenvalues(&m) {
            Ok(ev) => ev.last().copied().unwrap_or(0.0),
            Err(_) => f64::INFINITY,
        }
    };

    let options = NelderMeadOptions {
        max_iterations: config.max_iterations,
        f_tol: 1e-15,
        x_tol: 1e-12,
        initial_step: 0.5,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for start in 0..config.starts.max(1) {
        let theta0 = if start == 0 {
            DVector::zeros(dim)
        } else {
            DVector::from_fn(dim, |_, _| {
                rng.random_range(-config.start_radius..=config.start_radius)
            })
        };
        let mut result = nelder_mead::minimize(objective, theta0, &options);
        // One restart from the converged point refreshes a collapsed simplex.
        let restart = nelder_mead::minimize(objective, result.x.clone(), &options);
        if restart.f < result.f {
            result = restart;
        }
        if best.as_ref().is_none_or(|(_, f)| result.f < *f) {
            best = Some((result.x, result.f));
        }
    }

    let (theta, best_value) = best.expect("at least one start");
    let mut scaling = DiagonalScaling::from_logits(&theta);

    // Boundary polish: project onto the scalings with M(c) = 0, if any are positive.
    if let Some(candidate) = conservative_projection(q, &scaling) {
        let value = symmetric_eigenvalues(&symmetrized_form(q, &candidate))?
            .last()
            .copied()
            .unwrap_or(0.0);
        if value <= best_value.max(0.0) {
            scaling = candidate;
        }
    }
    certificate_for(q, scaling, &config.thresholds)
}

/// Projects `scaling` onto the null space of the linear map `c -> C Q + Q^T C`.
///
/// Returns `None` when the null space is trivial or the projection leaves the
/// positive orthant.
fn conservative_projection(q: &DMatrix<f64>, scaling: &DiagonalScaling) -> Option<DiagonalScaling> {
    let m = q.nrows();
    let rows = m * (m + 1) / 2;
    let mut map = DMatrix::zeros(rows, m);
    let mut row = 0;
    for i in 0..m {
        for j in i..m {
            // M_ij = c_i Q_ij + c_j Q_ji
            map[(row, i)] += q[(i, j)];
            map[(row, j)] += q[(j, i)];
            row += 1;
        }
    }
    let svd = map.svd(false, true);
    let v_t = svd.v_t?;
    let sigma_max: f64 = svd.singular_values.max();
    let c = DVector::from_column_slice(scaling.as_slice());

    let mut projected = DVector::zeros(m);
    let mut nullity = 0;
    for k in 0..m {
        let sigma = if k < svd.singular_values.len() {
            svd.singular_values[k]
        } else {
            0.0
        };
        if sigma <= 1e-12 * sigma_max.max(f64::MIN_POSITIVE) {
            let v = v_t.row(k).transpose();
            projected += &v * v.dot(&c);
            nullity += 1;
        }
    }
    if nullity == 0 {
        return None;
    }
    DiagonalScaling::new(projected.iter().copied().collect()).ok()
}

/// Independent recomputation of a certificate's claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub classification: Classification,
    pub lambda_max: f64,
    pub eigenvalues: Vec<f64>,
    pub definite_band: f64,
    pub semidefinite_band: f64,
}

/// Recomputes `M` and its spectrum from scratch and checks the certificate's
/// positivity, normalization and classification.
pub fn verify_certificate(
    q: &DMatrix<f64>,
    cert: &StabilityCertificate,
    thresholds: &Thresholds,
) -> Result<VerificationReport, CertificateError> {
    if !q.is_square() || q.nrows() != cert.scaling.len() {
        return Err(CertificateError::DimensionMismatch {
            rows: q.nrows(),
            cols: q.ncols(),
            len: cert.scaling.len(),
        });
    }
    cert.scaling
        .check()
        .map_err(|e| CertificateError::VerificationMismatch(e.to_string()))?;

    let c = cert.scaling.as_slice();
    let m = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| {
        c[i] * q[(i, j)] + q[(j, i)] * c[j]
    });
    let definite_band = thresholds.definite_band(&m);
    let semidefinite_band = thresholds.semidefinite_band(&m);
    let eigenvalues = symmetric_eigenvalues(&m)?;
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);

    let classification = if positive_diagonal(q).is_some() {
        Classification::Inconclusive
    } else if lambda_max < -definite_band {
        Classification::NegativeDefinite
    } else if lambda_max <= semidefinite_band {
        Classification::NegativeSemiDefinite
    } else {
        Classification::Inconclusive
    };

    if classification != cert.classification {
        return Err(CertificateError::VerificationMismatch(format!(
            "certificate claims {} but recomputed spectrum gives {} (lambda_max = {lambda_max:e})",
            cert.classification, classification
        )));
    }
    let tol = 1e-9 * m.norm().max(1.0);
    if (lambda_max - cert.lambda_max).abs() > tol {
        return Err(CertificateError::VerificationMismatch(format!(
            "certificate lambda_max {:e} differs from recomputed {lambda_max:e}",
            cert.lambda_max
        )));
    }
    Ok(VerificationReport {
        classification,
        lambda_max,
        eigenvalues,
        definite_band,
        semidefinite_band,
    })
}
