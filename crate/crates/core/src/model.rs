//! Quasipolynomial system representation and pointwise evaluations.
//!
//! A quasipolynomial (QP) system on the interior of the positive orthant is
//!
//! ```text
//! dx_i/dt = x_i (lambda_i + sum_j A_ij phi_j(x)),   phi_j(x) = prod_k x_k^B_jk
//! ```
//!
//! with `A` of shape `n x m`, `B` of shape `m x n`, `m >= n` and `rank(B) = n`.
//! Lotka-Volterra systems are the special case `B = I`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative singular-value threshold below which a matrix is declared rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Relative residual tolerance used to accept a point as an equilibrium in
/// operations that are only meaningful at fixed points.
pub const EQUILIBRIUM_GATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(
        "exponent matrix B is rank deficient: smallest singular value {sigma_min:e} \
         <= {RANK_TOL:e} * largest ({sigma_max:e})"
    )]
    RankDeficientB { sigma_min: f64, sigma_max: f64 },
    #[error("non-finite entry in {field}[{row}][{col}]")]
    NonFiniteEntry {
        field: &'static str,
        row: usize,
        col: usize,
    },
    #[error("state is not in the open positive orthant: component {index} is {value}")]
    NotInterior { index: usize, value: f64 },
    #[error("point is not an equilibrium: residual {residual:e} exceeds {tolerance:e}")]
    NotAnEquilibrium { residual: f64, tolerance: f64 },
    #[error("could not complete B to an invertible square matrix")]
    ExtensionFailed,
}

/// A point in the open positive orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVector(DVector<f64>);

impl StateVector {
    pub fn new(values: impl Into<Vec<f64>>) -> Result<Self, ModelError> {
        Self::from_vector(DVector::from_vec(values.into()))
    }

    pub fn from_vector(x: DVector<f64>) -> Result<Self, ModelError> {
        for (index, &value) in x.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NotInterior { index, value });
            }
        }
        Ok(Self(x))
    }

    /// Builds a state from logarithmic coordinates `u = ln x`.
    pub fn from_log(u: &DVector<f64>) -> Result<Self, ModelError> {
        Self::from_vector(u.map(f64::exp))
    }

    pub fn ones(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn ln(&self) -> DVector<f64> {
        self.0.map(f64::ln)
    }
}

impl TryFrom<Vec<f64>> for StateVector {
    type Error = ModelError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(x: StateVector) -> Self {
        x.0.as_slice().to_vec()
    }
}

/// A validated quasipolynomial system.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSystem {
    lambda: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl QpSystem {
    /// Validates dimensions, finiteness and the rank condition on `B`.
    pub fn new(lambda: DVector<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = lambda.len();
        if n == 0 {
            return Err(ModelError::DimensionMismatch(
                "lambda must have at least one entry".into(),
            ));
        }
        if a.nrows() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "rows(A) = {} but len(lambda) = {}",
                a.nrows(),
                n
            )));
        }
        let m = a.ncols();
        if b.nrows() != m {
            return Err(ModelError::DimensionMismatch(format!(
                "cols(A) = {} but rows(B) = {}",
                m,
                b.nrows()
            )));
        }
        if b.ncols() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "cols(B) = {} but len(lambda) = {}",
                b.ncols(),
                n
            )));
        }
        if m < n {
            return Err(ModelError::DimensionMismatch(format!(
                "quasimonomial count m = {m} is smaller than state dimension n = {n}"
            )));
        }
        check_finite(
            "lambda",
            &DMatrix::from_column_slice(n, 1, lambda.as_slice()),
        )?;
        check_finite("A", &a)?;
        check_finite("B", &b)?;

        let (sigma_min, sigma_max) = singular_value_range(&b);
        if !(sigma_max > 0.0) || sigma_min <= RANK_TOL * sigma_max {
            return Err(ModelError::RankDeficientB {
                sigma_min,
                sigma_max,
            });
        }
        Ok(Self { lambda, a, b })
    }

    /// Convenience constructor from row-major nested vectors.
    pub fn from_rows(lambda: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self, ModelError> {
        Self::new(
            DVector::from_column_slice(lambda),
            matrix_from_rows("A", a)?,
            matrix_from_rows("B", b)?,
        )
    }

    /// Embeds a Lotka-Volterra system `dx_i/dt = x_i (lambda_i + sum_j A_ij x_j)`.
    pub fn from_lotka_volterra(lambda: DVector<f64>, a: DMatrix<f64>) -> Result<Self, ModelError> {
        if !a.is_square() {
            return Err(ModelError::DimensionMismatch(format!(
                "Lotka-Volterra interaction matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        Self::new(lambda, a, DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Ratio of largest to smallest singular value of `B`.
    pub fn exponent_condition_number(&self) -> f64 {
        let (lo, hi) = singular_value_range(&self.b);
        hi / lo
    }

    /// `Q = B A`, the `m x m` interaction matrix of the quasimonomials.
    pub fn interaction_matrix(&self) -> DMatrix<f64> {
        &self.b * &self.a
    }

    /// `ln phi(x) = B ln x`.
    pub fn log_quasimonomials(&self, log_x: &DVector<f64>) -> DVector<f64> {
        &self.b * log_x
    }

    /// `phi_i(x) = prod_j x_j^B_ij`, evaluated as `exp(B ln x)`.
    pub fn quasimonomials(&self, x: &StateVector) -> DVector<f64> {
        self.log_quasimonomials(&x.ln()).map(f64::exp)
    }

    /// Per-capita growth rates `lambda + A phi`, given `u = ln x`.
    ///
    /// This is also the right-hand side of the system in logarithmic
    /// coordinates, `du/dt = lambda + A exp(B u)`.
    pub fn log_vector_field(&self, u: &DVector<f64>) -> DVector<f64> {
        let phi = self.log_quasimonomials(u).map(f64::exp);
        &self.lambda + &self.a * phi
    }

    pub fn growth_rates(&self, x: &StateVector) -> DVector<f64> {
        self.log_vector_field(&x.ln())
    }

    pub fn vector_field(&self, x: &StateVector) -> DVector<f64> {
        self.growth_rates(x).component_mul(x.as_vector())
    }

    /// Residual tolerance for accepting `x` as an equilibrium, scaled by the
    /// magnitude of the terms that cancel in `lambda + A phi(x)`.
    pub fn equilibrium_gate(&self, x: &StateVector) -> f64 {
        let phi = self.quasimonomials(x);
        let term_scale = (0..self.n())
            .map(|i| {
                (0..self.m())
                    .map(|j| (self.a[(i, j)] * phi[j]).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        EQUILIBRIUM_GATE_TOL * (1.0 + self.lambda.amax() + term_scale)
    }

    /// Fails with `NotAnEquilibrium` unless `xstar` passes the equilibrium gate.
    pub fn check_equilibrium(&self, xstar: &StateVector) -> Result<(), ModelError> {
        self.check_dim(xstar)?;
        let residual = self.growth_rates(xstar).amax();
        let tolerance = self.equilibrium_gate(xstar);
        if residual.is_finite() && residual <= tolerance {
            Ok(())
        } else {
            Err(ModelError::NotAnEquilibrium {
                residual,
                tolerance,
            })
        }
    }

    /// The vector field written relative to a fixed point:
    /// `dx_i/dt = x_i sum_j A_ij (phi_j(x) - phi_j(x*))`.
    pub fn shifted_vector_field(
        &self,
        x: &StateVector,
        xstar: &StateVector,
    ) -> Result<DVector<f64>, ModelError> {
        self.check_equilibrium(xstar)?;
        let diff = self.quasimonomial_displacement(x, xstar);
        Ok((&self.a * diff).component_mul(x.as_vector()))
    }

    /// `phi(x) - phi(x*)`, evaluated as `phi(x*) * expm1(B (ln x - ln x*))`.
    pub fn quasimonomial_displacement(&self, x: &StateVector, xstar: &StateVector) -> DVector<f64> {
        let log_star = self.log_quasimonomials(&xstar.ln());
        let d = self.log_quasimonomials(&(x.ln() - xstar.ln()));
        DVector::from_fn(self.m(), |i, _| log_star[i].exp() * d[i].exp_m1())
    }

    /// Entry `(i, j)` is `d phi_i / d x_j = B_ij phi_i(x) / x_j`.
    pub fn quasimonomial_jacobian(&self, x: &StateVector) -> DMatrix<f64> {
        let phi = self.quasimonomials(x);
        DMatrix::from_fn(self.m(), self.n(), |i, j| {
            self.b[(i, j)] * phi[i] / x.as_vector()[j]
        })
    }

    /// Completes `B` to an invertible `m x m` matrix `(B | B*)`.
    ///
    /// Standard basis columns are appended greedily when they raise the
    /// numerical rank; seeded random unit columns are used if the sweep does
    /// not reach the conditioning bound.
    pub fn extend_exponent_matrix(&self) -> Result<ExtendedExponentMatrix, ModelError> {
        let (n, m) = (self.n(), self.m());
        if m == n {
            return Ok(ExtendedExponentMatrix {
                matrix: self.b.clone(),
                original_columns: n,
            });
        }

        let mut columns: Vec<DVector<f64>> = self.b.column_iter().map(|c| c.into_owned()).collect();
        for k in 0..m {
            if columns.len() == m {
                break;
            }
            let mut candidate = columns.clone();
            candidate.push(DVector::from_fn(m, |i, _| if i == k { 1.0 } else { 0.0 }));
            if has_full_column_rank(&DMatrix::from_columns(&candidate)) {
                columns = candidate;
            }
        }
        if columns.len() == m && has_full_column_rank(&DMatrix::from_columns(&columns)) {
            return Ok(ExtendedExponentMatrix {
                matrix: DMatrix::from_columns(&columns),
                original_columns: n,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b7);
        for _attempt in 0..64 {
            let mut columns: Vec<DVector<f64>> =
                self.b.column_iter().map(|c| c.into_owned()).collect();
            while columns.len() < m {
                let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
                let norm = v.norm();
                if norm > 0.0 {
                    columns.push(v / norm);
                }
            }
            let matrix = DMatrix::from_columns(&columns);
            if has_full_column_rank(&matrix) {
                return Ok(ExtendedExponentMatrix {
                    matrix,
                    original_columns: n,
                });
            }
        }
        Err(ModelError::ExtensionFailed)
    }

    pub(crate) fn check_dim(&self, x: &StateVector) -> Result<(), ModelError> {
        if x.dim() != self.n() {
            return Err(ModelError::DimensionMismatch(format!(
                "state has {} components but the system has n = {}",
                x.dim(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// `B~ = (B | B*)`, an invertible square completion of the exponent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedExponentMatrix {
    pub matrix: DMatrix<f64>,
    pub original_columns: usize,
}

impl ExtendedExponentMatrix {
    /// Ratio of smallest to largest singular value.
    pub fn inverse_condition(&self) -> f64 {
        let (lo, hi) = singular_value_range(&self.matrix);
        lo / hi
    }
}

/// Returns `(sigma_min, sigma_max)` over the `min(rows, cols)` singular values.
pub fn singular_value_range(matrix: &DMatrix<f64>) -> (f64, f64) {
    let sv = matrix.singular_values();
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (lo, hi)
}

fn has_full_column_rank(matrix: &DMatrix<f64>) -> bool {
    if matrix.ncols() > matrix.nrows() {
        return false;
    }
    let (lo, hi) = singular_value_range(matrix);
    hi > 0.0 && lo > RANK_TOL * hi
}

fn check_finite(field: &'static str, matrix: &DMatrix<f64>) -> Result<(), ModelError> {
    for row in 0..matrix.nrows() {
        for col in 0..matrix.ncols() {
            if !matrix[(row, col)].is_finite() {
                return Err(ModelError::NonFiniteEntry { field, row, col });
            }
        }
    }
    Ok(())
}

/// Builds a matrix from row-major nested vectors, rejecting ragged input.
pub fn matrix_from_rows(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(ModelError::DimensionMismatch(format!(
            "{field} is ragged: row 0 has {ncols} entries but row {i} has {}",
            row.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn predator_prey() -> QpSystem {
        QpSystem::from_rows(
            &[1.0, -1.0],
            &[vec![0.0, -1.0], vec![1.0, 0.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn identity_exponents_are_accepted() {
        let sys = predator_prey();
        assert_eq!((sys.n(), sys.m()), (2, 2));
    }

    #[test]
    fn proportional_rows_are_rank_deficient() {
        let err = QpSystem::from_rows(
            &[1.0, 1.0],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0, 1.0], vec![2.0, 2.0]],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::RankDeficientB { .. }), "{err}");
    }

    #[test]
    fn single_state_two_monomials_is_valid() {
        let sys =
            QpSystem::from_rows(&[2.0], &[vec![-1.0, -1.0]], &[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!((sys.n(), sys.m()), (1, 2));
    }

    #[test]
    fn dimension_errors_name_the_fields() {
        let err = QpSystem::from_rows(&[1.0], &[vec![1.0, 2.0, 3.0]], &[vec![1.0], vec![1.0]])
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cols(A)") && msg.contains("rows(B)"), "{msg}");

        let err = QpSystem::from_rows(&[1.0, 2.0], &[vec![1.0]], &[vec![1.0]]).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch(_)));

        // m < n
        let err = QpSystem::from_rows(&[1.0, 1.0], &[vec![1.0], vec![1.0]], &[vec![1.0, 1.0]])
            .unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch(_)));

        let err = matrix_from_rows("A", &[vec![1.0, 2.0], vec![1.0]]).unwrap_err();
        assert!(err.to_string().contains("ragged"));
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let err = QpSystem::from_rows(&[1.0], &[vec![f64::NAN]], &[vec![1.0]]).unwrap_err();
        assert_eq!(
            err,
            ModelError::NonFiniteEntry {
                field: "A",
                row: 0,
                col: 0
            }
        );
        let err = QpSystem::from_rows(&[f64::INFINITY], &[vec![1.0]], &[vec![1.0]]).unwrap_err();
        assert!(matches!(
            err,
            ModelError::NonFiniteEntry {
                field: "lambda",
                ..
            }
        ));
    }

    #[test]
    fn state_vector_rejects_boundary_and_negative_points() {
        assert!(StateVector::new(vec![1.0, 0.0]).is_err());
        assert!(StateVector::new(vec![-1.0]).is_err());
        assert!(StateVector::new(vec![f64::NAN]).is_err());
        assert!(StateVector::from_log(&DVector::from_vec(vec![-1000.0])).is_err());
        assert!(StateVector::new(vec![1e-300, 3.0]).is_ok());
    }

    #[test]
    fn quasimonomial_examples() {
        let sys = predator_prey();
        let x = StateVector::new(vec![2.0, 3.0]).unwrap();
        assert_relative_eq!(
            sys.quasimonomials(&x),
            DVector::from_vec(vec![2.0, 3.0]),
            epsilon = 1e-15
        );

        let sys = QpSystem::from_rows(
            &[0.0, 0.0],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[vec![1.0, 1.0], vec![2.0, 0.0]],
        )
        .unwrap();
        assert_relative_eq!(
            sys.quasimonomials(&x),
            DVector::from_vec(vec![6.0, 4.0]),
            max_relative = 1e-14
        );
        assert_eq!(
            sys.quasimonomials(&StateVector::ones(2)),
            DVector::from_element(2, 1.0)
        );
    }

    #[test]
    fn interaction_matrix_examples() {
        assert_eq!(
            predator_prey().interaction_matrix(),
            predator_prey().a().clone()
        );
        let sys =
            QpSystem::from_rows(&[2.0], &[vec![-1.0, -1.0]], &[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(
            sys.interaction_matrix(),
            DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -2.0, -2.0])
        );
        let zero = QpSystem::from_rows(&[1.0], &[vec![0.0, 0.0]], &[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(zero.interaction_matrix(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn vector_field_examples() {
        let sys = predator_prey();
        assert_eq!(sys.vector_field(&StateVector::ones(2)), DVector::zeros(2));
        let x = StateVector::new(vec![2.0, 1.0]).unwrap();
        assert_relative_eq!(
            sys.vector_field(&x),
            DVector::from_vec(vec![0.0, 1.0]),
            epsilon = 1e-15
        );

        let zero = QpSystem::from_rows(
            &[0.0, 0.0],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[vec![1.0, 0.5], vec![-0.3, 2.0]],
        )
        .unwrap();
        let x = StateVector::new(vec![0.3, 7.0]).unwrap();
        assert_eq!(zero.vector_field(&x), DVector::zeros(2));
    }

    #[test]
    fn shifted_field_matches_and_gates() {
        let sys = predator_prey();
        let xstar = StateVector::ones(2);
        let x = StateVector::new(vec![2.0, 1.0]).unwrap();
        assert_relative_eq!(
            sys.shifted_vector_field(&x, &xstar).unwrap(),
            sys.vector_field(&x),
            epsilon = 1e-15
        );
        assert_eq!(
            sys.shifted_vector_field(&xstar, &xstar).unwrap(),
            DVector::zeros(2)
        );
        let err = sys.shifted_vector_field(&x, &x).unwrap_err();
        assert!(matches!(err, ModelError::NotAnEquilibrium { .. }));
    }

    #[test]
    fn jacobian_examples() {
        let sys = predator_prey();
        assert_eq!(
            sys.quasimonomial_jacobian(&StateVector::ones(2)),
            DMatrix::identity(2, 2)
        );
        let sq = QpSystem::from_rows(&[0.0], &[vec![0.0]], &[vec![2.0]]).unwrap();
        let j = sq.quasimonomial_jacobian(&StateVector::new(vec![3.0]).unwrap());
        assert_relative_eq!(j[(0, 0)], 6.0, max_relative = 1e-14);
    }

    #[test]
    fn lotka_volterra_embedding() {
        let lambda = DVector::from_vec(vec![1.0, -1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let sys = QpSystem::from_lotka_volterra(lambda, a.clone()).unwrap();
        assert_eq!(sys.interaction_matrix(), a);
        assert_eq!(sys.b(), &DMatrix::<f64>::identity(2, 2));

        let err =
            QpSystem::from_lotka_volterra(DVector::zeros(2), DMatrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch(_)));
    }

    #[test]
    fn extension_examples() {
        let sys = predator_prey();
        let ext = sys.extend_exponent_matrix().unwrap();
        assert_eq!(&ext.matrix, sys.b());

        let sys =
            QpSystem::from_rows(&[2.0], &[vec![-1.0, -1.0]], &[vec![1.0], vec![2.0]]).unwrap();
        let ext = sys.extend_exponent_matrix().unwrap();
        assert_eq!(ext.original_columns, 1);
        assert_eq!(ext.matrix.column(0), sys.b().column(0));
        assert!(ext.matrix.determinant().abs() > 1e-12);
        assert!(ext.inverse_condition() > RANK_TOL);
    }

    #[test]
    fn extension_skips_basis_columns_already_in_span() {
        // B's column is e_1, so the sweep must reject e_1 and keep e_2, e_3.
        let sys = QpSystem::from_rows(
            &[1.0],
            &[vec![-1.0, 0.0, 0.0]],
            &[vec![1.0], vec![0.0], vec![0.0]],
        )
        .unwrap();
        let ext = sys.extend_exponent_matrix().unwrap();
        assert_relative_eq!(ext.matrix.determinant().abs(), 1.0, epsilon = 1e-15);
    }
}
