//! The generalized Liapunov function of a QP system and its time derivative.
//!
//! For a positive scaling `c` and interior equilibrium `x*`,
//!
//! ```text
//! W(x) = sum_i c_i [phi_i(x) - phi_i(x*) - phi_i(x*) ln(phi_i(x) / phi_i(x*))]
//! dW/dt = 1/2 (phi(x) - phi(x*))^T (C Q + Q^T C) (phi(x) - phi(x*))
//! ```
//!
//! `W` is evaluated as `sum_i c_i phi_i(x*) h(d_i)` with
//! `d = B (ln x - ln x*)` and `h(d) = e^d - 1 - d`, which stays accurate
//! near `x*`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::{symmetrized_form, DiagonalScaling};
use crate::model::{ModelError, QpSystem, StateVector};

/// Below this `|d|`, `h(d)` is summed as a series instead of `expm1(d) - d`.
const SERIES_CUTOFF: f64 = 1e-3;

/// `h(d) = e^d - 1 - d`, nonnegative and zero only at `d = 0`.
pub fn entropy_kernel(d: f64) -> f64 {
    if d.abs() < SERIES_CUTOFF {
        let tail = 1.0 / 120.0 + d * (1.0 / 720.0 + d / 5040.0);
        d * d * (0.5 + d * (1.0 / 6.0 + d * (1.0 / 24.0 + d * tail)))
    } else {
        d.exp_m1() - d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiapunovEvaluation {
    pub w: f64,
    pub w_dot: f64,
    pub gradient: Vec<f64>,
}

/// `W` for a fixed system, scaling and reference point.
#[derive(Debug, Clone)]
pub struct LiapunovFunction {
    system: QpSystem,
    c: DVector<f64>,
    xstar: StateVector,
    log_xstar: DVector<f64>,
    log_phi_star: DVector<f64>,
    phi_star: DVector<f64>,
    form: DMatrix<f64>,
    equilibrium: Result<(), ModelError>,
}

impl LiapunovFunction {
    /// `xstar` need not be an equilibrium for `W` itself, but the derivative
    /// formulas refuse to run unless it passes the equilibrium gate.
    pub fn new(
        system: &QpSystem,
        scaling: &DiagonalScaling,
        xstar: &StateVector,
    ) -> Result<Self, ModelError> {
        if scaling.len() != system.m() {
            return Err(ModelError::DimensionMismatch(format!(
                "scaling has {} entries but the system has m = {}",
                scaling.len(),
                system.m()
            )));
        }
        system.check_dim(xstar)?;
        let log_xstar = xstar.ln();
        let log_phi_star = system.log_quasimonomials(&log_xstar);
        let phi_star = log_phi_star.map(f64::exp);
        let form = symmetrized_form(&system.interaction_matrix(), scaling);
        Ok(Self {
            equilibrium: system.check_equilibrium(xstar),
            system: system.clone(),
            c: DVector::from_column_slice(scaling.as_slice()),
            xstar: xstar.clone(),
            log_xstar,
            log_phi_star,
            phi_star,
            form,
        })
    }

    pub fn system(&self) -> &QpSystem {
        &self.system
    }

    pub fn xstar(&self) -> &StateVector {
        &self.xstar
    }

    pub fn scaling(&self) -> &DVector<f64> {
        &self.c
    }

    /// `M = C Q + Q^T C`.
    pub fn form(&self) -> &DMatrix<f64> {
        &self.form
    }

    pub fn is_equilibrium(&self) -> bool {
        self.equilibrium.is_ok()
    }

    fn log_displacement(&self, x: &StateVector) -> DVector<f64> {
        self.system.log_quasimonomials(&(x.ln() - &self.log_xstar))
    }

    /// `W(x)`.
    pub fn value(&self, x: &StateVector) -> f64 {
        let d = self.log_displacement(x);
        (0..self.system.m())
            .map(|i| self.c[i] * self.phi_star[i] * entropy_kernel(d[i]))
            .sum()
    }

    /// `phi(x) - phi(x*)`, computed as `phi(x*) expm1(d)`.
    pub fn displacement(&self, x: &StateVector) -> DVector<f64> {
        let d = self.log_displacement(x);
        DVector::from_fn(self.system.m(), |i, _| self.phi_star[i] * d[i].exp_m1())
    }

    /// `dW/dt` as the quadratic form `1/2 delta^T M delta`.
    pub fn derivative(&self, x: &StateVector) -> Result<f64, ModelError> {
        self.equilibrium.clone()?;
        let delta = self.displacement(x);
        Ok(0.5 * delta.dot(&(&self.form * &delta)))
    }

    /// `dW/dx_j = sum_i c_i B_ij (phi_i(x) - phi_i(x*)) / x_j`.
    pub fn gradient(&self, x: &StateVector) -> DVector<f64> {
        let weighted = self.displacement(x).component_mul(&self.c);
        let g = self.system.b().transpose() * weighted;
        g.component_div(x.as_vector())
    }

    /// `dW/dt` through the chain rule: `sum_i c_i (1 - phi_i*/phi_i) dphi_i/dt`,
    /// with `dphi/dt` from the quasimonomial Jacobian applied to the shifted
    /// vector field.
    pub fn chain_rule_derivative(&self, x: &StateVector) -> Result<f64, ModelError> {
        self.equilibrium.clone()?;
        let x_dot = self.system.shifted_vector_field(x, &self.xstar)?;
        let phi_dot = self.system.quasimonomial_jacobian(x) * x_dot;
        let d = self.log_displacement(x);
        Ok((0..self.system.m())
            .map(|i| self.c[i] * -(-d[i]).exp_m1() * phi_dot[i])
            .sum())
    }

    /// `W(x)` through the change of variables used to prove positivity.
    ///
    /// `B` is completed to an invertible `B~ = (B | B*)`, the state is embedded
    /// as `z = (x, 1, ..., 1)` with `z* = (x*, 1, ..., 1)`, and the function
    /// `V(y) = sum_i c_i (y_i - y_i* - y_i* ln(y_i / y_i*))` is evaluated at
    /// `y = z^B~`. The result must coincide with [`Self::value`].
    pub fn positivity_oracle(&self, x: &StateVector) -> Result<f64, ModelError> {
        self.system.check_dim(x)?;
        let extended = self.system.extend_exponent_matrix()?;
        let (n, m) = (self.system.n(), self.system.m());
        let embed = |v: &DVector<f64>| DVector::from_fn(m, |j, _| if j < n { v[j] } else { 0.0 });
        let log_z_star = embed(&self.log_xstar);
        let log_ratio = embed(&(x.ln() - &self.log_xstar));

        // y / y* = (z / z*)^B~, formed in log space.
        let log_y_star = &extended.matrix * &log_z_star;
        let log_y_ratio = &extended.matrix * &log_ratio;
        Ok((0..m)
            .map(|i| self.c[i] * log_y_star[i].exp() * entropy_kernel(log_y_ratio[i]))
            .sum())
    }

    pub fn evaluate(&self, x: &StateVector) -> Result<LiapunovEvaluation, ModelError> {
        Ok(LiapunovEvaluation {
            w: self.value(x),
            w_dot: self.derivative(x)?,
            gradient: self.gradient(x).iter().copied().collect(),
        })
    }

    /// `ln phi(x*)`.
    pub fn log_phi_star(&self) -> &DVector<f64> {
        &self.log_phi_star
    }
}
