//! Interior fixed points by multistart Newton iteration in `u = ln x`.
//!
//! Inside the orthant `x_i > 0`, so fixed points of the QP system are the
//! roots of `r(u) = lambda + A exp(B u)`. Its Jacobian is `A diag(phi) B`.
//! Working in `u` keeps every iterate interior.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{QpSystem, StateVector};

/// Accepted stall residual, as a multiple of the residual tolerance, when the
/// Newton step has shrunk below `step_tol`.
const STALL_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Equilibrium {
    pub xstar: StateVector,
    /// Infinity norm of `lambda + A phi(x*)`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Which start produced this point (0 is the first start tried).
    pub start_index: usize,
}

#[derive(Debug, Clone, Error)]
pub enum EquilibriumError {
    #[error(
        "Newton iteration did not converge from any of {starts} starts \
         (best residual {best_residual:e}, {singular_starts} starts hit a singular Jacobian)"
    )]
    NoConvergence {
        starts: usize,
        singular_starts: usize,
        best_residual: f64,
        best: Option<Box<Equilibrium>>,
    },
    #[error("Jacobian A diag(phi) B is singular at every start ({starts} tried)")]
    SingularJacobian { starts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    /// Random starts drawn after the deterministic ones.
    pub random_starts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Relative residual tolerance; the absolute tolerance is
    /// `residual_tol * (1 + |lambda|_inf)`.
    pub residual_tol: f64,
    pub step_tol: f64,
    /// Random starts are drawn uniformly from `[-start_radius, start_radius]^n` in `u`.
    pub start_radius: f64,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            random_starts: 20,
            max_iterations: 100,
            seed: 0,
            residual_tol: 1e-12,
            step_tol: 1e-14,
            start_radius: 2.0,
        }
    }
}

/// Infinity norm of `lambda + A phi(x)`.
pub fn residual(sys: &QpSystem, x: &StateVector) -> f64 {
    sys.growth_rates(x).amax()
}

enum StartOutcome {
    Converged(Equilibrium),
    Failed {
        best: Option<Equilibrium>,
        singular: bool,
    },
}

/// Finds an interior equilibrium.
///
/// Starts are tried in order: the caller's guess (if any), `u = 0`, then
/// `config.random_starts` seeded uniform draws. The first converged root is
/// returned; other roots may exist.
pub fn find_equilibrium(
    sys: &QpSystem,
    initial_guess: Option<&StateVector>,
    config: &EquilibriumConfig,
) -> Result<Equilibrium, EquilibriumError> {
    let n = sys.n();
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(config.random_starts + 2);
    if let Some(guess) = initial_guess {
        starts.push(guess.ln());
    }
    starts.push(DVector::zeros(n));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.random_starts {
        starts.push(DVector::from_fn(n, |_, _| {
            rng.random_range(-config.start_radius..=config.start_radius)
        }));
    }

    let tol = config.residual_tol * (1.0 + sys.lambda().amax());
    let mut best: Option<Equilibrium> = None;
    let mut singular_starts = 0;
    for (index, u0) in starts.iter().enumerate() {
        match newton(sys, u0.clone(), tol, config, index) {
            StartOutcome::Converged(eq) => return Ok(eq),
            StartOutcome::Failed {
                best: candidate,
                singular,
            } => {
                singular_starts += usize::from(singular);
                if let Some(c) = candidate {
                    if best
                        .as_ref()
                        .is_none_or(|b| c.residual_norm < b.residual_norm)
                    {
                        best = Some(c);
                    }
                }
            }
        }
    }

    if singular_starts == starts.len() {
        return Err(EquilibriumError::SingularJacobian {
            starts: starts.len(),
        });
    }
    Err(EquilibriumError::NoConvergence {
        starts: starts.len(),
        singular_starts,
        best_residual: best.as_ref().map_or(f64::INFINITY, |b| b.residual_norm),
        best: best.map(Box::new),
    })
}

fn newton(
    sys: &QpSystem,
    mut u: DVector<f64>,
    tol: f64,
    config: &EquilibriumConfig,
    start_index: usize,
) -> StartOutcome {
    let mut singular = false;
    let Some((mut phi, mut r)) = evaluate(sys, &u) else {
        return StartOutcome::Failed {
            best: None,
            singular,
        };
    };
    let mut rnorm = r.amax();

    // The reported residual is recomputed from the reconstructed state.
    let snapshot = |u: &DVector<f64>, iterations: usize, converged: bool| {
        StateVector::from_log(u).ok().map(|xstar| Equilibrium {
            residual_norm: residual(sys, &xstar),
            xstar,
            iterations,
            converged,
            start_index,
        })
    };

    for iteration in 0..config.max_iterations {
        if rnorm <= tol {
            let (u, iterations) = polish(sys, u, rnorm, iteration);
            return match snapshot(&u, iterations, true) {
                Some(eq) => StartOutcome::Converged(eq),
                None => StartOutcome::Failed {
                    best: None,
                    singular,
                },
            };
        }

        let jacobian = sys.a() * DMatrix::from_diagonal(&phi) * sys.b();
        let step = match jacobian.lu().solve(&(-&r)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                singular = true;
                break;
            }
        };

        // Backtracking on the Euclidean residual norm; the Newton direction
        // is a descent direction for |r|^2 whenever the Jacobian is regular.
        let r2 = r.norm();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &u + &step * t;
            if let Some((phi_t, r_t)) = evaluate(sys, &trial) {
                if r_t.norm() <= (1.0 - 1e-4 * t) * r2 {
                    accepted = Some((trial, phi_t, r_t));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, phi_t, r_t)) = accepted else {
            break;
        };
        let step_norm = (&trial - &u).amax();
        u = trial;
        phi = phi_t;
        r = r_t;
        rnorm = r.amax();

        if step_norm <= config.step_tol {
            let converged = rnorm <= STALL_FACTOR * tol;
            return match snapshot(&u, iteration + 1, converged) {
                Some(eq) if converged => StartOutcome::Converged(eq),
                other => StartOutcome::Failed {
                    best: other,
                    singular,
                },
            };
        }
    }

    if rnorm <= tol {
        if let Some(eq) = snapshot(&u, config.max_iterations, true) {
            return StartOutcome::Converged(eq);
        }
    }
    StartOutcome::Failed {
        best: snapshot(&u, config.max_iterations, false),
        singular,
    }
}

/// Up to two extra full Newton steps after convergence, each kept only if it
/// lowers the residual.
fn polish(
    sys: &QpSystem,
    mut u: DVector<f64>,
    mut rnorm: f64,
    mut iterations: usize,
) -> (DVector<f64>, usize) {
    for _ in 0..2 {
        let Some((phi, r)) = evaluate(sys, &u) else {
            break;
        };
        let jacobian = sys.a() * DMatrix::from_diagonal(&phi) * sys.b();
        let Some(step) = jacobian.lu().solve(&(-&r)) else {
            break;
        };
        let trial = &u + step;
        match evaluate(sys, &trial) {
            Some((_, r_t)) if r_t.amax() < rnorm => {
                rnorm = r_t.amax();
                u = trial;
                iterations += 1;
            }
            _ => break,
        }
    }
    (u, iterations)
}

fn evaluate(sys: &QpSystem, u: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let phi = sys.log_quasimonomials(u).map(f64::exp);
    let r = sys.lambda() + sys.a() * &phi;
    let finite = phi.iter().chain(r.iter()).all(|v| v.is_finite()) && phi.iter().all(|&p| p > 0.0);
    finite.then_some((phi, r))
}
