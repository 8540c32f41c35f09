//! Trajectory integration inside the positive orthant and Liapunov monitoring.
//!
//! Trajectories are integrated in `u = ln x`, where the QP system reads
//! `du/dt = lambda + A exp(B u)`, with the Dormand-Prince 5(4) pair. States
//! recovered through `exp` are interior by construction. Output is sampled on
//! a uniform grid by cubic Hermite interpolation between accepted steps, with
//! the quartic correction of the Dormand-Prince continuous extension.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{Classification, StabilityCertificate, Thresholds};
use crate::liapunov::LiapunovFunction;
use crate::model::{ModelError, QpSystem, StateVector};

// Dormand-Prince 5(4) tableau. The system is autonomous, so the nodes are unused.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Shampine's dense-output weights for the quartic correction to the Hermite cubic.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Error)]
pub enum DynamicsError {
    #[error("integration horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("at least two output samples are required, got {0}")]
    InvalidSampleCount(usize),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow {
        t: f64,
        h: f64,
        partial: Box<TrajectoryRecord>,
    },
    #[error("state left the representable orthant at t = {t}")]
    NonFiniteState {
        t: f64,
        partial: Box<TrajectoryRecord>,
    },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxStepsExceeded {
        t: f64,
        max_steps: usize,
        partial: Box<TrajectoryRecord>,
    },
    #[error(
        "conservation hypothesis not met: |M|_F = {norm:e} exceeds the semidefinite band {band:e}"
    )]
    HypothesisNotMet { norm: f64, band: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl DynamicsError {
    /// The trajectory recorded before a numerical failure, if any.
    pub fn partial_record(&self) -> Option<&TrajectoryRecord> {
        match self {
            Self::StepSizeUnderflow { partial, .. }
            | Self::NonFiniteState { partial, .. }
            | Self::MaxStepsExceeded { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Relative tolerance per component of `u = ln x`.
    pub rtol: f64,
    /// Absolute tolerance per component of `u = ln x`.
    pub atol: f64,
    /// Number of uniformly spaced output samples, endpoints included.
    pub samples: usize,
    pub max_steps: usize,
    /// Steps below `min_step_factor * max(1, |t|)` count as underflow.
    pub min_step_factor: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            samples: 256,
            max_steps: 2_000_000,
            min_step_factor: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// `W` at each sample; empty when integrated without a Liapunov function.
    pub w_samples: Vec<f64>,
    pub w_dot_samples: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&StateVector> {
        self.states.last()
    }
}

struct Recorder<'a> {
    record: TrajectoryRecord,
    liapunov: Option<&'a LiapunovFunction>,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, u: &DVector<f64>) -> Result<(), ()> {
        let x = StateVector::from_log(u).map_err(|_| ())?;
        if let Some(lf) = self.liapunov {
            self.record.w_samples.push(lf.value(&x));
            // The gate is checked before integration starts.
            self.record
                .w_dot_samples
                .push(lf.derivative(&x).unwrap_or(f64::NAN));
        }
        self.record.times.push(t);
        self.record.states.push(x);
        Ok(())
    }
}

/// Integrates from `x0` over `[0, t_final]`.
///
/// When `liapunov` is given, `W` and `dW/dt` are recorded at every sample;
/// its reference point must then be an equilibrium of `sys`.
pub fn integrate(
    sys: &QpSystem,
    x0: &StateVector,
    t_final: f64,
    config: &IntegratorConfig,
    liapunov: Option<&LiapunovFunction>,
) -> Result<TrajectoryRecord, DynamicsError> {
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(DynamicsError::InvalidHorizon(t_final));
    }
    if config.samples < 2 {
        return Err(DynamicsError::InvalidSampleCount(config.samples));
    }
    sys.check_dim(x0)?;
    if let Some(lf) = liapunov {
        sys.check_equilibrium(lf.xstar())?;
    }

    let rhs = |u: &DVector<f64>| sys.log_vector_field(u);
    let sample_time = |k: usize| {
        if k + 1 == config.samples {
            t_final
        } else {
            t_final * k as f64 / (config.samples - 1) as f64
        }
    };

    let mut recorder = Recorder {
        record: TrajectoryRecord::default(),
        liapunov,
    };
    let mut u = x0.ln();
    let mut t = 0.0;
    let mut f = rhs(&u);
    recorder
        .push(0.0, &u)
        .map_err(|_| DynamicsError::NonFiniteState {
            t: 0.0,
            partial: Box::default(),
        })?;
    let mut next_sample = 1;

    let mut h = initial_step(&rhs, &u, &f, t_final, config);
    let mut steps = 0;

    macro_rules! fail {
        ($variant:ident { $($field:ident : $value:expr),* }) => {
            return Err(DynamicsError::$variant {
                $($field: $value,)*
                partial: Box::new(recorder.record),
            })
        };
    }

    while t < t_final {
        if steps >= config.max_steps {
            fail!(MaxStepsExceeded {
                t: t,
                max_steps: config.max_steps
            });
        }
        steps += 1;

        let last = t + h >= t_final;
        if last {
            h = t_final - t;
        }
        let h_min = config.min_step_factor * t.abs().max(1.0);
        if h < h_min && !last {
            fail!(StepSizeUnderflow { t: t, h: h });
        }

        let k1 = &f;
        let k2 = rhs(&(&u + k1 * (h * A21)));
        let k3 = rhs(&(&u + (k1 * A31 + &k2 * A32) * h));
        let k4 = rhs(&(&u + (k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = rhs(&(&u + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
        let k6 = rhs(&(&u + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
        let u_new = &u + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = rhs(&u_new);

        let error_vec = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let err = scaled_rms(&error_vec, &u, &u_new, config);

        if !err.is_finite() || err > 1.0 {
            recorder.record.rejected_steps += 1;
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            h *= factor;
            if h < h_min {
                fail!(StepSizeUnderflow { t: t, h: h });
            }
            continue;
        }

        let t_new = if last { t_final } else { t + h };
        if u_new.iter().any(|v| !v.is_finite()) {
            fail!(NonFiniteState { t: t_new });
        }
        let mut dense = None;
        while next_sample < config.samples && sample_time(next_sample) <= t_new {
            let ts = sample_time(next_sample);
            let us = if ts == t_new {
                u_new.clone()
            } else {
                let correction = dense.get_or_insert_with(|| {
                    (k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h
                });
                interpolate(t, &u, &f, t_new, &u_new, &k7, correction, ts)
            };
            if recorder.push(ts, &us).is_err() {
                fail!(NonFiniteState { t: ts });
            }
            next_sample += 1;
        }

        recorder.record.accepted_steps += 1;
        t = t_new;
        u = u_new;
        f = k7;

        let factor = if err == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        h *= factor;
    }

    Ok(recorder.record)
}

fn scaled_rms(
    error: &DVector<f64>,
    u: &DVector<f64>,
    u_new: &DVector<f64>,
    config: &IntegratorConfig,
) -> f64 {
    let n = error.len() as f64;
    let sum: f64 = (0..error.len())
        .map(|i| {
            let scale = config.atol + config.rtol * u[i].abs().max(u_new[i].abs());
            (error[i] / scale).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(
    rhs: &F,
    u: &DVector<f64>,
    f0: &DVector<f64>,
    t_final: f64,
    config: &IntegratorConfig,
) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let norm = |v: &DVector<f64>| {
        let n = v.len() as f64;
        (v.iter()
            .zip(u.iter())
            .map(|(vi, ui)| (vi / (config.atol + config.rtol * ui.abs())).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = norm(u);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(t_final);
    let u1 = u + f0 * h0;
    let f1 = rhs(&u1);
    let d2 = norm(&(&f1 - f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1).min(t_final);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6_f64.min(t_final)
    }
}

/// Dense output on `[t0, t1]`: the cubic Hermite interpolant through
/// `(t0, u0, f0)` and `(t1, u1, f1)` plus the quartic correction term of
/// the Dormand-Prince continuous extension.
#[allow(clippy::too_many_arguments)]
fn interpolate(
    t0: f64,
    u0: &DVector<f64>,
    f0: &DVector<f64>,
    t1: f64,
    u1: &DVector<f64>,
    f1: &DVector<f64>,
    correction: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let r2 = u1 - u0;
    let r3 = f0 * h - &r2;
    let r4 = &r2 - f1 * h - &r3;
    u0 + (&r2 + (&r3 + (&r4 + correction * (1.0 - s)) * s) * (1.0 - s)) * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Required `|x(t_final) - x*|_inf` for definite certificates.
    pub terminal_threshold: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            terminal_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// Allowed increase between consecutive samples, `max(1e-10, 1e-9 W(0))`.
    pub slack: f64,
    pub violations: usize,
    pub first_violation: Option<usize>,
    /// Largest increase `W(t_{k+1}) - W(t_k)` seen (may be negative).
    pub max_increase: f64,
    /// `|x(t_final) - x*|_inf`, checked for definite certificates only.
    pub terminal_distance: Option<f64>,
    pub terminal_threshold: f64,
    pub passed: bool,
}

/// Checks that `W` never increases along the record beyond the slack and,
/// for definite certificates, that the final state is close to `x*`.
pub fn monitor_liapunov(
    cert: &StabilityCertificate,
    xstar: &StateVector,
    record: &TrajectoryRecord,
    config: &MonitorConfig,
) -> MonotonicityReport {
    let w = &record.w_samples;
    let slack = w.first().map_or(1e-10, |w0| (1e-9 * w0).max(1e-10));
    let mut violations = 0;
    let mut first_violation = None;
    let mut max_increase = f64::NEG_INFINITY;
    for (k, pair) in w.windows(2).enumerate() {
        let increase = pair[1] - pair[0];
        max_increase = max_increase.max(increase);
        if !(increase <= slack) {
            violations += 1;
            first_violation.get_or_insert(k + 1);
        }
    }

    let terminal_distance = (cert.classification == Classification::NegativeDefinite)
        .then(|| {
            record
                .final_state()
                .map(|x| (x.as_vector() - xstar.as_vector()).amax())
        })
        .flatten();
    let terminal_ok = terminal_distance.is_none_or(|d| d < config.terminal_threshold);

    MonotonicityReport {
        samples: w.len(),
        slack,
        violations,
        first_violation,
        max_increase: if w.len() < 2 { 0.0 } else { max_increase },
        terminal_distance,
        terminal_threshold: config.terminal_threshold,
        passed: violations == 0 && terminal_ok && !w.is_empty(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub w_initial: f64,
    /// `max_t |W(x(t)) - W(x0)| / max(1, W(x0))`.
    pub relative_drift: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Default pass threshold for [`conservation_check`].
pub const CONSERVATION_THRESHOLD: f64 = 1e-8;

/// Measures the drift of `W` along a record, for scalings with `M = 0`.
pub fn conservation_check(
    liapunov: &LiapunovFunction,
    record: &TrajectoryRecord,
    thresholds: &Thresholds,
    drift_threshold: f64,
) -> Result<ConservationReport, DynamicsError> {
    let form = liapunov.form();
    let norm = form.norm();
    let band = thresholds.semidefinite_band(form);
    if norm > band {
        return Err(DynamicsError::HypothesisNotMet { norm, band });
    }
    let w0 = record.w_samples.first().copied().unwrap_or(0.0);
    let relative_drift = record
        .w_samples
        .iter()
        .map(|w| (w - w0).abs())
        .fold(0.0, f64::max)
        / w0.max(1.0);
    Ok(ConservationReport {
        w_initial: w0,
        relative_drift,
        threshold: drift_threshold,
        passed: relative_drift < drift_threshold,
    })
}
