//! Equilibrium, certificate, Liapunov function and trajectory validation.

use nalgebra::DVector;
use qpstab::certificate::VerificationReport;
use qpstab::dynamics::{ConservationReport, MonotonicityReport};
use qpstab::{
    conservation_check, find_equilibrium, integrate, monitor_liapunov, search_certificate,
    symmetrized_form, verify_certificate, CertificateConfig, CertificateError, DynamicsError,
    Equilibrium, EquilibriumConfig, EquilibriumError, IntegratorConfig, LiapunovFunction,
    ModelError, MonitorConfig, QpSystem, StabilityCertificate, StateVector, Thresholds,
    TrajectoryRecord, CONSERVATION_THRESHOLD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::input::ParsedInput;
use crate::report::{
    analysis_explanation, certificate_explanation, verdict, AnalysisReport, CertificateReport,
    CertificateSection, EquilibriumSection, SystemEcho, TrajectorySection, TOOL_NAME, TOOL_VERSION,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("equilibrium: {0}")]
    Equilibrium(#[from] EquilibriumError),
    #[error("certificate: {0}")]
    Certificate(#[from] CertificateError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("integration: {0}")]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub seed: u64,
    pub thresholds: Thresholds,
    /// Certificate starts and random equilibrium starts.
    pub max_starts: usize,
    pub integrator: IntegratorConfig,
    pub t_final: f64,
    /// Initial conditions for trajectory validation; seeded draws around
    /// `x*` are used when empty.
    pub x0_list: Vec<StateVector>,
    pub default_trajectories: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            thresholds: Thresholds::default(),
            max_starts: 20,
            integrator: IntegratorConfig::default(),
            t_final: 200.0,
            x0_list: Vec::new(),
            default_trajectories: 4,
        }
    }
}

impl AnalysisOptions {
    /// File settings, without command-line overrides.
    pub fn from_input(input: &ParsedInput) -> Self {
        let mut options = Self::default();
        if let Some(seed) = input.seed {
            options.seed = seed;
        }
        let t = &input.tolerances;
        if let Some(v) = t.semidefinite {
            options.thresholds.semidefinite = v;
        }
        if let Some(v) = t.definite {
            options.thresholds.definite = v;
        }
        if let Some(v) = t.rtol {
            options.integrator.rtol = v;
        }
        if let Some(v) = t.atol {
            options.integrator.atol = v;
        }
        options.x0_list = input.x0_list.clone();
        options
    }

    pub fn equilibrium_config(&self) -> EquilibriumConfig {
        EquilibriumConfig {
            seed: self.seed,
            random_starts: self.max_starts,
            ..EquilibriumConfig::default()
        }
    }

    pub fn certificate_config(&self) -> CertificateConfig {
        CertificateConfig {
            seed: self.seed,
            starts: self.max_starts,
            thresholds: self.thresholds,
            ..CertificateConfig::default()
        }
    }
}

/// Outcome of one validation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub x0: StateVector,
    pub t_final: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub monotonicity: Option<MonotonicityReport>,
    pub conservation: Option<ConservationReport>,
    pub error: Option<String>,
}

impl TrajectorySummary {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.monotonicity.as_ref().is_some_and(|m| m.passed)
    }
}

/// Certificate search followed by independent verification.
pub fn certify(
    sys: &QpSystem,
    options: &AnalysisOptions,
) -> Result<(StabilityCertificate, VerificationReport), PipelineError> {
    let q = sys.interaction_matrix();
    let cert = search_certificate(&q, &options.certificate_config())?;
    let verification = verify_certificate(&q, &cert, &options.thresholds)?;
    Ok((cert, verification))
}

/// Seeded initial conditions `x*_i exp(s_i)` with `s_i` uniform in `[-1, 1]`.
pub fn default_initial_conditions(
    xstar: &StateVector,
    count: usize,
    seed: u64,
) -> Vec<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = DVector::from_fn(xstar.dim(), |i, _| {
                xstar.as_slice()[i] * rng.random_range(-1.0f64..=1.0).exp()
            });
            StateVector::from_vector(x).expect("positive by construction")
        })
        .collect()
}

pub fn validate_trajectory(
    lf: &LiapunovFunction,
    cert: &StabilityCertificate,
    x0: &StateVector,
    options: &AnalysisOptions,
    conservative: bool,
) -> TrajectorySummary {
    let mut summary = TrajectorySummary {
        x0: x0.clone(),
        t_final: options.t_final,
        accepted_steps: 0,
        rejected_steps: 0,
        monotonicity: None,
        conservation: None,
        error: None,
    };
    let record: TrajectoryRecord = match integrate(
        lf.system(),
        x0,
        options.t_final,
        &options.integrator,
        Some(lf),
    ) {
        Ok(record) => record,
        Err(e) => {
            summary.error = Some(e.to_string());
            if let Some(partial) = e.partial_record() {
                summary.accepted_steps = partial.accepted_steps;
                summary.rejected_steps = partial.rejected_steps;
            }
            return summary;
        }
    };
    summary.accepted_steps = record.accepted_steps;
    summary.rejected_steps = record.rejected_steps;
    summary.monotonicity = Some(monitor_liapunov(
        cert,
        lf.xstar(),
        &record,
        &MonitorConfig::default(),
    ));
    if conservative {
        summary.conservation =
            conservation_check(lf, &record, &options.thresholds, CONSERVATION_THRESHOLD).ok();
    }
    summary
}

/// The full analysis of one system.
pub fn run_analysis(
    sys: &QpSystem,
    options: &AnalysisOptions,
) -> Result<AnalysisReport, PipelineError> {
    let equilibrium: Equilibrium = find_equilibrium(sys, None, &options.equilibrium_config())?;
    let (cert, verification) = certify(sys, options)?;
    let lf = LiapunovFunction::new(sys, &cert.scaling, &equilibrium.xstar)?;

    let form = lf.form();
    let conservative = form.norm() <= options.thresholds.semidefinite_band(form);
    let initial = if options.x0_list.is_empty() {
        default_initial_conditions(
            &equilibrium.xstar,
            options.default_trajectories,
            options.seed,
        )
    } else {
        options.x0_list.clone()
    };
    let trajectories: Vec<TrajectorySummary> = initial
        .iter()
        .map(|x0| validate_trajectory(&lf, &cert, x0, options, conservative))
        .collect();
    let validated = trajectories.iter().all(TrajectorySummary::passed);
    let outcome = verdict(verification.classification, validated);

    let certificate = CertificateSection::new(&cert, &verification, conservative);
    let trajectories: Vec<TrajectorySection> =
        trajectories.iter().map(TrajectorySection::new).collect();
    Ok(AnalysisReport {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        seed: options.seed,
        system: SystemEcho::new(sys),
        equilibrium: EquilibriumSection::new(&equilibrium),
        explanation: analysis_explanation(&certificate, &trajectories),
        certificate,
        trajectories,
        verdict: outcome,
    })
}

/// Certificate search and verification only.
pub fn run_certificate(
    sys: &QpSystem,
    options: &AnalysisOptions,
) -> Result<CertificateReport, PipelineError> {
    let (cert, verification) = certify(sys, options)?;
    let form = symmetrized_form(&sys.interaction_matrix(), &cert.scaling);
    let conservative = form.norm() <= options.thresholds.semidefinite_band(&form);
    let certificate = CertificateSection::new(&cert, &verification, conservative);
    Ok(CertificateReport {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        seed: options.seed,
        system: SystemEcho::new(sys),
        explanation: certificate_explanation(&certificate),
        certificate,
    })
}
