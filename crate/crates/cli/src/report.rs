//! Analysis reports and the stability verdict.

use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use qpstab::certificate::VerificationReport;
use qpstab::dynamics::{ConservationReport, MonotonicityReport};
use qpstab::{Classification, Equilibrium, QpSystem, StabilityCertificate};
use serde::Serialize;

use crate::pipeline::TrajectorySummary;

pub const TOOL_NAME: &str = "qpstab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GloballyAsymptoticallyStable,
    Stable,
    Inconclusive,
}

impl Verdict {
    pub fn is_certified(self) -> bool {
        self != Verdict::Inconclusive
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GloballyAsymptoticallyStable => "globally asymptotically stable",
            Self::Stable => "stable",
            Self::Inconclusive => "inconclusive",
        })
    }
}

/// Verdict from the verified classification and the trajectory checks.
pub fn verdict(classification: Classification, trajectories_passed: bool) -> Verdict {
    match (classification, trajectories_passed) {
        (Classification::NegativeDefinite, true) => Verdict::GloballyAsymptoticallyStable,
        (Classification::NegativeSemiDefinite, true) => Verdict::Stable,
        _ => Verdict::Inconclusive,
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemEcho {
    pub n: usize,
    pub m: usize,
    pub lambda: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

impl SystemEcho {
    pub fn new(sys: &QpSystem) -> Self {
        Self {
            n: sys.n(),
            m: sys.m(),
            lambda: sys.lambda().iter().copied().collect(),
            a: rows(sys.a()),
            b: rows(sys.b()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSection {
    pub xstar: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub start_index: usize,
}

impl EquilibriumSection {
    pub fn new(eq: &Equilibrium) -> Self {
        Self {
            xstar: eq.xstar.as_slice().to_vec(),
            residual: eq.residual_norm,
            iterations: eq.iterations,
            start_index: eq.start_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSection {
    pub c: Vec<f64>,
    pub classification: Classification,
    pub lambda_max: f64,
    pub margin: f64,
    /// Index of a positive diagonal entry of `Q`, which rules out any certificate.
    pub positive_diagonal: Option<usize>,
    pub verified_eigenvalues: Vec<f64>,
    pub definite_band: f64,
    pub semidefinite_band: f64,
    /// `C Q + Q^T C` vanishes within the semidefinite band.
    pub conservative: bool,
}

impl CertificateSection {
    pub fn new(
        cert: &StabilityCertificate,
        verification: &VerificationReport,
        conservative: bool,
    ) -> Self {
        Self {
            c: cert.scaling.as_slice().to_vec(),
            classification: verification.classification,
            lambda_max: verification.lambda_max,
            margin: cert.margin,
            positive_diagonal: cert.positive_diagonal,
            verified_eigenvalues: verification.eigenvalues.clone(),
            definite_band: verification.definite_band,
            semidefinite_band: verification.semidefinite_band,
            conservative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySection {
    pub x0: Vec<f64>,
    pub t_final: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub passed: bool,
    pub monotonicity: Option<MonotonicityReport>,
    pub conservation: Option<ConservationReport>,
    pub error: Option<String>,
}

impl TrajectorySection {
    pub fn new(summary: &TrajectorySummary) -> Self {
        Self {
            x0: summary.x0.as_slice().to_vec(),
            t_final: summary.t_final,
            accepted_steps: summary.accepted_steps,
            rejected_steps: summary.rejected_steps,
            passed: summary.passed(),
            monotonicity: summary.monotonicity.clone(),
            conservation: summary.conservation.clone(),
            error: summary.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub system: SystemEcho,
    pub equilibrium: EquilibriumSection,
    pub certificate: CertificateSection,
    pub trajectories: Vec<TrajectorySection>,
    pub verdict: Verdict,
    pub explanation: String,
}

/// Report of the `certificate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub system: SystemEcho,
    pub certificate: CertificateSection,
    pub explanation: String,
}

pub fn certificate_explanation(section: &CertificateSection) -> String {
    if let Some(i) = section.positive_diagonal {
        return format!(
            "Q has a positive diagonal entry at index {i}; C Q + Q^T C then has a positive diagonal \
             entry for every positive diagonal C, so no certificate exists"
        );
    }
    match section.classification {
        Classification::NegativeDefinite => "C Q + Q^T C is negative definite".into(),
        Classification::NegativeSemiDefinite if section.conservative => {
            "C Q + Q^T C vanishes; W is a first integral".into()
        }
        Classification::NegativeSemiDefinite => "C Q + Q^T C is negative semidefinite".into(),
        Classification::Inconclusive => format!(
            "no positive diagonal C found with C Q + Q^T C negative semidefinite (best lambda_max {:e})",
            section.lambda_max
        ),
    }
}

pub fn analysis_explanation(
    certificate: &CertificateSection,
    trajectories: &[TrajectorySection],
) -> String {
    let mut text = certificate_explanation(certificate);
    let failed = trajectories.iter().filter(|t| !t.passed).count();
    if certificate.classification != Classification::Inconclusive {
        if failed == 0 {
            let _ = write!(
                text,
                "; W is non-increasing along all {} validation trajectories",
                trajectories.len()
            );
        } else {
            let _ = write!(
                text,
                "; {failed} of {} validation trajectories failed",
                trajectories.len()
            );
        }
    }
    text
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

fn vector(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", items.join(", "))
}

fn table(lines: &[(String, String)]) -> String {
    let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in lines {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

fn certificate_lines(c: &CertificateSection) -> Vec<(String, String)> {
    vec![
        ("scaling c".into(), vector(&c.c)),
        ("classification".into(), c.classification.to_string()),
        ("lambda_max".into(), format!("{:.6e}", c.lambda_max)),
        ("margin".into(), format!("{:.6e}", c.margin)),
        ("eigenvalues".into(), vector(&c.verified_eigenvalues)),
    ]
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![
            ("tool".into(), format!("{} {}", self.tool, self.version)),
            ("seed".into(), self.seed.to_string()),
            (
                "n, m".into(),
                format!("{}, {}", self.system.n, self.system.m),
            ),
            ("equilibrium x*".into(), vector(&self.equilibrium.xstar)),
            (
                "residual".into(),
                format!("{:.3e}", self.equilibrium.residual),
            ),
        ];
        lines.extend(certificate_lines(&self.certificate));
        for (k, t) in self.trajectories.iter().enumerate() {
            let status = match (&t.error, &t.monotonicity) {
                (Some(e), _) => format!("failed: {e}"),
                (None, Some(m)) => {
                    let mut s = format!(
                        "{} ({} violations",
                        if t.passed { "pass" } else { "fail" },
                        m.violations
                    );
                    if let Some(d) = m.terminal_distance {
                        let _ = write!(s, ", |x(T) - x*| = {d:.3e}");
                    }
                    if let Some(c) = &t.conservation {
                        let _ = write!(s, ", drift {:.3e}", c.relative_drift);
                    }
                    s.push(')');
                    s
                }
                (None, None) => "not run".into(),
            };
            lines.push((format!("trajectory {k} from"), vector(&t.x0)));
            lines.push((format!("trajectory {k}"), status));
        }
        lines.push(("verdict".into(), self.verdict.to_string()));
        lines.push(("explanation".into(), self.explanation.clone()));
        table(&lines)
    }
}

impl CertificateReport {
    pub fn to_text(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![
            ("tool".into(), format!("{} {}", self.tool, self.version)),
            ("seed".into(), self.seed.to_string()),
            (
                "n, m".into(),
                format!("{}, {}", self.system.n, self.system.m),
            ),
        ];
        lines.extend(certificate_lines(&self.certificate));
        lines.push(("explanation".into(), self.explanation.clone()));
        table(&lines)
    }
}
