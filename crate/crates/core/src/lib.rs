//! Stability analysis for quasipolynomial (QP) systems of ODEs.
//!
//! The pipeline is: validate a [`QpSystem`], locate an interior
//! [`Equilibrium`], search for a diagonal scaling that makes
//! `C Q + Q^T C` negative (semi)definite, build the Liapunov function `W`
//! from it, and check `W` against integrated trajectories.

pub mod certificate;
pub mod dynamics;
pub mod equilibrium;
pub mod liapunov;
pub mod model;
mod nelder_mead;

pub use certificate::{
    classify, search_certificate, symmetrized_form, verify_certificate, CertificateConfig,
    CertificateError, Classification, DiagonalScaling, StabilityCertificate, Thresholds,
};
pub use dynamics::{
    conservation_check, integrate, monitor_liapunov, DynamicsError, IntegratorConfig,
    MonitorConfig, TrajectoryRecord, CONSERVATION_THRESHOLD,
};
pub use equilibrium::{
    find_equilibrium, residual, Equilibrium, EquilibriumConfig, EquilibriumError,
};
pub use liapunov::{LiapunovEvaluation, LiapunovFunction};
pub use model::{ExtendedExponentMatrix, ModelError, QpSystem, StateVector};
