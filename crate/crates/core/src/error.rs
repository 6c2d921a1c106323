//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("nonpositive parameter {name} = {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },

    #[error("invalid mass matrix at q = {q:?}: {reason}")]
    InvalidMass { q: Vec<f64>, reason: String },

    #[error(
        "input matrix ill-conditioned at q = {q:?}: cond = {cond:.3e} exceeds cap {cap:.3e}"
    )]
    IllConditionedInput { q: Vec<f64>, cond: f64, cap: f64 },

    #[error("mass partials disagree with finite differences: relative error {rel_err:.3e} in ∂M/∂q_{coord} at q = {q:?}")]
    BadMassPartials {
        q: Vec<f64>,
        coord: usize,
        rel_err: f64,
    },

    #[error("gain matrix {name} is not symmetric positive definite (min eigenvalue {min_eig:.3e})")]
    InvalidGains { name: &'static str, min_eig: f64 },

    #[error("non-finite state component")]
    NonFiniteState,

    #[error("simulation diverged at t = {t:.6} s: {reason}")]
    Divergence { t: f64, reason: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("no feasible epsilon over the sampled region: {witness}")]
    EpsilonInfeasible { witness: String },

    #[error("certificate invalid: {0}")]
    CertificateInvalid(String),
}
