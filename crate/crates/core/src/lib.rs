//! Simulation and certification for passivity-based integral control (PBIC)
//! of fully actuated mechanical systems in port-Hamiltonian form.
//!
//! The crate is organized around five subsystems:
//!
//! - [`plant`] — the mechanical-system abstraction: mass matrix `M(q)` and its
//!   partials, potential `V(q)`, damping `D(x)`, input matrix `G(q)`, and the
//!   derived gyroscopic quantities `S_H`, `Ṁ`, `E`, `Γ`.
//! - [`models`] — concrete plants: an n-dimensional point mass, a planar
//!   two-link arm, and a three-joint roll–pitch–roll arm used by the
//!   regression scenarios.
//! - [`control`] — the PBIC law with its integrator extension and the
//!   energy-shaping/damping-injection (ES-DI) baseline, plus the change of
//!   coordinates into augmented `(q̄, p̄, z̄)` form.
//! - [`sim`] — deterministic fixed-step RK4 integration of the physical plant
//!   in closed loop and of the augmented closed-loop form directly, with CSV
//!   trajectory output.
//! - [`cert`] — numerical stability certificates: the damping condition, the
//!   ε-scaled Lyapunov function and its κ sandwich, the Υ dissipation matrix,
//!   decay-rate and overshoot bounds, and the ISS gain margin.

pub mod cert;
pub mod control;
pub mod error;
pub mod linalg;
pub mod models;
pub mod plant;
pub mod sim;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
