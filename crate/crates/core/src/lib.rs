//! Simulation of SDEs time-changed by inverse stable subordinators,
//!
//! ```text
//! dX(t) = f(X(t)) dE(t) + g(X(t)) dB(E(t)),
//! ```
//!
//! with an Euler-Maruyama scheme on an equidistant grid in physical time, and
//! the Monte Carlo machinery to measure its strong convergence rate.
//!
//! The pieces, bottom up:
//!
//! * [`rng`]: keyed, counter-based random streams, one per realization and role.
//! * [`subordinator`]: stable subordinator paths and the step approximation of
//!   their inverse.
//! * [`timechange`]: coupled `(dE, dB)` drivers at nested resolutions.
//! * [`sde`]: coefficient functions and built-in systems.
//! * [`solver`]: the scheme itself and a duality-based cross-check.
//! * [`analysis`]: convergence studies, rate fitting and statistical checks.

pub mod analysis;
pub mod error;
pub mod rng;
pub mod sde;
pub mod solver;
pub mod stats;
pub mod subordinator;
pub mod timechange;

pub use analysis::{
    fit_loglog, run_convergence_study, theoretical_rate, verify_moment_bounds, ConvergenceConfig,
    ConvergenceReport, Profile,
};
pub use error::{Error, Result};
pub use rng::{derive_stream, RandomStream, StreamKey, Substream};
pub use sde::SdeSystem;
pub use solver::{duality_solve, em_solve, em_terminal, EmTrajectory};
pub use subordinator::{SubordinatorPathGrid, SubordinatorSpec};
pub use timechange::{build_fine_drivers, RealizationId, TimeChangeDrivers};
