//! A laboratory for generalized Ito stochastic differential equations with
//! Wiener and Poisson-jump driving noise.
//!
//! The crate simulates jump-diffusion paths, builds and verifies stochastic
//! first integrals, solves the stochastic PDE for integral-invariant kernel
//! densities under a fixed noise realization, and solves the deterministic
//! forward/backward Kolmogorov integro-PDEs, cross-validating every layer
//! numerically (common-noise pathwise identities, Monte Carlo, closed forms,
//! and convergence-order fits).

pub mod calculus;
pub mod error;
pub mod jacobian;
pub mod jump;
pub mod kernel;
pub mod kolmogorov;
pub mod model;
pub mod noise;
pub mod path;
pub mod registry;
pub mod report;
pub mod space;
pub mod timegrid;

pub use error::{Error, Result};
pub use jacobian::{evolve_jacobian, k_coefficient, JacobianMethod, JacobianSeries};
pub use jump::{inverse_jump_map, jump_jacobian_det, pull_back, PullBack};
pub use model::{JumpDiffusionModel, JumpShape, MarkAtom, MarkMeasure, Provenance};
pub use noise::{sample_noise, JumpEvent, NoiseRealization};
pub use path::{simulate_path, Trajectory};
pub use report::{fit_order, residual_stats, VerificationReport};
pub use space::{GridField, OutOfDomain, SpaceGrid};
pub use timegrid::TimeGrid;
