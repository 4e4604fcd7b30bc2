//! Stochastic calculus layer: generalized field differentials, first-integral
//! coefficient systems, common-noise field evolution, and the Ito-Wentzell
//! and conservation verifiers.

pub mod builders;
pub mod candidate;
pub mod conserve;
pub mod differential;
pub mod evolve;
pub mod ito_wentzell;

pub use builders::{first_integral_coeffs_xdep, first_integral_coeffs_xindep};
pub use candidate::CandidateIntegral;
pub use conserve::{verify_first_integral, CandidateFactory, FirstIntegralStudy};
pub use differential::FieldDifferential;
pub use evolve::evolve_field;
pub use ito_wentzell::{ito_wentzell_convergence, ito_wentzell_residual};
