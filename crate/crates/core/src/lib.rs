//! Reflected Krylov ladders for stationary correlation sequences.
//!
//! Given the correlations `r(i) = ⟨U^i ξ, ξ⟩` of a unit vector under an
//! orthogonal operator, the crate selects a ladder of orbit windows, reflects
//! every other block, and evaluates the double averages
//! `A(n) = (1/n) Σ_{i<n} ⟨U^i ξ, V^i ξ⟩` for the conjugated operator
//! `V = WUW` without ever forming a vector. The Gaussian lift turns the same
//! inner products into covariances that can be sampled.

pub mod cli;
pub mod config;
pub mod construction;
pub mod error;
pub mod factor;
pub mod gaussian;
pub mod krylov;
pub mod oracle;
pub mod spectral;

pub use config::RunConfig;
pub use construction::{construct, select_cutoffs, ConstructOptions, CounterexampleReport};
pub use error::{Error, Result};
pub use gaussian::{build_joint_covariance, sample_and_estimate, SimulationConfig};
pub use krylov::{GramLadder, TimeSequence};
pub use spectral::{CorrelationSequence, SpectrumFamily};
