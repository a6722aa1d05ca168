//! Sufficient dimensionality reduction with irrelevance statistics.
//!
//! Extracts continuous features φ(x) of a discrete variable X that are
//! maximally informative about a relevance variable Y⁺ while minimally
//! informative about an irrelevance variable Y⁻, by gradient ascent on
//! the tradeoff functional L[φ] = I_M[φ, p⁺] − λ I_M[φ, p⁻], where I_M
//! is the measurement information obtained from a maximum-entropy
//! I-projection.
//!
//! Modules:
//! - [`dist`]: validated discrete joint tables and information quantities.
//! - [`maxent`]: the I-projection solver (exponential-form potentials).
//! - [`optimizer`]: tradeoff optimization, λ sweeps, diagnostics.
//! - [`baselines`]: PCA / Oriented PCA / Constrained PCA.
//! - [`eval`]: reduced representations, precision index, model selection.
//! - [`datasets`]: synthetic generators, image ingestion, CSV I/O.

pub mod baselines;
pub mod datasets;
pub mod dist;
pub mod eval;
pub mod maxent;
pub mod optimizer;

pub use dist::{JointTable, kl_divergence};
pub use maxent::{FeatureMap, MaxEntSolution, SolverOptions, solve_maxent};
pub use optimizer::{FitOptions, FitResult, Objective, SweepOptions, SweepResult, fit, sweep_lambda};
