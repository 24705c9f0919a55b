//! Hierarchical Bayesian source localization for EEG/MEG.
//!
//! The library models distributed neural currents with a conditionally
//! Gaussian prior whose per-source variances carry a generalized gamma
//! hyperprior. On top of that model it provides:
//!
//! * [`hypermodel`] — the probabilistic model: likelihood, prior,
//!   hyperprior, and the closed-form or numeric variance updates for every
//!   hyperprior sub-family,
//! * [`solver`] — matrix-free CGLS, priorconditioned least squares and a
//!   dense direct solver used as a test oracle,
//! * [`ias`] — the Iterative Alternating Sequential MAP driver,
//! * [`mcmc`] — ROI-restricted Gibbs sampling of the posterior with chain
//!   summaries and exports,
//! * [`planar`] — the analytic half-space magnetic forward model on a
//!   layered dipole grid,
//! * [`fem`] — a complete-electrode-model FEM forward solver on tetrahedral
//!   meshes with Raviart-Thomas source elements.

pub mod fem;
pub mod hypermodel;
pub mod ias;
pub mod leadfield;
pub mod mcmc;
pub mod planar;
pub mod solver;

pub use hypermodel::{HyperModel, NoiseModel, PosteriorState, VarianceGrouping};
pub use leadfield::LeadField;
