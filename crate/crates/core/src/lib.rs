//! Causal structure learning for linear structural equation models with
//! latent confounding, from data collected across perturbed environments.
//!
//! Candidate DAGs are scored by a penalized Gaussian likelihood in which each
//! environment shares the connectivity matrix `B` and latent effects `Gamma`
//! but has its own noise variances and latent perturbation strength.

pub mod bench;
pub mod error;
pub mod fit;
pub mod graph;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod search;
pub mod theory;
pub mod validate;

pub use error::{Error, Result};
pub use fit::{score_dag, FitResult};
pub use graph::Dag;
pub use likelihood::ScoreConfig;
pub use model::{EnvData, EnvSpec, PerturbationMode, ScmParams};
