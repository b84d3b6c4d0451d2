//! Generalized additive index models fitted by basis expansion.
//!
//! A model `f(x) = sum_j sum_k beta_jk phi_k(alpha_j' x)` is estimated jointly
//! in the unit-norm indices `alpha` and the coefficients `beta`, either by
//! projected gradient descent on the empirical risk or by the
//! variational-inequality scheme driven by raw residuals. A stage-wise
//! projection pursuit baseline, a synthetic data generator, evaluation
//! metrics and an experiment harness are included.

pub mod basis;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod links;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod ppr;
pub mod synth;

pub use basis::BasisSet;
pub use data::{Covariates, Dataset};
pub use error::{GaimError, Result};
pub use exec::Execution;
pub use links::{Family, LinkKind, LinkSpec, LossSpec};
pub use model::ModelParams;
pub use optim::{fit, Algorithm, FitConfig, FitOutput, FitTrace};
pub use ppr::{ppr_fit, PprConfig, PprModel};
pub use synth::Truth;
