//! Bayesian semiparametric gating-network mixtures of experts for
//! multivariate categorical data.
//!
//! Component weights follow a multinomial logit whose predictors combine
//! linear fixed effects with penalized cubic splines of metrical covariates.
//! Fitting uses a Gibbs sampler built on a latent-utility representation of
//! the logit with a normal scale-mixture approximation of the logistic
//! errors, so every conditional is available in closed form.
//!
//! Modules:
//! - [`basis`]: B-spline designs, random-walk penalties, constraint centering
//! - [`model`]: data, parameters, component likelihood and gating network
//! - [`augment`]: logistic scale mixtures and latent-utility sampling
//! - [`sampler`]: Gibbs sweep, chain driver and draw storage
//! - [`postproc`]: label-switching resolution and posterior summaries
//! - [`metrics`]: AICM, ARI, soft ARI, RASE
//! - [`simgen`]: simulation scenarios and synthetic data
//! - [`io`]: CSV ingestion, manifests and derived covariates
//! - [`pipeline`]: fit/sweep orchestration and result export

pub mod augment;
pub mod basis;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod postproc;
pub mod sampler;
pub mod simgen;

pub use error::{Error, ErrorKind, Result};
pub use model::{Dataset, PriorConfig, Variant};
pub use sampler::{run_chain, ChainConfig, DrawStore};
