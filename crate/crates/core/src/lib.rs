//! Bayesian mixed-effects hidden Markov models and first-order Markov models
//! for ordinal longitudinal panel data.
//!
//! Each row of a transition matrix is a multinomial logit with per-subject
//! random intercepts and fixed covariate effects. Fitting is by
//! Metropolis-within-Gibbs with forward-filtering backward-sampling of the
//! hidden states (HMM) or data augmentation of missing observations (Markov
//! model). Around the samplers sit exact likelihoods, Viterbi decoding,
//! convergence diagnostics, DIC, average predictive comparisons and
//! posterior predictive checks.
//!
//! Ordinal levels and hidden states are 0-based everywhere inside the crate.
//! Files use 1-based codes, converted on read and write.

pub mod analytics;
pub mod dataset;
pub mod diagnostics;
mod error;
pub mod inference;
pub mod mcmc;
pub mod model;
pub mod params_io;
pub mod rng;

pub use error::{Error, Result};
