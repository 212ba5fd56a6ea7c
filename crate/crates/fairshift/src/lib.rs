//! Fair comparison of many treatment arms under positivity violations.
//!
//! This crate estimates treatment-specific means under *smoothly trimmed
//! stochastic interventions*: instead of asking "what if everyone received
//! arm `a`?" — unanswerable when some subjects can never receive `a` — it
//! asks what happens when each subject's propensities are shifted toward `a`
//! by an admissible shift family, with the shift smoothly switched off where
//! any arm's propensity approaches zero. The resulting estimands are defined
//! without positivity assumptions, order arms consistently with their
//! conditional outcomes, and admit efficient one-step estimators with
//! second-order bias.
//!
//! Module map:
//!
//! * [`model`] — validated datasets, configuration, fold splitting
//! * [`shift`] — shift families `f` and the trimming kernel `s`
//! * [`intervention`] — interventional propensities `q` and their checks
//! * [`nuisance`] — cross-fit propensity and outcome-mean estimation
//! * [`estimator`] — influence-function machinery, one-step estimates,
//!   covariances, contrasts
//! * [`sim`] — simulation lab: exact discrete-law oracles and the
//!   rate/coverage/fairness experiments
//! * [`num`], [`rng`] — deterministic numerics and seeding discipline

pub mod estimator;
pub mod intervention;
pub mod model;
pub mod nuisance;
pub mod num;
pub mod rng;
pub mod shift;
pub mod sim;
