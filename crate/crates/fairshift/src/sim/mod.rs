//! Ground-truth simulation machinery: discrete worlds with exact
//! functionals, plus the experiment suite (fairness orderings, pathwise
//! derivative checks, nuisance-error rate sweeps, interval coverage, and
//! the product-difference algebra identity).

pub mod dgp;
pub mod experiments;

pub use dgp::{DiscreteDgp, SampleDraw, SimError};
