//! Gaussian-process counterfactual estimation for spatio-temporal panels.
//!
//! A panel of units observed over time has some units treated from a common
//! period onward. The untreated outcomes of treated cells are missing; this
//! crate models the full outcome surface with a space-time Gaussian process,
//! predicts the missing cells, and summarizes the average treatment effect on
//! the treated (ATT).

pub mod causal;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod mcmc;
pub mod panel;
pub mod simlab;
pub mod weights;

pub use error::{Error, Result};
