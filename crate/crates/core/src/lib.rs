//! Expensive multi-objective Bayesian optimization with a Pareto set model
//! trained by Stein variational gradients.
//!
//! The pieces, bottom up: [`problem`] benchmarks, [`gp`] surrogates,
//! [`scalarize`] Chebyshev scalarization, [`model`] the preference-to-decision
//! hypernetwork, [`svgd`] the particle update, [`hypervolume`] metrics and
//! batch selection, [`optimizer`] the outer loop and [`harness`] for logged
//! experiments.

// `!(x >= 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod gp;
pub mod harness;
pub mod hypervolume;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod problem;
pub mod rng;
pub mod runlog;
pub mod scalarize;
pub mod svgd;

pub use error::{Error, Result};
pub use optimizer::{Optimizer, RunConfig};
pub use par::Execution;
pub use problem::{builtin, load_problem, Problem};
pub use svgd::KernelKind;
