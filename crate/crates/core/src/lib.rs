//! Gaussian-process incremental capacity analysis.
//!
//! Models charge as a function of voltage during constant-current charging
//! with an exact GP, infers dQ/dV in closed form with credible bands, and
//! flags lithium plating from a resolved differential peak above 4.0 V.
//!
//! The crate is `no_std` and needs only `alloc`; file formats and the
//! command-line tool live in the `dqdv-gp` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod derivative;
pub mod detect;
pub mod gp;
pub mod ingest;
pub mod kernel;
pub mod math;
pub mod metrics;
pub mod optimize;
pub mod synth;

pub use derivative::{derivative_posterior, DerivativePosterior};
pub use gp::{fit, FittedGP, TrainingSet};
pub use kernel::Hyperparams;
