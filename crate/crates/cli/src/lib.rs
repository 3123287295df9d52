//! File formats, reports and the `dqdv-gp` command-line tool built on
//! [`dqdv_core`].

pub mod analyze;
pub mod bench;
pub mod config;
pub mod csvlog;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod synth_cmd;

pub use error::{CliError, Outcome};
