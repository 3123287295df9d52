//! The `synth` subcommand.

use std::fs;
use std::path::PathBuf;

use dqdv_core::synth::{generate_log, SynthSpec};
use serde::Serialize;

use crate::analyze::ToolInfo;
use crate::config::{RunConfig, SynthArgs};
use crate::csvlog::{log_stem, write_log_file, CsvSpec};
use crate::error::CliError;
use crate::output::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct SynthSidecar {
    pub tool: ToolInfo,
    pub config: RunConfig,
    pub spec: SynthSpec,
}

/// Paths of the log and the spec sidecar.
pub fn run(args: &SynthArgs) -> Result<(PathBuf, PathBuf), CliError> {
    let spec = args.scenario.spec(args.seed);
    let log = generate_log(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let delimiter = u8::try_from(args.delimiter)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| CliError::Config(format!("delimiter {:?} is not ASCII", args.delimiter)))?;

    fs::create_dir_all(&args.out).map_err(CliError::write(&args.out))?;
    let log_path = args.out.join(&args.name);
    write_log_file(&log_path, &log, &CsvSpec { delimiter }).map_err(|source| CliError::Log {
        path: log_path.clone(),
        source,
    })?;
    let spec_path = args.out.join(format!("{}.spec.json", log_stem(&log_path)));
    write_json(
        &spec_path,
        &SynthSidecar {
            tool: ToolInfo::current(),
            config: RunConfig::Synth(args.clone()),
            spec,
        },
    )?;
    Ok((log_path, spec_path))
}
