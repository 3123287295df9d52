use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

fn csv_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let err = CliError::write(path);
    let file = File::create(path).map_err(CliError::write(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(err)
}

/// A CSV file written row by row with a fixed header.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| CliError::write(path)(csv_io(e)))?;
        writer
            .write_record(header)
            .map_err(|e| CliError::write(path)(csv_io(e)))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn row(&mut self, fields: &[&str]) -> Result<(), CliError> {
        self.writer
            .write_record(fields)
            .map_err(|e| CliError::write(self.path.clone())(csv_io(e)))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(CliError::write(self.path))
    }
}
