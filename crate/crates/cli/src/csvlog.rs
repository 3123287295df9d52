//! Charging-log CSV files.
//!
//! Layout: optional `# key: value` metadata lines, a header naming
//! `time_s`, `current_a`, `voltage_v` and optionally `cycle` (any order,
//! extra columns ignored), then one sample per row. Paths ending in `.gz`
//! are gzip-compressed.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use dqdv_core::ingest::{ChargeLog, IngestError, LogMetadata, Sample};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSpec {
    pub delimiter: u8,
}

impl Default for CsvSpec {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("input is not valid UTF-8")]
    Encoding,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: cannot parse {column} value {value:?}")]
    Parse {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {0}: non-finite value")]
    NonFinite(usize),
    #[error("row {0}: time does not increase")]
    NonMonotonicTime(usize),
    #[error("log contains no samples")]
    EmptyLog,
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("metadata line {line}: {message}")]
    Metadata { line: usize, message: String },
}

impl From<IngestError> for LogError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::EmptyLog => Self::EmptyLog,
            IngestError::NonMonotonicTime(r) => Self::NonMonotonicTime(r),
            IngestError::NonFiniteSample(r) => Self::NonFinite(r),
            other => Self::Csv {
                row: 0,
                message: other.to_string(),
            },
        }
    }
}

const TIME: &str = "time_s";
const CURRENT: &str = "current_a";
const VOLTAGE: &str = "voltage_v";
const CYCLE: &str = "cycle";

fn parse_metadata(lines: &[(usize, &str)]) -> Result<LogMetadata, LogError> {
    let mut meta = LogMetadata::default();
    for &(line, text) in lines {
        let body = text.trim_start_matches('#').trim();
        let Some((key, value)) = body.split_once(':') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "capacity_ah" => {
                let c = value.parse::<f64>().map_err(|_| LogError::Metadata {
                    line,
                    message: format!("capacity_ah {value:?} is not a number"),
                })?;
                meta.capacity_ah = Some(c);
            }
            "temperature" => meta.temperature = Some(value.to_string()),
            "c_rate" => meta.c_rate = Some(value.to_string()),
            "label" => meta.label = Some(value.to_string()),
            _ => {}
        }
    }
    Ok(meta)
}

/// Parse a charging log. Row numbers in errors count data rows from 1.
pub fn parse_log<R: Read>(mut source: R, spec: &CsvSpec) -> Result<ChargeLog, LogError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|_| LogError::Encoding)?;

    let mut meta_lines = Vec::new();
    let mut body_start = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            meta_lines.push((i + 1, trimmed));
        } else if !trimmed.is_empty() {
            break;
        }
        body_start += line.len();
    }
    let metadata = parse_metadata(&meta_lines)?;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(&text.as_bytes()[body_start..]);
    let header = reader
        .headers()
        .map_err(|e| LogError::MalformedHeader(e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(LogError::EmptyLog);
    }
    let find = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing: Vec<&str> = [TIME, CURRENT, VOLTAGE]
        .into_iter()
        .filter(|c| find(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(LogError::MalformedHeader(format!(
            "missing column(s) {} in {:?}",
            missing.join(", "),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let (it, ic, iv) = (
        find(TIME).unwrap_or(0),
        find(CURRENT).unwrap_or(0),
        find(VOLTAGE).unwrap_or(0),
    );
    let icy = find(CYCLE);

    let mut samples = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| LogError::Csv {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(LogError::FieldCount {
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let num = |i: usize, column: &'static str| -> Result<f64, LogError> {
            let raw = &rec[i];
            let v = raw.parse::<f64>().map_err(|_| LogError::Parse {
                row,
                column,
                value: raw.to_string(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(LogError::NonFinite(row))
            }
        };
        let cycle = match icy {
            Some(i) if !rec[i].is_empty() => {
                Some(rec[i].parse::<u32>().map_err(|_| LogError::Parse {
                    row,
                    column: CYCLE,
                    value: rec[i].to_string(),
                })?)
            }
            _ => None,
        };
        samples.push(Sample {
            t: num(it, TIME)?,
            current: num(ic, CURRENT)?,
            voltage: num(iv, VOLTAGE)?,
            cycle,
        });
    }
    Ok(ChargeLog::new(samples, metadata)?)
}

/// Write a log in the layout [`parse_log`] reads. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_log<W: Write>(sink: W, log: &ChargeLog, spec: &CsvSpec) -> Result<(), LogError> {
    let mut sink = BufWriter::new(sink);
    let m = &log.metadata;
    if let Some(c) = m.capacity_ah {
        writeln!(sink, "# capacity_ah: {c}")?;
    }
    for (k, v) in [
        ("temperature", &m.temperature),
        ("c_rate", &m.c_rate),
        ("label", &m.label),
    ] {
        if let Some(v) = v {
            writeln!(sink, "# {k}: {v}")?;
        }
    }
    let with_cycle = log.has_cycle_column();
    let mut w = csv::WriterBuilder::new()
        .delimiter(spec.delimiter)
        .from_writer(sink);
    let csv_err = |e: csv::Error| LogError::Csv {
        row: 0,
        message: e.to_string(),
    };
    if with_cycle {
        w.write_record([TIME, CURRENT, VOLTAGE, CYCLE])
            .map_err(csv_err)?;
    } else {
        w.write_record([TIME, CURRENT, VOLTAGE]).map_err(csv_err)?;
    }
    for s in log.samples() {
        let mut rec = vec![
            s.t.to_string(),
            s.current.to_string(),
            s.voltage.to_string(),
        ];
        if with_cycle {
            rec.push(s.cycle.map(|c| c.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn is_gz(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

/// File name without a trailing `.gz` and `.csv`.
pub fn log_stem(path: &Path) -> String {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".gz", ".csv"] {
        if name.len() > ext.len() && name.to_ascii_lowercase().ends_with(ext) {
            name.truncate(name.len() - ext.len());
        }
    }
    name
}

pub fn read_log_file(path: &Path, spec: &CsvSpec) -> Result<ChargeLog, LogError> {
    let file = BufReader::new(File::open(path)?);
    if is_gz(path) {
        parse_log(GzDecoder::new(file), spec)
    } else {
        parse_log(file, spec)
    }
}

pub fn write_log_file(path: &Path, log: &ChargeLog, spec: &CsvSpec) -> Result<(), LogError> {
    let file = File::create(path)?;
    if is_gz(path) {
        let mut gz = GzEncoder::new(file, Compression::default());
        write_log(&mut gz, log, spec)?;
        gz.finish()?;
        Ok(())
    } else {
        write_log(file, log, spec)
    }
}
