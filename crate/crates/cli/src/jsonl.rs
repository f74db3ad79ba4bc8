//! JSONL reading and writing that keeps every input field.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ctxcomp::eval::DatasetRecord;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

/// An input line both as untouched JSON and as a typed record.
#[derive(Debug, Clone)]
pub struct InputRecord {
    pub line: usize,
    pub raw: Map<String, Value>,
    pub record: DatasetRecord,
}

impl InputRecord {
    /// Record id, or `line N` when the record has none.
    pub fn label(&self) -> String {
        if self.record.id.is_empty() {
            format!("line {}", self.line)
        } else {
            self.record.id.clone()
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))
}

/// Non-blank lines parsed as `T`, with 1-based line numbers.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| CliError::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<InputRecord>, CliError> {
    read_lines::<Map<String, Value>>(path)?
        .into_iter()
        .map(|(line, raw)| {
            let at = |m: String| CliError::invalid(format!("{}:{line}: {m}", path.display()));
            let record: DatasetRecord = serde_json::from_value(Value::Object(raw.clone())).map_err(|e| at(e.to_string()))?;
            if record.documents.is_empty() {
                return Err(at("record has no documents".into()));
            }
            Ok(InputRecord { line, raw, record })
        })
        .collect()
}

/// One compact JSON value per line, to `path` or stdout.
pub fn write_lines<'a>(path: Option<&Path>, values: impl IntoIterator<Item = &'a Value>) -> Result<(), CliError> {
    let io_err = |e: io::Error| CliError::Io(format!("cannot write output: {e}"));
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::Io(format!("cannot create {}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for v in values {
        serde_json::to_writer(&mut w, v).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
