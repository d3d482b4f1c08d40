use std::fs::File;
use std::path::{Path, PathBuf};

use super::HarnessError;

/// Column order of every step log.
pub const STEP_HEADER: [&str; 7] = ["step", "loss", "acc", "grad_norm", "active_key", "phase", "warmup"];

/// CSV writer with LF record terminators.
pub(crate) struct CsvOut {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<CsvOut, HarnessError> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        let mut out = CsvOut { path: path.to_path_buf(), w };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> Result<(), HarnessError> {
        self.w.write_record(fields).map_err(|e| self.err(e))
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.w.flush().map_err(|e| HarnessError::io(&self.path, e))
    }

    fn err(&self, e: csv::Error) -> HarnessError {
        HarnessError::io(&self.path, std::io::Error::other(e.to_string()))
    }
}

/// Shortest round-trip decimal form, so reruns give identical bytes.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// A CSV file read back as strings.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Fails with `MissingColumns` if any column is absent or the table has no rows.
    pub fn require(&self, names: &[&str]) -> Result<Vec<usize>, HarnessError> {
        let missing: Vec<&str> = names.iter().copied().filter(|n| self.column_index(n).is_none()).collect();
        if !missing.is_empty() {
            return Err(HarnessError::MissingColumns { file: self.path.clone(), missing: missing.join(",") });
        }
        if self.rows.is_empty() {
            return Err(HarnessError::MissingColumns { file: self.path.clone(), missing: "no data rows".into() });
        }
        Ok(names.iter().map(|n| self.column_index(n).expect("checked")).collect())
    }

    /// Parses column `idx` as numbers; empty cells become `None`.
    pub fn numbers(&self, idx: usize) -> Result<Vec<Option<f64>>, HarnessError> {
        self.rows
            .iter()
            .map(|r| {
                let cell = r.get(idx).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|e| HarnessError::Data(format!("{}: {cell:?}: {e}", self.path.display())))
                }
            })
            .collect()
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let data_err = |e: csv::Error| HarnessError::Data(format!("{}: {e}", path.display()));
    let headers = r.headers().map_err(data_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(data_err)?.iter().map(str::to_string).collect());
    }
    Ok(CsvTable { path: path.to_path_buf(), headers, rows })
}
