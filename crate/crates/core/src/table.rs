//! Delimited text tables: tab-separated when the header has a tab,
//! comma-separated otherwise.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let first = text.lines().next().ok_or_else(|| Error::format(path, "empty table"))?;
        let delimiter = if first.contains('\t') { b'\t' } else { b',' };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(str::to_string).collect())
                    .map_err(|e| Error::format(path, e.to_string()))
            })
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(&self.path, format!("missing column {name}")))
    }

    pub fn error(&self, row: usize, message: impl std::fmt::Display) -> Error {
        Error::format(&self.path, format!("line {}: {message}", row + 2))
    }
}
