//! Column-oriented result tables written as CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ResultTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(HarnessError::Data(format!("row has {} cells, header has {}", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Rows whose `key` columns equal the given values.
    pub fn select<'a>(&'a self, filter: &'a [(&'a str, &'a str)]) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        let idx: Vec<Option<usize>> = filter.iter().map(|(k, _)| self.column(k)).collect();
        self.rows.iter().filter(move |r| idx.iter().zip(filter).all(|(i, (_, v))| i.is_some_and(|i| r[i] == *v)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Shortest round-trip formatting, so identical values print identically.
pub fn num(v: f64) -> String {
    format!("{v}")
}
