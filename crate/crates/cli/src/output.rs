//! CSV tables and TOML summaries.

use std::path::Path;

use serde::Serialize;

use crate::{CliError, Result};

/// Column-oriented CSV table with string cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 cells")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv())
    }

    /// Cells of the named column.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }
}

/// Shortest round-trip representation, scientific for tiny or huge values.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| num(x)).collect()
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::Config(format!("summary does not serialize: {e}")))?;
    write_file(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_only_when_needed() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,\"x,y\"\n");
        assert_eq!(t.column("b"), Some(vec!["x,y"]));
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(1e-20), "1e-20");
        assert_eq!(num(330.0), "330.0");
    }
}
