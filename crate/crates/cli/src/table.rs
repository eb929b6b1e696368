use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

/// Whitespace-delimited numeric table with `# key = value` metadata.
#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), ..Self::default() }
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.metadata.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(CliError::Invariant(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(" "));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Parses text produced by [`ResultTable::render`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = ResultTable::default();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    table.metadata.push((k.trim().to_string(), v.trim().to_string()));
                }
            } else if table.columns.is_empty() {
                table.columns = line.split_whitespace().map(String::from).collect();
            } else if !line.trim().is_empty() {
                let row = line
                    .split_whitespace()
                    .map(|c| c.parse::<f64>().map_err(|e| CliError::Usage(format!("bad number {c:?}: {e}"))))
                    .collect::<Result<Vec<f64>>>()?;
                table.push(row)?;
            }
        }
        Ok(table)
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
