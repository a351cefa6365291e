use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    /// Aligned, human-readable.
    #[default]
    Text,
    /// Comma-separated records.
    Records,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Records => "csv",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Result of one subcommand: named scalars plus an optional table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub name: String,
    pub scalars: Vec<(String, String)>,
    pub table: Option<Table>,
    /// Print the table in text mode too; long tables go to records only.
    pub table_in_text: bool,
}

impl Report {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            table_in_text: true,
            ..Self::default()
        }
    }

    pub fn scalar(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.scalars.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.scalars.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self, format: Format, header: &str) -> String {
        let mut s = format!("{header}\n");
        match format {
            Format::Text => {
                let width = self.scalars.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in &self.scalars {
                    let _ = writeln!(s, "{k:<width$}  {v}");
                }
                if let (Some(t), true) = (&self.table, self.table_in_text) {
                    if !self.scalars.is_empty() {
                        s.push('\n');
                    }
                    let widths: Vec<usize> = (0..t.columns.len())
                        .map(|i| {
                            t.rows
                                .iter()
                                .map(|r| r[i].len())
                                .chain([t.columns[i].len()])
                                .max()
                                .unwrap_or(0)
                        })
                        .collect();
                    let line = |cells: &[String]| {
                        let parts: Vec<String> = cells
                            .iter()
                            .zip(&widths)
                            .map(|(c, w)| format!("{c:>w$}"))
                            .collect();
                        parts.join("  ")
                    };
                    let _ = writeln!(s, "{}", line(&t.columns));
                    for r in &t.rows {
                        let _ = writeln!(s, "{}", line(r));
                    }
                }
            }
            Format::Records => {
                if !self.scalars.is_empty() {
                    s.push_str("key,value\n");
                    for (k, v) in &self.scalars {
                        let _ = writeln!(s, "{k},{v}");
                    }
                }
                if let Some(t) = &self.table {
                    if !self.scalars.is_empty() {
                        s.push('\n');
                    }
                    let _ = writeln!(s, "{}", t.columns.join(","));
                    for r in &t.rows {
                        let _ = writeln!(s, "{}", r.join(","));
                    }
                }
            }
        }
        s
    }

    /// Writes `<dir>/<name>.<ext>` and returns the rendered text.
    pub fn emit(&self, format: Format, header: &str, dir: Option<&Path>) -> Result<String, CliError> {
        let text = self.render(format, header);
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir).map_err(CliError::io)?;
            std::fs::write(dir.join(format!("{}.{}", self.name, format.extension())), &text)
                .map_err(CliError::io)?;
        }
        Ok(text)
    }
}

/// Fixed-precision float formatting so outputs are stable across runs.
pub fn num(x: f64) -> String {
    format!("{x:.6}")
}

pub fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo");
        r.scalar("fidelity", num(0.5)).scalar("n", 3);
        let mut t = Table::new(["a", "bb"]);
        t.push(vec!["1".into(), "2".into()]);
        r.table = Some(t);
        r
    }

    #[test]
    fn records_layout() {
        let s = sample().render(Format::Records, "# h");
        assert_eq!(s, "# h\nkey,value\nfidelity,0.500000\nn,3\n\na,bb\n1,2\n");
    }

    #[test]
    fn text_layout() {
        let s = sample().render(Format::Text, "# h");
        assert_eq!(s, "# h\nfidelity  0.500000\nn         3\n\na  bb\n1   2\n");
    }
}
