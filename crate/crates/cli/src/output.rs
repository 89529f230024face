//! CSV outputs. Every file starts with one `#` metadata line, then a header row.

use std::fs;
use std::path::{Path, PathBuf};

use silentwave::fourier::ModeField;

use crate::error::CliError;

/// Identifies a run in every file it writes.
#[derive(Debug, Clone)]
pub struct Meta {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    pub fn line(&self) -> String {
        format!("silentwave {} config_sha256={} seed={}", self.command, self.config_sha256, self.seed)
    }
}

pub struct OutDir {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(dir: &Path, meta: Meta) -> Result<OutDir, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(OutDir { dir: dir.to_path_buf(), meta, written: Vec::new() })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn table(&mut self, name: &str, table: Table) -> Result<(), CliError> {
        let mut text = format!("# {}\n", self.meta.line());
        text.push_str(&table.finish()?);
        self.write(name, &text)
    }

    /// Mode coefficients in the layout read by `ModeField::from_csv`.
    pub fn modes(&mut self, name: &str, field: &ModeField) -> Result<(), CliError> {
        let mut header: Vec<String> = (1..=field.d()).map(|j| format!("n{j}")).collect();
        header.extend(["component", "re", "im"].map(String::from));
        let mut t = Table::new(&header);
        for i in 0..field.set.len() {
            let n = field.set.mode(i);
            for (c, z) in field.coeff(i).iter().enumerate() {
                let mut row: Vec<String> = n.iter().map(|x| x.to_string()).collect();
                row.extend([c.to_string(), num(z.re), num(z.im)]);
                t.row(&row);
            }
        }
        self.table(name, t)
    }
}

/// Rows of strings under a fixed header.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
    width: usize,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Table {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header.iter().map(|s| s.as_ref())).expect("in-memory write");
        Table { w, width: header.len() }
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        assert_eq!(cells.len(), self.width, "row width differs from the header");
        self.w.write_record(cells.iter().map(|s| s.as_ref())).expect("in-memory write");
    }

    fn finish(self) -> Result<String, CliError> {
        let bytes = self.w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Shortest round-trip representation, with −0 written as 0.
pub fn num(x: f64) -> String {
    format!("{:e}", if x == 0.0 { 0.0 } else { x })
}

/// Empty for `None`.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Aligned plain-text table for the terminal.
pub fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut w: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let s: Vec<String> = cells.iter().zip(&w).map(|(c, n)| format!("{c:<n$}")).collect();
        println!("{}", s.join("  ").trim_end());
    };
    line(header.to_vec());
    println!("{}", w.iter().map(|n| "-".repeat(*n)).collect::<Vec<_>>().join("  "));
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_quotes_and_numbers() {
        let mut t = Table::new(&["name", "value"]);
        t.row(&["a,b", &num(0.1)]);
        t.row(&["c", &opt(None)]);
        assert_eq!(t.finish().unwrap(), "name,value\n\"a,b\",1e-1\nc,\n");
    }

    #[test]
    fn num_round_trips() {
        for x in [0.1, -3.25e-17, 1.0 / 3.0, 6.02e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(-0.0), "0e0");
    }
}
