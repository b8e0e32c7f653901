//! Header-addressed delimiter-separated text files.
//!
//! Columns are looked up by name, so column order in the files is free.
//! Lines starting with `#` are comments; writers use one to stamp provenance.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    /// (1-based line number, fields)
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Table> {
        let delimiter = sniff_delimiter(text);
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .has_headers(true)
            .flexible(false)
            .from_reader(text.as_bytes());
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(csv_line(&e), e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if headers.iter().all(String::is_empty) {
            return Err(parse_err(1, "missing header row".into()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record.iter().map(str::to_owned).collect()));
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.find(name).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn error(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    pub fn parse_f64(&self, line: u64, column: &str, raw: &str) -> Result<f64> {
        raw.parse::<f64>()
            .map_err(|_| self.error(line, format!("column `{column}`: `{raw}` is not a number")))
    }
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text
        .lines()
        .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .unwrap_or("");
    if header.contains('\t') && !header.contains(',') {
        b'\t'
    } else {
        b','
    }
}

/// Writes a comma-separated file, optionally preceded by a `# ` comment line.
pub(crate) fn write_table(
    path: &Path,
    preamble: Option<&str>,
    headers: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut out = Vec::new();
    if let Some(p) = preamble {
        out.extend_from_slice(format!("# {p}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
        w.write_record(headers).map_err(to_io)?;
        for row in rows {
            w.write_record(row).map_err(to_io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Resolves `raw` against `base` unless it is absolute.
pub(crate) fn resolve(base: &Path, raw: &str) -> PathBuf {
    let p = Path::new(raw);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
