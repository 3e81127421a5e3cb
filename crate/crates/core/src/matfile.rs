//! Plain-text parameter files.
//!
//! ```text
//! prefalign-matrix v1
//! kind learned-judge
//! feature_dim 12
//! matrix backbone 2 12
//! 1.0000000000000000e0 -2.5000000000000000e-1 ...
//! end
//! ```
//!
//! Header lines are `key value` pairs. Every matrix is written row-major with
//! 17 significant digits, which round-trips any finite `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &str = "prefalign-matrix v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatrixFile {
    pub kind: String,
    pub header: BTreeMap<String, String>,
    pub matrices: Vec<Matrix>,
}

impl MatrixFile {
    pub fn new(kind: impl Into<String>) -> Self {
        MatrixFile {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.header.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> &mut Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        self.matrices.push(Matrix {
            name: name.into(),
            rows,
            cols,
            data,
        });
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::MatrixFormat(format!("missing header `{key}`")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::MatrixFormat(format!("bad header `{key}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::MatrixFormat(format!("expected kind {kind}, found {}", self.kind)))
        }
    }

    /// Looks up a matrix by name and checks its shape.
    pub fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<&[f64]> {
        let m = self
            .matrices
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::MatrixFormat(format!("missing matrix `{name}`")))?;
        if (m.rows, m.cols) != (rows, cols) {
            return Err(Error::shape(format!(
                "matrix `{name}` is {}x{}, expected {rows}x{cols}",
                m.rows, m.cols
            )));
        }
        Ok(&m.data)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "kind {}", self.kind);
        for (k, v) in &self.header {
            let _ = writeln!(s, "{k} {v}");
        }
        for m in &self.matrices {
            let _ = writeln!(s, "matrix {} {} {}", m.name, m.rows, m.cols);
            for r in 0..m.rows {
                let row = &m.data[r * m.cols..(r + 1) * m.cols];
                let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::MatrixFormat(msg);
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(bad("missing magic line".into())),
        }
        let mut out = MatrixFile::default();
        let mut saw_end = false;
        while let Some((no, line)) = lines.next() {
            let line = line.trim_end();
            if line == "end" {
                saw_end = true;
                break;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "kind" => out.kind = rest.to_string(),
                "matrix" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let [name, rows, cols] = parts[..] else {
                        return Err(bad(format!("line {}: malformed matrix header", no + 1)));
                    };
                    let rows: usize = rows.parse().map_err(|_| bad(format!("line {}: rows", no + 1)))?;
                    let cols: usize = cols.parse().map_err(|_| bad(format!("line {}: cols", no + 1)))?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rno, row) = lines
                            .next()
                            .ok_or_else(|| bad(format!("matrix `{name}` truncated")))?;
                        let before = data.len();
                        for tok in row.split_whitespace() {
                            data.push(
                                tok.parse::<f64>()
                                    .map_err(|_| bad(format!("line {}: bad number {tok:?}", rno + 1)))?,
                            );
                        }
                        if data.len() - before != cols {
                            return Err(bad(format!("line {}: expected {cols} values", rno + 1)));
                        }
                    }
                    out.matrices.push(Matrix {
                        name: name.to_string(),
                        rows,
                        cols,
                        data,
                    });
                }
                "" => {}
                _ => {
                    out.header.insert(key.to_string(), rest.to_string());
                }
            }
        }
        if !saw_end {
            return Err(bad("missing `end`".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
