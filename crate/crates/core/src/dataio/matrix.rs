//! Plain matrices: a lossless f64 binary layout for intermediates and a TSV
//! layout for human-facing tables.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::volume::{atomic_write, raw_path};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    #[serde(default)]
    pub columns: Vec<String>,
}

/// Header JSON at `path`, row-major little-endian f64 body at `path.raw`.
pub fn write_matrix(m: &DMatrix<f64>, columns: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = MatrixHeader {
        rows: m.nrows(),
        cols: m.ncols(),
        dtype: "f64".into(),
        columns: columns.to_vec(),
    };
    let mut body = Vec::with_capacity(m.len() * 8);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            body.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    atomic_write(&raw_path(path), &body)?;
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::json(path, e))?;
    atomic_write(path, json.as_bytes())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: MatrixHeader = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if header.dtype != "f64" {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("dtype `{}` is not f64", header.dtype),
        });
    }
    let body_path = raw_path(path);
    let bytes = fs::read(&body_path).map_err(|e| Error::io(&body_path, e))?;
    let expected = (header.rows * header.cols * 8) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: body_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        DMatrix::from_row_slice(header.rows, header.cols, &values),
        header.columns,
    ))
}

/// Tab-separated matrix with a header row. Values use the shortest
/// representation that parses back to the same `f64`, so the file is
/// lossless. Lines starting with `#` before the header carry metadata.
pub fn write_matrix_tsv(
    m: &DMatrix<f64>,
    columns: &[String],
    comments: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    if columns.len() != m.ncols() {
        return Err(Error::DimMismatch(format!(
            "{} column names for {} columns",
            columns.len(),
            m.ncols()
        )));
    }
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&columns.join("\t"));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

pub fn read_matrix_tsv(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        reason: "empty table".into(),
    })?;
    let columns: Vec<String> = header.split('\t').map(str::to_owned).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line: ln + 1,
                reason: format!("{} fields, expected {}", fields.len(), columns.len()),
            });
        }
        for f in fields {
            values.push(f.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: ln + 1,
                reason: e.to_string(),
            })?);
        }
        rows += 1;
    }
    Ok((DMatrix::from_row_slice(rows, columns.len(), &values), columns))
}
