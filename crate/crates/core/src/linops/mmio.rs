//! Matrix Market I/O.
//!
//! Sparse matrices use the `coordinate` format (real or integer,
//! general or symmetric); dense matrices use the `array` format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::sparse::SparseMatrix;
use crate::error::{LyapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

struct Header {
    coordinate: bool,
    symmetry: Symmetry,
}

fn parse_err(path: &Path, msg: impl Into<String>) -> LyapError {
    LyapError::Parse { path: path.to_path_buf(), msg: msg.into() }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| LyapError::Io { path: path.to_path_buf(), source })
}

fn parse_header(path: &Path, line: &str) -> Result<Header> {
    let tokens: Vec<String> = line.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, format!("bad header line: {line}")));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(parse_err(path, format!("unsupported format {other}"))),
    };
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(parse_err(path, format!("unsupported field {other}"))),
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => return Err(parse_err(path, format!("unsupported symmetry {other}"))),
    };
    Ok(Header { coordinate, symmetry })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'))
}

fn parse_num<T: std::str::FromStr>(path: &Path, lineno: usize, tok: Option<&str>) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(path, format!("line {lineno}: expected a number")))
}

/// Reads a sparse matrix in coordinate format.
pub fn read_sparse(path: &Path) -> Result<SparseMatrix> {
    let text = read_to_string(path)?;
    let first = text.lines().next().ok_or_else(|| parse_err(path, "empty file"))?;
    let header = parse_header(path, first)?;
    if !header.coordinate {
        let dense = parse_array(path, &text, &header)?;
        return Ok(SparseMatrix::from_dense(&dense));
    }
    let mut lines = data_lines(&text);
    let (lineno, size) = lines.next().ok_or_else(|| parse_err(path, "missing size line"))?;
    let mut it = size.split_whitespace();
    let nrows: usize = parse_num(path, lineno, it.next())?;
    let ncols: usize = parse_num(path, lineno, it.next())?;
    let nnz: usize = parse_num(path, lineno, it.next())?;
    if header.symmetry != Symmetry::General && nrows != ncols {
        return Err(parse_err(path, "symmetric storage needs a square matrix"));
    }
    let mut trip = Vec::with_capacity(2 * nnz);
    let mut count = 0;
    for (lineno, line) in lines {
        let mut it = line.split_whitespace();
        let r: usize = parse_num(path, lineno, it.next())?;
        let c: usize = parse_num(path, lineno, it.next())?;
        let v: f64 = parse_num(path, lineno, it.next())?;
        if r == 0 || c == 0 || r > nrows || c > ncols {
            return Err(parse_err(path, format!("line {lineno}: index ({r}, {c}) out of range")));
        }
        if !v.is_finite() {
            return Err(parse_err(path, format!("line {lineno}: non-finite value")));
        }
        trip.push((r - 1, c - 1, v));
        if r != c {
            match header.symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => trip.push((c - 1, r - 1, v)),
                Symmetry::SkewSymmetric => trip.push((c - 1, r - 1, -v)),
            }
        }
        count += 1;
    }
    if count != nnz {
        return Err(parse_err(path, format!("expected {nnz} entries, found {count}")));
    }
    SparseMatrix::from_triplets(nrows, ncols, &trip)
}

fn parse_array(path: &Path, text: &str, header: &Header) -> Result<DMatrix<f64>> {
    let mut lines = data_lines(text);
    let (lineno, size) = lines.next().ok_or_else(|| parse_err(path, "missing size line"))?;
    let mut it = size.split_whitespace();
    let nrows: usize = parse_num(path, lineno, it.next())?;
    let ncols: usize = parse_num(path, lineno, it.next())?;
    let mut values = Vec::with_capacity(nrows * ncols);
    for (lineno, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = parse_num(path, lineno, Some(tok))?;
            if !v.is_finite() {
                return Err(parse_err(path, format!("line {lineno}: non-finite value")));
            }
            values.push(v);
        }
    }
    match header.symmetry {
        Symmetry::General => {
            if values.len() != nrows * ncols {
                return Err(parse_err(
                    path,
                    format!("expected {} values, found {}", nrows * ncols, values.len()),
                ));
            }
            Ok(DMatrix::from_column_slice(nrows, ncols, &values))
        }
        sym => {
            // Lower triangle stored column by column.
            let n = nrows;
            let expected = if sym == Symmetry::Symmetric { n * (n + 1) / 2 } else { n * (n - 1) / 2 };
            if nrows != ncols || values.len() != expected {
                return Err(parse_err(path, "malformed packed symmetric array"));
            }
            let mut m = DMatrix::zeros(n, n);
            let mut k = 0;
            for c in 0..n {
                let start = if sym == Symmetry::Symmetric { c } else { c + 1 };
                for r in start..n {
                    m[(r, c)] = values[k];
                    m[(c, r)] = if sym == Symmetry::Symmetric { values[k] } else { -values[k] };
                    k += 1;
                }
            }
            Ok(m)
        }
    }
}

/// Reads a dense matrix (array format, or coordinate densified).
pub fn read_dense(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_to_string(path)?;
    let first = text.lines().next().ok_or_else(|| parse_err(path, "empty file"))?;
    let header = parse_header(path, first)?;
    if header.coordinate {
        Ok(read_sparse(path)?.to_dense())
    } else {
        parse_array(path, &text, &header)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| LyapError::Io { path: path.to_path_buf(), source })
}

/// Writes a sparse matrix in coordinate real general format.
pub fn write_sparse(path: &Path, a: &SparseMatrix) -> Result<()> {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.nnz());
    for (r, c, v) in a.triplets() {
        let _ = writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v);
    }
    write_file(path, &out)
}

/// Writes a dense matrix in array real general format (column-major).
pub fn write_dense(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for v in m.iter() {
        let _ = writeln!(out, "{v:.17e}");
    }
    write_file(path, &out)
}
