//! Matrix serialization and heatmap export.
//!
//! Two matrix formats are supported:
//!
//! * CSV, one matrix row per line, values printed with 17 significant digits
//!   so that `f64` round-trips exactly.
//! * A flat little-endian binary layout: the 8-byte magic `SNLMAT01`, the row
//!   and column counts as `u64`, then `rows * cols` IEEE-754 doubles in
//!   row-major order.
//!
//! Heatmaps are 8-bit binary PGM (`P5`) images.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const BINARY_MAGIC: &[u8; 8] = b"SNLMAT01";

/// Writes `m` as CSV (no header).
pub fn write_csv<T: Scalar, W: Write>(m: &Matrix<T>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| format!("{:.16e}", v.to_f64_lossy())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: Scalar, R: Read>(input: R) -> Result<Matrix<T>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map(T::of)
                    .map_err(|e| Error::Format(format!("csv line {}: {field:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn encode_binary<T: Scalar>(m: &Matrix<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + 8 * m.as_slice().len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    buf
}

pub fn decode_binary<T: Scalar>(bytes: &[u8]) -> Result<Matrix<T>> {
    if bytes.len() < 24 || &bytes[..8] != BINARY_MAGIC {
        return Err(Error::Format("missing SNLMAT01 header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let rows = usize::try_from(word(8)).map_err(|_| Error::Format("row count overflow".into()))?;
    let cols = usize::try_from(word(16)).map_err(|_| Error::Format("col count overflow".into()))?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflow".into()))?;
    let body = &bytes[24..];
    if body.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {count} doubles, found {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn write_binary_file<T: Scalar>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_binary(m))?;
    Ok(())
}

pub fn write_csv_file<T: Scalar>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    write_csv(m, fs::File::create(path)?)
}

/// Loads a matrix file, detecting the binary format by its magic and
/// falling back to CSV.
pub fn read_matrix_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes)
    } else {
        read_csv(bytes.as_slice())
    }
}

/// Encodes one attention row as an 8-bit `P5` image of `height x width`,
/// min-max normalized over the row. A constant row maps to all zeros.
pub fn heatmap_pgm<T: Scalar>(row: &[T], height: usize, width: usize) -> Result<Vec<u8>> {
    if row.len() != height * width {
        return Err(Error::Shape(format!(
            "heatmap row of length {} does not fit {height}x{width}",
            row.len()
        )));
    }
    let lo = row.iter().fold(T::infinity(), |m, &v| m.min(v));
    let hi = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let range = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(row.iter().map(|&v| {
        if range > T::zero() {
            ((v - lo) / range * T::of(255.0)).round().to_u8().unwrap_or(255)
        } else {
            0
        }
    }));
    Ok(out)
}
