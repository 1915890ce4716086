//! Matrix files.
//!
//! Files ending in `.bin` are raw little-endian: `u64 rows`, `u64 cols`,
//! then `rows * cols` `f64` values in row-major order. Anything else is
//! read as CSV with one matrix row per line and an optional header line.

use std::path::Path;

use tequila_core::{Error, Matrix, Result};

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.is_empty() {
        return Err(format_err(0, "empty file"));
    }
    let binary = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bin"));
    let m = if binary { parse_binary(&bytes)? } else { parse_csv(&bytes)? };
    if let Some(i) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(format_err(0, format!("non-finite value at element {i}")));
    }
    Ok(m)
}

pub fn parse_binary(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 16 {
        return Err(format_err(bytes.len() as u64, "truncated 16-byte shape header"));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_err(0, format!("shape {rows}x{cols} overflows")))?;
    let body = (bytes.len() - 16) as u64;
    if body != n {
        return Err(format_err(
            16 + body.min(n),
            format!("shape {rows}x{cols} needs {n} data bytes, found {body}"),
        ));
    }
    if rows == 0 || cols == 0 {
        return Err(format_err(0, "empty matrix"));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::from_vec(rows as usize, cols as usize, data)
}

pub fn parse_csv(bytes: &[u8]) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            format_err(offset, e.to_string())
        })?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format_err(offset, format!("line {}: {e}", i + 1))),
        }
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(format_err(0, "no numeric rows"));
    }
    Matrix::from_rows(&rows).map_err(|e| format_err(0, e.to_string()))
}

#[cfg(test)]
pub fn write_binary(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.as_slice().len());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_and_without_header() {
        let a = parse_csv(b"0.4,-0.2\n0.1,-0.9\n").unwrap();
        let b = parse_csv(b"c0,c1\n0.4,-0.2\n0.1,-0.9\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (2, 2));
    }

    #[test]
    fn csv_errors_are_format_errors() {
        assert!(matches!(parse_csv(b"a,b\n"), Err(Error::Format { .. })));
        assert!(matches!(parse_csv(b"1,2\n3\n"), Err(Error::Format { .. })));
        match parse_csv(b"1,2\n3,x\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let m = Matrix::from_rows(&[vec![1.0, -2.5, 3.0]]).unwrap();
        let bytes = write_binary(&m);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(parse_binary(&bytes).unwrap(), m);
        assert!(matches!(parse_binary(&bytes[..30]), Err(Error::Format { .. })));
        assert!(matches!(parse_binary(&bytes[..10]), Err(Error::Format { offset: 10, .. })));
    }
}
