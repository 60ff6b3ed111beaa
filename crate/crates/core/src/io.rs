//! File helpers shared by the dataset, score and report writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::numerics::DenseMatrix;
use crate::{Error, Result};

/// Writes through a sibling temp file and renames, so readers never observe
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Matrix as CSV with a header row; floats in shortest round-trip form.
pub fn matrix_to_csv(header: &[String], m: &DenseMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 8);
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..m.rows() {
        for (j, v) in m.row(r).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a CSV written by [`matrix_to_csv`].
pub fn matrix_from_csv(path: &Path) -> Result<(Vec<String>, DenseMatrix<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) if !h.is_empty() => h.split(',').map(str::to_string).collect(),
        _ => Vec::new(),
    };
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("not a number: `{field}`"),
            })?;
            data.push(v);
        }
        if data.len() - before != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("expected {} fields", header.len()),
            });
        }
        rows += 1;
    }
    let m = DenseMatrix::new(rows, header.len(), data)?;
    Ok((header, m))
}

/// 64-bit FNV-1a digest rendered as hex; used to tie artefacts together.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
