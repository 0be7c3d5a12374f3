//! Coordinate-format text files: a header line with the rank and extents,
//! then one `c0 c1 ... value` line per stored entry.

use super::{build_from_coo, TensorData, TensorError};
use crate::frontend::StorageSpec;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Malformed(usize, String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn read_tensor_text(path: &Path, spec: &StorageSpec) -> Result<TensorData, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| IoError::Malformed(0, "empty tensor file".into()))?;
    let nums: Vec<i64> = header
        .split_whitespace()
        .map(|t| t.parse::<i64>())
        .collect::<Result<_, _>>()
        .map_err(|e| IoError::Malformed(hline, e.to_string()))?;
    let (&rank, extents) = nums
        .split_first()
        .ok_or_else(|| IoError::Malformed(hline, "header needs `<rank> <extents...>`".into()))?;
    if extents.len() != rank as usize {
        return Err(IoError::Malformed(hline, format!("expected {rank} extents, got {}", extents.len())));
    }
    let mut triples = Vec::new();
    for (lineno, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != rank as usize + 1 {
            return Err(IoError::Malformed(lineno, format!("expected {} fields", rank + 1)));
        }
        let coords: Vec<i64> = toks[..rank as usize]
            .iter()
            .map(|t| t.parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::Malformed(lineno, e.to_string()))?;
        let value: f64 = toks[rank as usize]
            .parse()
            .map_err(|e: std::num::ParseFloatError| IoError::Malformed(lineno, e.to_string()))?;
        triples.push((coords, value));
    }
    Ok(build_from_coo(&triples, spec, extents)?)
}

/// Writes stored entries only; dense tensors emit every cell.
pub fn write_tensor_text(path: &Path, data: &TensorData) -> Result<(), IoError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = write!(out, "{}", data.rank());
    for e in &data.extents {
        let _ = write!(out, " {e}");
    }
    out.push('\n');
    for (coords, v) in data.entries() {
        for c in coords {
            let _ = write!(out, "{c} ");
        }
        let _ = writeln!(out, "{v}");
    }
    std::fs::write(path, out)?;
    Ok(())
}
