use nalgebra::DMatrix;

use crate::attnops::AttnMap;
use crate::error::{Error, Result};

/// Shannon entropy (natural log) of the normalized squared singular values.
///
/// Ranges over `[0, ln n]`: zero for a rank-one map, `ln n` when all
/// singular values are equal.
pub fn matrix_entropy(map: &AttnMap) -> Result<f64> {
    let n = map.n();
    let a = DMatrix::from_row_slice(n, n, map.as_slice());
    let sq: Vec<f64> = a.singular_values().iter().map(|s| s * s).collect();
    let total: f64 = sq.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Empty("attention map (all zeros)"));
    }
    let h: f64 = sq
        .iter()
        .map(|&s| s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(h.clamp(0.0, (n as f64).ln()))
}
