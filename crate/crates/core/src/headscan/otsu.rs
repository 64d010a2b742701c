//! Otsu thresholding on real-valued scores, via a 256-bin histogram over the
//! observed range.

use crate::error::{Error, Result};

pub const BINS: usize = 256;

/// Returns the bin edge that maximizes between-class variance.
///
/// Values at or above the returned threshold form the upper class. Class
/// means use the exact values, not bin centres. When several edges reach the
/// same variance the lowest one wins.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite score".into()));
    }
    // sorted accumulation keeps the result independent of input order
    sorted.sort_by(f64::total_cmp);
    let (min, max) = match (sorted.first(), sorted.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => {
            return Err(Error::Degenerate(
                "fewer than two distinct score values".into(),
            ))
        }
    };
    let width = (max - min) / BINS as f64;
    let mut count = [0usize; BINS];
    let mut sum = [0.0f64; BINS];
    for &v in &sorted {
        let b = (((v - min) / width) as usize).min(BINS - 1);
        count[b] += 1;
        sum[b] += v;
    }

    let total_n = sorted.len();
    let total_sum: f64 = sum.iter().sum();
    let mut n0 = 0usize;
    let mut s0 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for t in 1..BINS {
        n0 += count[t - 1];
        s0 += sum[t - 1];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let m0 = s0 / n0 as f64;
        let m1 = (total_sum - s0) / n1 as f64;
        let var = (n0 as f64 * n1 as f64) * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, v)| var > v) {
            best = Some((t, var));
        }
    }
    let (t, _) = best.expect("two distinct values always give a split");
    Ok(min + t as f64 * width)
}
