//! Normalized cross-correlation for near-duplicate detection.

use crate::corpus::PixelPatch;
use crate::error::{Error, Result};

/// Mean-centered, variance-normalized dot product of two equal-size
/// patches; result in `[-1, 1]`. Zero-variance inputs are an error — the
/// caller must treat such pairs as non-duplicates.
pub fn ncc(a: &PixelPatch, b: &PixelPatch) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            expected: (a.width * a.height) as usize,
            got: (b.width * b.height) as usize,
        });
    }
    let n = a.data.len() as f64;
    let mean_a: f64 = a.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mean_b: f64 = b.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut dot = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let dx = x as f64 - mean_a;
        let dy = y as f64 - mean_b;
        dot += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((dot / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}
