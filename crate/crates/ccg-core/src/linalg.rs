//! Small dense linear-algebra helpers shared by the training stages.

use ndarray::Array2;

use crate::error::{CcgError, Result};

/// Matrix exponential by scaling-and-squaring with a truncated Taylor
/// series. After scaling the 1-norm below 1/2, terms are accumulated until
/// the running term drops under 1e-16 of the partial sum, well inside the
/// 1e-12 budget the acyclicity penalty needs. The series terminates exactly
/// for nilpotent inputs, so strictly triangular supports give a trace of
/// exactly the dimension.
pub fn expm(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");

    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(CcgError::numeric(
            "expm: input norm is non-finite; consider clipping weights",
        ));
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 2f64.powi(squarings as i32);
    let a_scaled = a.mapv(|v| v / scale);

    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=64u32 {
        term = term.dot(&a_scaled).mapv(|v| v / f64::from(k));
        let t_norm = one_norm(&term);
        if t_norm == 0.0 {
            break; // nilpotent: the series ended exactly
        }
        result += &term;
        if t_norm < 1e-16 * one_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(CcgError::numeric(
            "expm overflowed; weights are too large, consider clipping",
        ));
    }
    Ok(result)
}

/// Max absolute column sum.
pub fn one_norm(a: &Array2<f64>) -> f64 {
    let mut max = 0.0f64;
    for col in a.columns() {
        let s: f64 = col.iter().map(|v| v.abs()).sum();
        max = max.max(s);
    }
    max
}

pub fn frobenius_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub fn trace(a: &Array2<f64>) -> f64 {
    a.diag().sum()
}
