//! Fourth-order cumulative quadrature on uniform grids.

use std::ops::{Add, Mul};

use crate::error::{Error, Result};

/// Running integral `I_j = int_{x_0}^{x_j} f` for samples on a uniform grid of spacing `h`.
///
/// Interior panels use the cubic through the four surrounding samples; the end
/// panels use the one-sided cubic. Needs at least four samples.
pub fn cumulative<T>(f: &[T], h: f64) -> Result<Vec<T>>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let n = f.len();
    if n < 4 {
        return Err(Error::Contract(format!("cumulative quadrature needs 4 samples, got {n}")));
    }
    let w = h / 24.0;
    let mut out = Vec::with_capacity(n);
    let mut acc = T::default();
    out.push(acc);
    for i in 0..n - 1 {
        let panel = if i == 0 {
            f[0] * 9.0 + f[1] * 19.0 + f[2] * -5.0 + f[3]
        } else if i == n - 2 {
            f[n - 4] + f[n - 3] * -5.0 + f[n - 2] * 19.0 + f[n - 1] * 9.0
        } else {
            f[i - 1] * -1.0 + f[i] * 13.0 + f[i + 1] * 13.0 + f[i + 2] * -1.0
        };
        acc = acc + panel * w;
        out.push(acc);
    }
    Ok(out)
}

/// Total integral over the grid.
pub fn integrate<T>(f: &[T], h: f64) -> Result<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    Ok(*cumulative(f, h)?.last().expect("non-empty"))
}

/// Composite trapezoid rule.
pub fn trapezoid<T>(f: &[T], h: f64) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    if f.is_empty() {
        return T::default();
    }
    let mut acc = T::default();
    for v in f {
        acc = acc + *v;
    }
    acc = acc + (f[0] + f[f.len() - 1]) * -0.5;
    acc * h
}
