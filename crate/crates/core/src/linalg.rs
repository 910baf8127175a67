//! Small dense linear-algebra helpers built on nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::phase::C64;

/// Orthonormal basis of the `k`-dimensional approximate null space of `m`,
/// together with the `k` smallest singular values (ascending) and the largest one.
pub fn complex_null_space(m: &DMatrix<C64>, k: usize) -> (Vec<DVector<C64>>, Vec<f64>, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
    let smax = svd.singular_values.max();
    let vecs = idx[..k].iter().map(|&i| v_t.row(i).adjoint().into_owned()).collect();
    let svals = idx[..k].iter().map(|&i| svd.singular_values[i]).collect();
    (vecs, svals, smax)
}

/// Real counterpart of [`complex_null_space`].
pub fn real_null_space(m: &DMatrix<f64>, k: usize) -> (Vec<DVector<f64>>, Vec<f64>, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
    let smax = svd.singular_values.max();
    let vecs = idx[..k].iter().map(|&i| v_t.row(i).transpose()).collect();
    let svals = idx[..k].iter().map(|&i| svd.singular_values[i]).collect();
    (vecs, svals, smax)
}

/// Continuous phase increment along a sequence of non-zero complex samples.
/// Returns the unwrapped phases (starting at `arg(c_0)`) or the index and size
/// of the first step exceeding `max_jump`.
pub fn unwrap_phase(c: &[C64], max_jump: f64) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let mut out = Vec::with_capacity(c.len());
    let Some(first) = c.first() else { return Ok(out) };
    let mut acc = first.arg();
    out.push(acc);
    for j in 1..c.len() {
        let d = (c[j] / c[j - 1]).arg();
        if d.abs() > max_jump || !d.is_finite() {
            return Err((j, d));
        }
        acc += d;
        out.push(acc);
    }
    Ok(out)
}

/// Determinant of a small complex matrix by LU.
pub fn det_c(m: &DMatrix<C64>) -> C64 {
    m.clone().lu().determinant()
}
