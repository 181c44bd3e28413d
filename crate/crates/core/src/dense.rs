//! Small dense helpers over faer.

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Eigenvalues (ascending) and eigenvectors of the symmetric part of `m`.
pub(crate) fn sym_eigen(m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let sym = symmetric_part(m);
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigendecomposition: {e:?}")))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, evd.U().to_owned()))
}

pub(crate) fn sym_eigenvalues(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    symmetric_part(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigenvalues: {e:?}")))
}

pub(crate) fn min_eigenvalue(m: MatRef<'_, f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sym_eigenvalues(m)?[0])
}

/// Singular values in nonincreasing order.
pub(crate) fn singular_values(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    m.singular_values()
        .map_err(|e| Error::Linalg(format!("singular values: {e:?}")))
}

/// Lower Cholesky factor, or `None` if `m` is not numerically positive definite.
pub(crate) fn cholesky(m: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let l = m.llt(Side::Lower).ok()?;
    let l = l.L().to_owned();
    if (0..l.nrows()).any(|i| !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite()) {
        return None;
    }
    Some(l)
}

/// Least-squares solution of `a x = b` (full column rank, `rows >= cols`).
pub(crate) fn lstsq(a: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    use faer::linalg::solvers::SolveLstsq;
    if a.ncols() == 0 {
        return Vec::new();
    }
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = a.col_piv_qr().solve_lstsq(&rhs);
    (0..a.ncols()).map(|i| x[(i, 0)]).collect()
}

pub(crate) fn symmetric_part(m: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |a, b| 0.5 * (m[(a, b)] + m[(b, a)]))
}

pub(crate) fn symmetrize_in_place(m: &mut Mat<f64>) {
    for a in 0..m.nrows() {
        for b in a + 1..m.ncols() {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Frobenius inner product.
pub(crate) fn inner(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)] * b[(i, j)];
        }
    }
    acc
}

pub(crate) fn frobenius(a: MatRef<'_, f64>) -> f64 {
    inner(a, a).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn to_rows(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|a| (0..m.ncols()).map(|b| m[(a, b)]).collect())
        .collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Option<Mat<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(Mat::from_fn(n, n, |a, b| rows[a][b]))
}
