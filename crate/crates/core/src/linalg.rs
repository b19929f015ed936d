//! Small dense linear-algebra helpers on top of `nalgebra`.

use crate::error::{Error, Result};
use crate::{Mat, Vector};

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Eigen-decomposition of a symmetric matrix with eigenpairs sorted by
/// descending eigenvalue. Each eigenvector is sign-normalized so that its
/// entry of largest magnitude is positive.
pub fn symmetric_eigen_desc(m: &Mat) -> (Vec<f64>, Mat) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = Mat::zeros(m.nrows(), order.len());
    for (dst, &k) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Inverse of a symmetric positive-definite matrix. Refuses matrices whose
/// smallest eigenvalue falls below `rel_threshold` times the largest.
pub fn spd_inverse(m: &Mat, rel_threshold: f64) -> Result<Mat> {
    let sym = (m + m.transpose()) * 0.5;
    let (values, vectors) = symmetric_eigen_desc(&sym);
    let largest = values.first().copied().unwrap_or(0.0);
    let smallest = values.last().copied().unwrap_or(0.0);
    if !(smallest > rel_threshold * largest.abs()) || !smallest.is_finite() {
        return Err(Error::Singular {
            min_eigenvalue: smallest,
        });
    }
    let inv_vals = Vector::from_iterator(values.len(), values.iter().map(|v| 1.0 / v));
    let scaled = &vectors * Mat::from_diagonal(&inv_vals);
    let inv = scaled * vectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Maps a `nalgebra` matrix to row-major nested vectors for serialization.
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
