//! B-spline bases, difference penalties, tensor products and sum-to-zero
//! reparameterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::kron;
use crate::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Univariate,
    TensorBivariate,
    Dummy,
    OffsetCarrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    SumToZero,
    None,
}

/// A smooth (or parametric) term of the structured predictor.
///
/// `knots` holds the breakpoints of each margin. A margin with `K + 1`
/// breakpoints and degree `d` has `K + d` basis functions; the knot vector is
/// extended by `d` equally spaced knots beyond each end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub kind: TermKind,
    pub knots: Vec<Vec<f64>>,
    pub degree: usize,
    pub penalty_order: usize,
    pub constraint: Constraint,
}

impl SmoothTerm {
    pub fn univariate(knots: Vec<f64>, degree: usize) -> Self {
        SmoothTerm {
            kind: TermKind::Univariate,
            knots: vec![knots],
            degree,
            penalty_order: 2,
            constraint: Constraint::SumToZero,
        }
    }

    /// Equally spaced breakpoints on `[lo, hi]` giving `num_basis` functions.
    pub fn equally_spaced(lo: f64, hi: f64, num_basis: usize, degree: usize) -> Result<Vec<f64>> {
        if num_basis < degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "need at least {} basis functions for degree {degree}",
                degree + 1
            )));
        }
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        let intervals = num_basis - degree;
        Ok((0..=intervals)
            .map(|k| lo + (hi - lo) * k as f64 / intervals as f64)
            .collect())
    }

    pub fn num_basis(&self, margin: usize) -> usize {
        self.knots[margin].len() - 1 + self.degree
    }

    pub fn validate(&self) -> Result<()> {
        for k in &self.knots {
            if k.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "a margin needs at least {} knots including the extension (2 breakpoints)",
                    self.degree + 2
                )));
            }
            if k.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument(
                    "knots must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

fn extended_knots(breaks: &[f64], degree: usize) -> Vec<f64> {
    let first = breaks[1] - breaks[0];
    let last = breaks[breaks.len() - 1] - breaks[breaks.len() - 2];
    let mut t = Vec::with_capacity(breaks.len() + 2 * degree);
    for j in (1..=degree).rev() {
        t.push(breaks[0] - j as f64 * first);
    }
    t.extend_from_slice(breaks);
    for j in 1..=degree {
        t.push(breaks[breaks.len() - 1] + j as f64 * last);
    }
    t
}

/// Cox–de Boor evaluation of all basis functions at one point, written into
/// `out` (length `breaks.len() − 1 + degree`).
fn basis_row(x: f64, breaks: &[f64], degree: usize, t: &[f64], out: &mut [f64]) {
    let lo = breaks[0];
    let hi = breaks[breaks.len() - 1];
    let x = x.clamp(lo, hi);
    // interval of x among the breakpoints, closed on the right for the last one
    let k = match breaks.partition_point(|&b| b <= x) {
        0 => 0,
        p if p >= breaks.len() => breaks.len() - 2,
        p => p - 1,
    };
    let span = k + degree; // t[span] <= x < t[span + 1]
    let mut n = vec![0.0; degree + 1];
    n[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for (r, v) in n.iter().enumerate() {
        out[span - degree + r] = *v;
    }
}

/// Evaluates the B-spline basis of a univariate margin. Values outside the
/// breakpoint range are clamped to it.
pub fn bspline_basis(x: &[f64], knots: &[f64], degree: usize) -> Result<Mat> {
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "empty input to bspline_basis".into(),
        ));
    }
    if knots.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fewer than {} knots for degree {degree}",
            degree + 2
        )));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "knots must be strictly increasing".into(),
        ));
    }
    let t = extended_knots(knots, degree);
    let k = knots.len() - 1 + degree;
    let mut out = Mat::zeros(x.len(), k);
    let mut row = vec![0.0; k];
    for (i, &xi) in x.iter().enumerate() {
        basis_row(xi, knots, degree, &t, &mut row);
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

/// `DᵀD` for the `order`-th forward-difference matrix `D`.
pub fn difference_penalty(num_basis: usize, order: usize) -> Result<Mat> {
    if order >= num_basis {
        return Err(Error::InvalidArgument(format!(
            "difference order {order} needs more than {num_basis} coefficients"
        )));
    }
    let mut d = Mat::identity(num_basis, num_basis);
    for _ in 0..order {
        let r = d.nrows();
        d = Mat::from_fn(r - 1, num_basis, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    Ok(d.transpose() * d)
}

/// Row-wise Kronecker product; column `j·k₂ + l` is `B1[:, j] · B2[:, l]`.
pub fn tensor_basis(b1: &Mat, b2: &Mat) -> Result<Mat> {
    if b1.nrows() != b2.nrows() {
        return Err(Error::Shape(format!(
            "tensor margins have {} and {} rows",
            b1.nrows(),
            b2.nrows()
        )));
    }
    let (k1, k2) = (b1.ncols(), b2.ncols());
    Ok(Mat::from_fn(b1.nrows(), k1 * k2, |i, c| {
        b1[(i, c / k2)] * b2[(i, c % k2)]
    }))
}

/// Marginal penalties of a tensor term, `(P₁ ⊗ I, I ⊗ P₂)`, each to be
/// weighted by its own smoothing parameter.
pub fn tensor_penalties(p1: &Mat, p2: &Mat) -> (Mat, Mat) {
    let i1 = Mat::identity(p1.nrows(), p1.nrows());
    let i2 = Mat::identity(p2.nrows(), p2.nrows());
    (kron(p1, &i2), kron(&i1, p2))
}

/// `ξ_a (P₁ ⊗ I) + ξ_b (I ⊗ P₂)`.
pub fn tensor_penalty(p1: &Mat, p2: &Mat, xi_a: f64, xi_b: f64) -> Mat {
    let (a, b) = tensor_penalties(p1, p2);
    a * xi_a + b * xi_b
}

/// Linear map from the constrained coefficients back to the original basis
/// coefficients: `B̃ = B T`, `P̃ = Tᵀ P T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumToZero {
    pub transform: Mat,
}

impl SumToZero {
    /// Householder complement of the column-mean vector of `b`.
    pub fn from_basis(b: &Mat) -> Self {
        let k = b.ncols();
        let n = b.nrows().max(1) as f64;
        let means: Vec<f64> = (0..k).map(|j| b.column(j).sum() / n).collect();
        let norm = means.iter().map(|m| m * m).sum::<f64>().sqrt();
        let u: Vec<f64> = if norm > 0.0 {
            means.iter().map(|m| m / norm).collect()
        } else {
            (0..k).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect()
        };
        let mut v = u.clone();
        v[0] += if u[0] >= 0.0 { 1.0 } else { -1.0 };
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        // H = I − 2vvᵀ/vᵀv; H e₁ ∝ u, remaining columns span u⊥.
        let transform = Mat::from_fn(k, k - 1, |i, j| {
            let col = j + 1;
            let id = if i == col { 1.0 } else { 0.0 };
            id - 2.0 * v[i] * v[col] / vtv
        });
        SumToZero { transform }
    }

    pub fn apply(&self, b: &Mat) -> Mat {
        b * &self.transform
    }

    pub fn apply_penalty(&self, p: &Mat) -> Mat {
        self.transform.transpose() * p * &self.transform
    }
}

/// Reparameterizes `b` so each column has mean zero over its rows.
pub fn apply_sum_to_zero(b: &Mat) -> Result<(Mat, SumToZero)> {
    if b.ncols() < 2 {
        return Err(Error::InvalidArgument(
            "sum-to-zero needs at least two columns".into(),
        ));
    }
    let record = SumToZero::from_basis(b);
    Ok((record.apply(b), record))
}
