use super::{FitResult, FoldData};
use crate::distheads::log_lik;
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetric_eigen_desc};
use crate::Mat;

/// Finite-difference step for the Hessian of the structured gradient.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Relative eigenvalue threshold below which inversion is refused.
pub const COVARIANCE_THRESHOLD: f64 = 1e-10;

/// Symmetrized central-difference Jacobian of `grad` at `theta`.
pub fn hessian_by_differences(
    grad: impl Fn(&[f64]) -> Result<Vec<f64>>,
    theta: &[f64],
    step: f64,
) -> Result<Mat> {
    let p = theta.len();
    let mut h = Mat::zeros(p, p);
    let mut x = theta.to_vec();
    for k in 0..p {
        x[k] = theta[k] + step;
        let gp = grad(&x)?;
        x[k] = theta[k] - step;
        let gm = grad(&x)?;
        x[k] = theta[k];
        if gp.len() != p || gm.len() != p {
            return Err(Error::Shape(
                "gradient length differs from the parameter count".into(),
            ));
        }
        for j in 0..p {
            h[(j, k)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Covariance of the structured weights with the graph part held fixed as
/// an offset: the inverse Hessian of the penalized objective,
/// `(Î + 2P)⁻¹` for the penalty `θᵀPθ`.
pub fn structured_covariance(fit: &FitResult, fold: &FoldData) -> Result<Mat> {
    spd_inverse(&structured_precision(fit, fold)?, COVARIANCE_THRESHOLD)
}

/// Generalized inverse of a precision whose null space is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedCovariance {
    pub covariance: Mat,
    /// Orthonormal columns spanning the dropped directions.
    pub null_space: Mat,
}

impl GeneralizedCovariance {
    /// Whether the functional `c` has no component along the dropped
    /// directions, so that `cᵀ Cov c` is its variance.
    pub fn estimable(&self, c: &[f64], tol: f64) -> bool {
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        (0..self.null_space.ncols()).all(|k| {
            let dot: f64 = self
                .null_space
                .column(k)
                .iter()
                .zip(c)
                .map(|(a, b)| a * b)
                .sum();
            dot.abs() <= tol * norm.max(f64::MIN_POSITIVE)
        })
    }
}

/// [`structured_covariance`] for designs where two terms share a
/// direction (e.g. two tensors over week both contain a linear week
/// trend). Eigenvalues at or below `COVARIANCE_THRESHOLD · λmax` are
/// dropped and their eigenvectors returned as the null space. Variances
/// are only meaningful for functionals orthogonal to it.
pub fn structured_covariance_generalized(
    fit: &FitResult,
    fold: &FoldData,
) -> Result<GeneralizedCovariance> {
    generalized_inverse(&structured_precision(fit, fold)?)
}

pub fn generalized_inverse(precision: &Mat) -> Result<GeneralizedCovariance> {
    let (values, vectors) = symmetric_eigen_desc(&((precision + precision.transpose()) * 0.5));
    let largest = values.first().copied().unwrap_or(0.0);
    if !(largest > 0.0) || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "structured precision is not positive".into(),
        ));
    }
    let keep = values
        .iter()
        .take_while(|&&v| v > COVARIANCE_THRESHOLD * largest)
        .count();
    let kept = vectors.columns(0, keep).into_owned();
    let inv = Mat::from_diagonal(&crate::Vector::from_iterator(
        keep,
        values[..keep].iter().map(|v| 1.0 / v),
    ));
    let cov = &kept * inv * kept.transpose();
    Ok(GeneralizedCovariance {
        covariance: (&cov + cov.transpose()) * 0.5,
        null_space: vectors.columns(keep, values.len() - keep).into_owned(),
    })
}

/// `Î + 2P` at the fitted structured weights.
pub fn structured_precision(fit: &FitResult, fold: &FoldData) -> Result<Mat> {
    if fit.kind.squared_error() {
        return Err(Error::InvalidArgument(
            "the graph-only baseline has no likelihood".into(),
        ));
    }
    if fit.design.n_columns != fold.basis.n_columns || fit.train_end_week != fold.train_end {
        return Err(Error::Shape(
            "fit and fold come from different designs".into(),
        ));
    }
    let rows = &fold.train;
    let fixed: Vec<f64> = fit
        .unstructured_contribution(&fit.row_set(rows.rows.clone())?)
        .iter()
        .zip(&rows.offset)
        .map(|(c, o)| c + o)
        .collect();
    let grad = |theta: &[f64]| -> Result<Vec<f64>> {
        let d: Vec<f64> = (0..rows.len())
            .map(|i| {
                let eta: f64 = rows.z.row(i).iter().zip(theta).map(|(a, b)| a * b).sum();
                -log_lik(fit.family, rows.rows[i].cases, eta + fixed[i], &fit.aux).d_log_mean
            })
            .collect();
        let g = rows.z.transpose() * nalgebra::DVector::from_vec(d);
        Ok(g.as_slice().to_vec())
    };
    let info = hessian_by_differences(grad, &fit.structured, HESSIAN_STEP)?;
    Ok(info + fold.penalty.matrix() * 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_toy_gives_inverse() {
        let a = Mat::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let grad = |t: &[f64]| -> Result<Vec<f64>> {
            let v = &a * nalgebra::DVector::from_column_slice(t);
            Ok(v.as_slice().to_vec())
        };
        let h = hessian_by_differences(grad, &[0.3, -1.0, 2.0], HESSIAN_STEP).unwrap();
        let cov = spd_inverse(&h, COVARIANCE_THRESHOLD).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        assert!((&cov - inv).abs().max() < 1e-6);
        assert!((&cov - cov.transpose()).abs().max() < 1e-10);
    }

    #[test]
    fn large_penalty_shrinks_block_variance() {
        let a = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mut last = f64::INFINITY;
        for xi in [1.0, 1e3, 1e6] {
            let mut pen = Mat::zeros(2, 2);
            pen[(1, 1)] = xi;
            let cov = spd_inverse(&(&a + pen * 2.0), COVARIANCE_THRESHOLD).unwrap();
            assert!(cov[(1, 1)] < last);
            last = cov[(1, 1)];
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn generalized_inverse_drops_shared_direction() {
        // columns 1 and 2 only enter through their sum
        let a = Mat::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let g = generalized_inverse(&a).unwrap();
        let expected =
            Mat::from_row_slice(3, 3, &[0.5, 0.0, 0.0, 0.0, 0.25, 0.25, 0.0, 0.25, 0.25]);
        assert!((&g.covariance - expected).abs().max() < 1e-12);
        assert_eq!(g.null_space.ncols(), 1);
        assert!(g.estimable(&[1.0, 0.0, 0.0], 1e-8));
        assert!(g.estimable(&[0.0, 1.0, 1.0], 1e-8));
        assert!(!g.estimable(&[0.0, 1.0, 0.0], 1e-8));
        // the variance of the estimable sum is that of the collapsed model
        let c = nalgebra::DVector::from_vec(vec![0.0, 1.0, 1.0]);
        assert!(((c.transpose() * &g.covariance * &c)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generalized_inverse_of_regular_matrix_is_the_inverse() {
        let a = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = generalized_inverse(&a).unwrap();
        assert_eq!(g.null_space.ncols(), 0);
        assert!((g.covariance - a.try_inverse().unwrap()).abs().max() < 1e-12);
    }

    #[test]
    fn singular_information_refused() {
        let h = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_inverse(&h, COVARIANCE_THRESHOLD),
            Err(Error::Singular { .. })
        ));
    }
}
