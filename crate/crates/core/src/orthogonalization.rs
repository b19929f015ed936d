//! Projection of latent features onto the orthogonal complement of the
//! structured design's column space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Mat;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis of `col(Z)` for the training design `Z`.
///
/// `coef_map` expresses the basis as a linear function of design rows:
/// `Q = Z · coef_map` on the training rows. Applying it to the design rows of
/// unseen observations extends the same projection to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionContext {
    #[serde(skip)]
    q: Mat,
    pub rank: usize,
    pub source_columns: usize,
    pub coef_map: Mat,
}

/// Rank-revealing orthonormalization of `z` (thin QR, then SVD of `R`).
pub fn build_projection(z: &Mat) -> Result<ProjectionContext> {
    let (n, p) = z.shape();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "projection needs at least one row".into(),
        ));
    }
    let (q0, r0) = if n >= p {
        let qr = z.clone().qr();
        (qr.q(), qr.r())
    } else {
        // wide design: column space is at most n-dimensional
        (Mat::identity(n, n), z.clone())
    };
    let svd = r0.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| s_max > 0.0 && s[k] > RANK_TOLERANCE * s_max)
        .collect();
    let rank = keep.len();
    let mut u_r = Mat::zeros(u.nrows(), rank);
    let mut coef_map = Mat::zeros(p, rank);
    for (dst, &k) in keep.iter().enumerate() {
        u_r.set_column(dst, &u.column(k));
        let inv = 1.0 / s[k];
        for row in 0..p {
            coef_map[(row, dst)] = v_t[(k, row)] * inv;
        }
    }
    Ok(ProjectionContext {
        q: q0 * u_r,
        rank,
        source_columns: p,
        coef_map,
    })
}

impl ProjectionContext {
    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn n_rows(&self) -> usize {
        self.q.nrows()
    }

    /// Recomputes `Q` after deserialization from the training design.
    pub fn restore_basis(&mut self, z_train: &Mat) -> Result<()> {
        if z_train.ncols() != self.source_columns {
            return Err(Error::Shape(
                "design columns do not match the projection".into(),
            ));
        }
        self.q = z_train * &self.coef_map;
        Ok(())
    }

    /// `U − Q(QᵀU)`.
    pub fn project_out(&self, u_rows: &Mat) -> Result<Mat> {
        if u_rows.nrows() != self.q.nrows() {
            return Err(Error::Shape(format!(
                "{} latent rows but the projection was built on {} rows",
                u_rows.nrows(),
                self.q.nrows()
            )));
        }
        Ok(u_rows - &self.q * (self.q.transpose() * u_rows))
    }

    /// Coordinates of `U_train` in the basis, `QᵀU_train`.
    pub fn loading(&self, u_train_rows: &Mat) -> Result<Mat> {
        if u_train_rows.nrows() != self.q.nrows() {
            return Err(Error::Shape(
                "latent rows do not match the projection".into(),
            ));
        }
        Ok(self.q.transpose() * u_train_rows)
    }

    /// Projection of unseen rows: `U_new − (Z_new · coef_map) · loading`.
    pub fn project_new(&self, z_new: &Mat, u_new_rows: &Mat, loading: &Mat) -> Result<Mat> {
        if z_new.ncols() != self.source_columns || z_new.nrows() != u_new_rows.nrows() {
            return Err(Error::Shape(
                "new design and latent rows are inconsistent".into(),
            ));
        }
        if loading.nrows() != self.rank || loading.ncols() != u_new_rows.ncols() {
            return Err(Error::Shape("loading has the wrong shape".into()));
        }
        Ok(u_new_rows - (z_new * &self.coef_map) * loading)
    }
}

/// Free-function form of [`ProjectionContext::project_out`].
pub fn project_out(u_rows: &Mat, ctx: &ProjectionContext) -> Result<Mat> {
    ctx.project_out(u_rows)
}
