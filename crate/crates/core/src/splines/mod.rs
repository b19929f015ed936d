//! Penalized B-spline bases and the structured design matrix.
//!
//! Univariate smooths are cubic P-splines with a second-order difference
//! penalty; bivariate smooths are tensor products of two such margins with
//! one smoothing parameter per marginal penalty. Every smooth is
//! reparameterized to have zero column means over the training rows so that
//! it stays identifiable next to the intercept.

mod basis;
mod design;

pub use basis::{
    apply_sum_to_zero, bspline_basis, difference_penalty, tensor_basis, tensor_penalties,
    tensor_penalty, Constraint, SmoothTerm, SumToZero, TermKind,
};
pub use design::{
    build_design, collect_rows, feature_ranges, DesignBasis, DesignMatrices, DesignSpec, Feature,
    FeatureRow, FittedTerm, PenaltyBlock, PenaltyComponent, StructuredPenalty, TermSpec,
};
