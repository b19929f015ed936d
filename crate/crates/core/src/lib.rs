//! Forecasting weekly zero-inflated count panels on a graph of regions.
//!
//! The model fuses a structured additive predictor (penalized B-splines,
//! group dummies and an exposure offset) with node embeddings from an
//! edge-conditioned graph network. The embeddings are projected onto the
//! orthogonal complement of the structured design so that structured effects
//! stay identifiable. Training minimizes a penalized zero-inflated negative
//! log-likelihood with RMSprop; uncertainty comes from the structured weight
//! covariance, deep ensembles, and the predictive distribution itself.
//!
//! Module map:
//! - [`panel`]: case panel ingestion, onset-delay imputation, weekly aggregation
//! - [`networks`]: dyadic data and derived Gini / MDS features
//! - [`splines`]: B-spline bases, difference penalties, design assembly
//! - [`graphnet`]: edge-conditioned convolutions and the embedding network
//! - [`orthogonalization`]: projection onto the complement of the design
//! - [`distheads`]: zero-inflated count distributions and link functions
//! - [`trainer`]: penalized likelihood, RMSprop, fitting, ensembles, covariance
//! - [`evalharness`]: expanding-window backtests, baselines, calibration
//! - [`synthgen`]: synthetic scenarios with known ground truth

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distheads;
pub mod error;
pub mod evalharness;
pub mod graphnet;
pub mod linalg;
pub mod networks;
pub mod orthogonalization;
pub mod panel;
pub mod splines;
pub mod synthgen;
pub mod trainer;

pub use distheads::{Family, ZeroInflatedParams};
pub use error::{Error, ErrorKind, Result};
pub use evalharness::{FoldPlan, ForecastRecord};
pub use graphnet::{GnnConfig, GnnParameters, GraphInput, NodeEmbeddings};
pub use networks::{DerivedFeatures, NetworkStack};
pub use orthogonalization::ProjectionContext;
pub use panel::{CasePanel, District, Group, PanelObservation};
pub use splines::{DesignMatrices, SmoothTerm};
pub use trainer::{FitConfig, FitResult};

/// Dense matrix type used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector type used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
