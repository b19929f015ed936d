//! Penalized maximum-likelihood training of the fused model, deep ensembles
//! and the structured-weight covariance.
//!
//! All trainable quantities are packed into one vector laid out as
//! `[structured | unstructured head | auxiliary | graph network]`. Training
//! is full batch: one RMSprop step per epoch over every training row.

mod covariance;
mod fit;

use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distheads::{log_lik, pairwise_sum, Family, LOG_MEAN_CLAMP};
use crate::error::{Error, Result};
use crate::graphnet::{
    gnn_backward, gnn_forward_cached, ForwardCache, GnnConfig, GnnParameters, GraphInput, Mode,
};
use crate::networks::DerivedFeatures;
use crate::orthogonalization::{build_projection, ProjectionContext};
use crate::panel::CasePanel;
use crate::splines::{
    collect_rows, DesignBasis, DesignSpec, Feature, FeatureRow, StructuredPenalty, TermSpec,
};
use crate::splines::{Constraint, TermKind};
use crate::Mat;

pub use covariance::{
    generalized_inverse, hessian_by_differences, structured_covariance,
    structured_covariance_generalized, structured_precision, GeneralizedCovariance,
};
pub use fit::{
    fit, fit_ensemble, fit_ensemble_with_seeds, fit_with_observer, load_checkpoint, Ensemble,
    EnsemblePrediction, EpochRecord, FitResult, MemberFailure, Prediction, ProjectionSnapshot,
    TermEffect,
};

/// Which parts of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Structured predictor plus projected graph embeddings.
    Hybrid,
    /// Structured predictor only.
    StructuredOnly,
    /// Graph embeddings with a small linear head, fitted by squared error
    /// of the counts.
    GnnOnly,
}

impl ModelKind {
    pub fn uses_gnn(self) -> bool {
        !matches!(self, ModelKind::StructuredOnly)
    }

    pub fn projects(self) -> bool {
        matches!(self, ModelKind::Hybrid)
    }

    pub fn squared_error(self) -> bool {
        matches!(self, ModelKind::GnnOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hybrid => "hybrid",
            ModelKind::StructuredOnly => "structured_only",
            ModelKind::GnnOnly => "gnn_only",
        }
    }
}

/// Design of the graph-only baseline: intercept, group dummies and a linear
/// effect of the log lagged rate.
pub fn gnn_only_design() -> DesignSpec {
    DesignSpec {
        intercept: true,
        group_dummies: true,
        terms: vec![TermSpec {
            name: "lagged_rate_linear".into(),
            kind: TermKind::Univariate,
            features: vec![Feature::LaggedRate],
            num_basis: vec![2],
            degree: 1,
            penalty_order: 1,
            smoothing: vec![0.0],
            constraint: Constraint::SumToZero,
        }],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub family: Family,
    pub ensemble_size: usize,
    /// Half-width of the uniform initialization of the unstructured head.
    pub unstructured_init_scale: f64,
    /// Record `‖ZᵀŨ‖∞ / (‖Z‖∞‖U‖∞)` for every epoch.
    pub track_orthogonality: bool,
    pub design: DesignSpec,
    pub gnn: GnnConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            max_epochs: 2000,
            patience: 50,
            seed: 0,
            family: Family::Zip,
            ensemble_size: 10,
            unstructured_init_scale: 0.05,
            track_orthogonality: false,
            design: DesignSpec::default(),
            gnn: GnnConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::InvalidArgument(
                "invalid RMSprop decay or epsilon".into(),
            ));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "epochs and patience must be positive".into(),
            ));
        }
        if self.ensemble_size == 0 {
            return Err(Error::InvalidArgument(
                "ensemble size must be at least 1".into(),
            ));
        }
        if !(self.unstructured_init_scale >= 0.0) {
            return Err(Error::InvalidArgument(
                "init scale must be non-negative".into(),
            ));
        }
        for t in &self.design.terms {
            if t.smoothing.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "term {}: smoothing must be >= 0",
                    t.name
                )));
            }
        }
        self.gnn.validate()
    }
}

/// RMSprop state: `v ← ρv + (1−ρ)g²`, `θ ← θ − α g / (√v + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(n: usize, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        RmsProp {
            learning_rate,
            decay,
            epsilon,
            mean_square: vec![0.0; n],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.mean_square.len() || grad.len() != theta.len() {
            return Err(Error::Shape(
                "optimizer state and parameters differ in length".into(),
            ));
        }
        for ((t, &g), v) in theta.iter_mut().zip(grad).zip(self.mean_square.iter_mut()) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *t -= self.learning_rate * g / (v.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Position of each parameter group in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub structured: Range<usize>,
    pub unstructured: Range<usize>,
    pub aux: Range<usize>,
    pub gnn: Range<usize>,
}

impl ParamLayout {
    pub fn new(n_structured: usize, n_unstructured: usize, n_aux: usize, n_gnn: usize) -> Self {
        let s = 0..n_structured;
        let u = s.end..s.end + n_unstructured;
        let a = u.end..u.end + n_aux;
        let g = a.end..a.end + n_gnn;
        ParamLayout {
            structured: s,
            unstructured: u,
            aux: a,
            gnn: g,
        }
    }

    pub fn total(&self) -> usize {
        self.gnn.end
    }
}

/// Rows of one set of weeks with their design, offsets and projection rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSet {
    pub rows: Vec<FeatureRow>,
    pub z: Mat,
    pub offset: Vec<f64>,
    /// `Z · coef_map`, the projection basis evaluated on these rows (equal
    /// to `Q` on the training rows).
    pub q: Mat,
}

impl RowSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn counts(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.cases).collect()
    }
}

/// Everything a fit needs for one expanding-window fold: the design learned
/// on the training weeks, the projection, and the validation rows.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub basis: DesignBasis,
    pub penalty: StructuredPenalty,
    pub graph: GraphInput,
    pub n_districts: usize,
    pub projection: ProjectionContext,
    /// `K = QᵀE`, with `E` the row-to-district expansion of the training rows.
    pub loading: Mat,
    pub train: RowSet,
    pub validation: RowSet,
    pub train_end: i32,
    pub validation_week: i32,
}

impl FoldData {
    /// Training rows are all panel weeks up to `train_end` that have a lag.
    pub fn new(
        panel: &CasePanel,
        features: &DerivedFeatures,
        graph: GraphInput,
        spec: &DesignSpec,
        train_end: i32,
        validation_week: i32,
    ) -> Result<Self> {
        if validation_week <= train_end {
            return Err(Error::InvalidArgument(
                "validation week must follow the training weeks".into(),
            ));
        }
        if !panel.contains_week(train_end) || !panel.contains_week(validation_week) {
            return Err(Error::InvalidArgument(format!(
                "weeks {train_end}/{validation_week} outside the panel {}..={}",
                panel.week_min, panel.week_max
            )));
        }
        if graph.n_nodes() != panel.n_districts() {
            return Err(Error::Shape(
                "graph and panel disagree on the district count".into(),
            ));
        }
        let rows = collect_rows(panel, features, panel.week_min..=train_end)?;
        if let Some(r) = rows.iter().find(|r| r.week > train_end) {
            return Err(Error::InvalidData(format!(
                "training row from week {} leaks past {train_end}",
                r.week
            )));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "no training rows with a lagged rate".into(),
            ));
        }
        let basis = DesignBasis::fit(spec, &rows)?;
        let z = basis.matrix(&rows)?;
        let projection = build_projection(&z)?;
        let n = panel.n_districts();
        let q = projection.q().clone();
        let mut loading = Mat::zeros(projection.rank, n);
        for (i, r) in rows.iter().enumerate() {
            for k in 0..projection.rank {
                loading[(k, r.district)] += q[(i, k)];
            }
        }
        let offset = rows.iter().map(FeatureRow::log_population).collect();
        let train = RowSet { rows, z, offset, q };
        let mut fold = FoldData {
            penalty: basis.penalty(),
            basis,
            graph,
            n_districts: n,
            projection,
            loading,
            train,
            validation: RowSet {
                rows: vec![],
                z: Mat::zeros(0, 0),
                offset: vec![],
                q: Mat::zeros(0, 0),
            },
            train_end,
            validation_week,
        };
        fold.validation = fold.rows_for_weeks(panel, features, [validation_week])?;
        Ok(fold)
    }

    /// Rows of later weeks evaluated with the training design and projection.
    pub fn rows_for_weeks(
        &self,
        panel: &CasePanel,
        features: &DerivedFeatures,
        weeks: impl IntoIterator<Item = i32>,
    ) -> Result<RowSet> {
        let rows = collect_rows(panel, features, weeks)?;
        row_set(&self.basis, &self.projection.coef_map, rows)
    }
}

pub(crate) fn row_set(
    basis: &DesignBasis,
    coef_map: &Mat,
    rows: Vec<FeatureRow>,
) -> Result<RowSet> {
    let z = basis.matrix(&rows)?;
    let q = &z * coef_map;
    let offset = rows.iter().map(FeatureRow::log_population).collect();
    Ok(RowSet { rows, z, offset, q })
}

/// Objective value, optionally with its gradient over the flat vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Summed negative log-likelihood (squared error for the graph-only
    /// baseline).
    pub nll: f64,
    pub penalty: f64,
    pub grad: Option<Vec<f64>>,
    pub cache: Option<ForwardCache>,
    /// Node embeddings used by this evaluation.
    pub embeddings: Option<Mat>,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.nll + self.penalty
    }
}

/// The penalized objective of one model kind on one fold.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub fold: &'a FoldData,
    pub kind: ModelKind,
    pub family: Family,
    pub layout: ParamLayout,
    /// Architecture and batch-norm statistics; its `values` are ignored in
    /// favour of the graph block of the parameter vector.
    pub gnn: Option<GnnParameters>,
}

/// Width of the unstructured head (the embedding dimension).
pub fn head_width(kind: ModelKind, gnn: &GnnConfig) -> usize {
    if kind.uses_gnn() {
        gnn.embedding_dim()
    } else {
        0
    }
}

impl<'a> Problem<'a> {
    pub fn new(
        fold: &'a FoldData,
        kind: ModelKind,
        family: Family,
        gnn: Option<GnnParameters>,
    ) -> Result<Self> {
        if kind.uses_gnn() != gnn.is_some() {
            return Err(Error::InvalidArgument(format!(
                "{} model and graph network presence disagree",
                kind.name()
            )));
        }
        let width = gnn.as_ref().map_or(0, |g| g.config.embedding_dim());
        let n_aux = if kind.squared_error() {
            0
        } else {
            family.n_aux()
        };
        let layout = ParamLayout::new(
            fold.basis.n_columns,
            width,
            n_aux,
            gnn.as_ref().map_or(0, GnnParameters::n_params),
        );
        Ok(Problem {
            fold,
            kind,
            family,
            layout,
            gnn,
        })
    }

    /// Unstructured contribution per row: `(E v)_i − q_i · (K v)` with
    /// `v = U θ_u` (no projection term for the graph-only baseline).
    fn unstructured(&self, rows: &RowSet, v: &[f64]) -> Vec<f64> {
        let kv = if self.kind.projects() {
            let vv = nalgebra::DVector::from_column_slice(v);
            Some(&self.fold.loading * vv)
        } else {
            None
        };
        rows.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut c = v[r.district];
                if let Some(kv) = &kv {
                    c -= rows
                        .q
                        .row(i)
                        .iter()
                        .zip(kv.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                c
            })
            .collect()
    }

    /// Loss per row and `∂loss/∂log-mean`, `∂loss/∂aux`.
    fn row_losses(
        &self,
        rows: &RowSet,
        eta: &[f64],
        aux: &[f64],
    ) -> (Vec<f64>, Vec<f64>, [f64; 2]) {
        let n = rows.len();
        let mut losses = Vec::with_capacity(n);
        let mut d_eta = Vec::with_capacity(n);
        let mut d_aux_rows: [Vec<f64>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for (i, r) in rows.rows.iter().enumerate() {
            let log_mean = eta[i] + rows.offset[i];
            if self.kind.squared_error() {
                let clamped = !(-LOG_MEAN_CLAMP..=LOG_MEAN_CLAMP).contains(&log_mean);
                let mu = log_mean.clamp(-LOG_MEAN_CLAMP, LOG_MEAN_CLAMP).exp();
                let resid = r.cases as f64 - mu;
                losses.push(resid * resid);
                d_eta.push(if clamped { 0.0 } else { -2.0 * resid * mu });
            } else {
                let ll = log_lik(self.family, r.cases, log_mean, aux);
                losses.push(-ll.value);
                d_eta.push(-ll.d_log_mean);
                d_aux_rows[0].push(-ll.d_aux[0]);
                d_aux_rows[1].push(-ll.d_aux[1]);
            }
        }
        let d_aux = [pairwise_sum(&d_aux_rows[0]), pairwise_sum(&d_aux_rows[1])];
        (losses, d_eta, d_aux)
    }

    /// Evaluates the objective on `rows`. The penalty is added only when
    /// `penalize` is set (the training objective). In train mode dropout is
    /// drawn from `rng` when given.
    pub fn evaluate(
        &self,
        theta: &[f64],
        rows: &RowSet,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
        penalize: bool,
        with_grad: bool,
    ) -> Result<Evaluation> {
        if theta.len() != self.layout.total() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, expected {}",
                theta.len(),
                self.layout.total()
            )));
        }
        let l = &self.layout;
        let th_s = &theta[l.structured.clone()];
        let th_u = &theta[l.unstructured.clone()];
        let aux = &theta[l.aux.clone()];
        let mut eta: Vec<f64> = (0..rows.len())
            .map(|i| rows.z.row(i).iter().zip(th_s).map(|(a, b)| a * b).sum())
            .collect();

        let mut gnn_state = None;
        if let Some(template) = &self.gnn {
            let mut params = template.clone();
            params.values.copy_from_slice(&theta[l.gnn.clone()]);
            let (emb, cache) = gnn_forward_cached(&self.fold.graph, &params, mode, rng)?;
            let v: Vec<f64> = (0..emb.u.nrows())
                .map(|d| emb.u.row(d).iter().zip(th_u).map(|(a, b)| a * b).sum())
                .collect();
            for (e, c) in eta.iter_mut().zip(self.unstructured(rows, &v)) {
                *e += c;
            }
            gnn_state = Some((params, emb.u, cache));
        }

        let (losses, d_eta, d_aux) = self.row_losses(rows, &eta, aux);
        let nll = pairwise_sum(&losses);
        let penalty = if penalize {
            self.fold.penalty.value(th_s)
        } else {
            0.0
        };
        if !nll.is_finite() || !penalty.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite objective (nll {nll}, penalty {penalty})"
            )));
        }
        if !with_grad {
            return Ok(Evaluation {
                nll,
                penalty,
                grad: None,
                cache: gnn_state.as_ref().map(|s| s.2.clone()),
                embeddings: gnn_state.map(|s| s.1),
            });
        }

        let mut grad = vec![0.0; theta.len()];
        let g_eta = nalgebra::DVector::from_column_slice(&d_eta);
        let g_s = rows.z.transpose() * &g_eta;
        grad[l.structured.clone()].copy_from_slice(g_s.as_slice());
        if penalize {
            self.fold
                .penalty
                .add_gradient(th_s, &mut grad[l.structured.clone()]);
        }
        for (k, idx) in l.aux.clone().enumerate() {
            grad[idx] = d_aux[k];
        }
        let mut cache_out = None;
        let mut emb_out = None;
        if let Some((params, u, cache)) = gnn_state {
            // ∂/∂v = Eᵀg − Kᵀ(qᵀg)
            let mut g_v = vec![0.0; u.nrows()];
            for (i, r) in rows.rows.iter().enumerate() {
                g_v[r.district] += d_eta[i];
            }
            if self.kind.projects() {
                let qtg = rows.q.transpose() * &g_eta;
                let kt = self.fold.loading.transpose() * qtg;
                for (gv, k) in g_v.iter_mut().zip(kt.iter()) {
                    *gv -= k;
                }
            }
            let g_v = nalgebra::DVector::from_vec(g_v);
            let g_u = u.transpose() * &g_v;
            grad[l.unstructured.clone()].copy_from_slice(g_u.as_slice());
            let th_u_v = nalgebra::DVector::from_column_slice(th_u);
            let d_u = &g_v * th_u_v.transpose();
            let g_net = gnn_backward(&self.fold.graph, &params, &cache, &d_u)?;
            grad[l.gnn.clone()].copy_from_slice(&g_net);
            cache_out = Some(cache);
            emb_out = Some(u);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        Ok(Evaluation {
            nll,
            penalty,
            grad: Some(grad),
            cache: cache_out,
            embeddings: emb_out,
        })
    }

    /// Projected row embeddings `Ũ = EU − Q(KU)` on the training rows.
    pub fn projected_embeddings(&self, u: &Mat) -> Mat {
        let rows = &self.fold.train;
        let mut out = Mat::from_fn(rows.len(), u.ncols(), |i, c| u[(rows.rows[i].district, c)]);
        if self.kind.projects() {
            out -= &rows.q * (&self.fold.loading * u);
        }
        out
    }

    /// Training-row embedding expansion `EU`.
    pub fn expanded_embeddings(&self, u: &Mat) -> Mat {
        let rows = &self.fold.train;
        Mat::from_fn(rows.len(), u.ncols(), |i, c| u[(rows.rows[i].district, c)])
    }
}

/// `zi_nll + Σ_j ξ_j θ_jᵀ P_j θ_j` on the training rows (train mode, no
/// dropout).
pub fn penalized_nll(problem: &Problem<'_>, theta: &[f64]) -> Result<f64> {
    problem
        .evaluate(theta, &problem.fold.train, Mode::Train, None, true, false)
        .map(|e| e.objective())
}
