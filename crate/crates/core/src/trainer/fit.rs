use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{row_set, FitConfig, FoldData, ModelKind, Problem, RmsProp, RowSet};
use crate::distheads::{zi_moments, Family, LOG_MEAN_CLAMP};
use crate::error::{Error, Result};
use crate::graphnet::{
    gnn_forward_cached, update_running_stats, BnStats, GnnParameters, Mode, MIN_KERNEL_SCALE,
};
use crate::linalg::max_abs;
use crate::networks::DerivedFeatures;
use crate::panel::CasePanel;
use crate::splines::{collect_rows, DesignBasis, FeatureRow};
use crate::Mat;

/// One line of the training log. Losses are per-row means; for the
/// graph-only baseline they are mean squared errors of the counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    /// Penalized training objective (summed).
    pub objective: f64,
    /// `‖ZᵀŨ‖∞ / (‖Z‖∞‖U‖∞)` when tracking was requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub orthogonality: Option<f64>,
}

/// What prediction on new rows needs from the training projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSnapshot {
    pub rank: usize,
    /// `Q = Z_train · coef_map`.
    pub coef_map: Mat,
    /// `K = QᵀE_train` (rank × districts).
    pub loading: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub family: Family,
    pub config: FitConfig,
    pub seed: u64,
    pub train_end_week: i32,
    pub validation_week: i32,
    pub design: DesignBasis,
    pub column_map: Vec<(String, Range<usize>)>,
    pub structured: Vec<f64>,
    pub unstructured: Vec<f64>,
    pub aux: Vec<f64>,
    /// First auxiliary scalar (`χ` for ZIP, `log` dispersion otherwise).
    pub chi: f64,
    pub gnn: Option<GnnParameters>,
    /// Eval-mode node embeddings of the restored weights.
    pub embeddings: Option<Mat>,
    pub projection: ProjectionSnapshot,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
}

/// Predictive distribution of one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub log_mean: f64,
    pub lambda: f64,
    pub pi: f64,
    pub mean: f64,
    /// Zero for the graph-only baseline, which has no distribution.
    pub variance: f64,
}

/// A smooth term evaluated on a grid, with pointwise standard deviations
/// when a covariance was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEffect {
    pub values: Vec<f64>,
    pub sd: Option<Vec<f64>>,
}

fn snapshot(fold: &FoldData) -> ProjectionSnapshot {
    ProjectionSnapshot {
        rank: fold.projection.rank,
        coef_map: fold.projection.coef_map.clone(),
        loading: fold.loading.clone(),
    }
}

/// Trains one model on a fold.
pub fn fit(fold: &FoldData, config: &FitConfig, kind: ModelKind) -> Result<FitResult> {
    fit_with_observer(fold, config, kind, &mut |_| {})
}

/// [`fit`] calling `observer` after every epoch, so a caller can stream
/// the log (it is kept even if training later diverges).
pub fn fit_with_observer(
    fold: &FoldData,
    config: &FitConfig,
    kind: ModelKind,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<FitResult> {
    config.validate()?;
    if fold.validation.is_empty() {
        return Err(Error::InvalidArgument(
            "the validation week has no rows".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gnn = if kind.uses_gnn() {
        Some(GnnParameters::init_with_rng(
            &config.gnn,
            fold.graph.node_features.ncols(),
            fold.graph.n_channels(),
            config.seed,
            &mut rng,
        )?)
    } else {
        None
    };
    let mut problem = Problem::new(fold, kind, config.family, gnn)?;
    let l = problem.layout.clone();
    let mut theta = vec![0.0; l.total()];
    if let Some(r) = fold.basis.columns_of("intercept") {
        let cases: f64 = fold.train.rows.iter().map(|r| r.cases as f64).sum();
        let pop: f64 = fold.train.rows.iter().map(|r| r.population).sum();
        theta[r.start] = (cases.max(0.5) / pop).ln();
    }
    let s = config.unstructured_init_scale;
    for k in l.unstructured.clone() {
        theta[k] = if s > 0.0 {
            rng.random_range(-s..s)
        } else {
            0.0
        };
    }
    let scale_ranges: Vec<Range<usize>> = match &problem.gnn {
        Some(g) => {
            theta[l.gnn.clone()].copy_from_slice(&g.values);
            g.scale_ranges()
                .into_iter()
                .map(|r| r.start + l.gnn.start..r.end + l.gnn.start)
                .collect()
        }
        None => vec![],
    };

    let n_train = fold.train.len() as f64;
    let n_val = fold.validation.len() as f64;
    let val_loss = |p: &Problem<'_>, th: &[f64]| -> Result<f64> {
        p.evaluate(th, &fold.validation, Mode::Eval, None, false, false)
            .map(|e| e.nll / n_val)
    };
    let running =
        |p: &Problem<'_>| -> Vec<BnStats> { p.gnn.as_ref().map_or(vec![], |g| g.running.clone()) };

    let mut best_val = val_loss(&problem, &theta)?;
    let mut best_epoch = 0;
    let mut best_theta = theta.clone();
    let mut best_running = running(&problem);
    let mut opt = RmsProp::new(
        theta.len(),
        config.learning_rate,
        config.rmsprop_decay,
        config.rmsprop_epsilon,
    );
    let mut log = Vec::new();
    let mut last_finite = None;
    let mut stopped_early = false;
    let z_norm = max_abs(&fold.train.z);

    for epoch in 1..=config.max_epochs {
        let diverged = |e: Error| match e {
            Error::Numerical(_) => Error::Divergence { epoch, last_finite },
            other => other,
        };
        let ev = problem
            .evaluate(&theta, &fold.train, Mode::Train, Some(&mut rng), true, true)
            .map_err(diverged)?;
        let orthogonality = match (&ev.embeddings, config.track_orthogonality) {
            (Some(u), true) => {
                let tilde = problem.projected_embeddings(u);
                let denom = z_norm * max_abs(&problem.expanded_embeddings(u));
                Some(max_abs(&(fold.train.z.transpose() * tilde)) / denom.max(f64::MIN_POSITIVE))
            }
            _ => None,
        };
        if let (Some(g), Some(cache)) = (problem.gnn.as_mut(), &ev.cache) {
            update_running_stats(g, cache);
        }
        opt.step(&mut theta, ev.grad.as_deref().expect("gradient requested"))?;
        for r in &scale_ranges {
            for s in &mut theta[r.clone()] {
                *s = s.max(MIN_KERNEL_SCALE);
            }
        }
        let val = val_loss(&problem, &theta).map_err(diverged)?;
        let record = EpochRecord {
            epoch,
            train_nll: ev.nll / n_train,
            val_nll: val,
            objective: ev.objective(),
            orthogonality,
        };
        observer(&record);
        log.push(record);
        last_finite = Some(epoch);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_theta.copy_from_slice(&theta);
            best_running = running(&problem);
        } else if epoch - best_epoch >= config.patience {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    let theta = best_theta;
    let mut embeddings = None;
    let gnn = match problem.gnn.take() {
        Some(mut g) => {
            g.running = best_running;
            g.values.copy_from_slice(&theta[l.gnn.clone()]);
            let (emb, _) = gnn_forward_cached::<ChaCha8Rng>(&fold.graph, &g, Mode::Eval, None)?;
            embeddings = Some(emb.u);
            Some(g)
        }
        None => None,
    };
    let aux = theta[l.aux.clone()].to_vec();
    Ok(FitResult {
        kind,
        family: config.family,
        config: config.clone(),
        seed: config.seed,
        train_end_week: fold.train_end,
        validation_week: fold.validation_week,
        design: fold.basis.clone(),
        column_map: fold.basis.column_map.clone(),
        structured: theta[l.structured.clone()].to_vec(),
        unstructured: theta[l.unstructured.clone()].to_vec(),
        chi: aux.first().copied().unwrap_or(f64::NAN),
        aux,
        gnn,
        embeddings,
        projection: snapshot(fold),
        log,
        best_epoch,
        best_val_nll: best_val,
        stopped_early,
    })
}

impl FitResult {
    /// Flat parameter vector in the layout used during training.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.structured.clone();
        t.extend_from_slice(&self.unstructured);
        t.extend_from_slice(&self.aux);
        if let Some(g) = &self.gnn {
            t.extend_from_slice(&g.values);
        }
        t
    }

    /// Graph contribution to the predictor of each row, with the training
    /// projection applied.
    pub fn unstructured_contribution(&self, rows: &RowSet) -> Vec<f64> {
        let Some(u) = &self.embeddings else {
            return vec![0.0; rows.len()];
        };
        let v: Vec<f64> = (0..u.nrows())
            .map(|d| {
                u.row(d)
                    .iter()
                    .zip(&self.unstructured)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let kv = self
            .kind
            .projects()
            .then(|| &self.projection.loading * nalgebra::DVector::from_column_slice(&v));
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

    pub fn row_set(&self, rows: Vec<FeatureRow>) -> Result<RowSet> {
        row_set(&self.design, &self.projection.coef_map, rows)
    }

    /// Predictor `η` (without the offset) of every row.
    pub fn linear_predictor(&self, rows: &RowSet) -> Vec<f64> {
        let c = self.unstructured_contribution(rows);
        (0..rows.len())
            .map(|i| {
                rows.z
                    .row(i)
                    .iter()
                    .zip(&self.structured)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + c[i]
            })
            .collect()
    }

    pub fn predict_row_set(&self, rows: &RowSet) -> Vec<Prediction> {
        self.linear_predictor(rows)
            .into_iter()
            .zip(&rows.offset)
            .map(|(eta, o)| self.prediction(eta + o))
            .collect()
    }

    pub fn prediction(&self, log_mean: f64) -> Prediction {
        if self.kind.squared_error() {
            let mean = log_mean.clamp(-LOG_MEAN_CLAMP, LOG_MEAN_CLAMP).exp();
            return Prediction {
                log_mean,
                lambda: mean,
                pi: 0.0,
                mean,
                variance: 0.0,
            };
        }
        let p = self.family.params(log_mean, &self.aux);
        let (mean, variance) = zi_moments(&p, self.family.count_family());
        Prediction {
            log_mean,
            lambda: p.lambda,
            pi: p.pi,
            mean,
            variance,
        }
    }

    pub fn predict_rows(&self, rows: &[FeatureRow]) -> Result<Vec<Prediction>> {
        Ok(self.predict_row_set(&self.row_set(rows.to_vec())?))
    }

    /// Predictions for every (district, group) cell of `week`.
    pub fn predict_week(
        &self,
        panel: &CasePanel,
        features: &DerivedFeatures,
        week: i32,
    ) -> Result<(Vec<FeatureRow>, Vec<Prediction>)> {
        let rows = collect_rows(panel, features, [week])?;
        let preds = self.predict_rows(&rows)?;
        Ok((rows, preds))
    }

    /// Partial effect of a smooth term at per-margin values.
    pub fn term_effect(
        &self,
        name: &str,
        margins: &[Vec<f64>],
        covariance: Option<&Mat>,
    ) -> Result<TermEffect> {
        let term = self
            .design
            .term(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no smooth term named {name:?}")))?;
        let b = term.basis(margins)?;
        let cols = term.columns.clone();
        let coef = &self.structured[cols.clone()];
        let values = (0..b.nrows())
            .map(|i| b.row(i).iter().zip(coef).map(|(a, c)| a * c).sum())
            .collect();
        let sd = match covariance {
            None => None,
            Some(cov) => {
                if cov.nrows() != self.structured.len() || cov.ncols() != self.structured.len() {
                    return Err(Error::Shape(
                        "covariance does not match the structured weights".into(),
                    ));
                }
                let block = cov
                    .view((cols.start, cols.start), (cols.len(), cols.len()))
                    .into_owned();
                let bc = &b * &block;
                Some(
                    (0..b.nrows())
                        .map(|i| bc.row(i).dot(&b.row(i)).max(0.0).sqrt())
                        .collect(),
                )
            }
        };
        Ok(TermEffect { values, sd })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FitResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FitResult::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberFailure {
    pub seed: u64,
    pub message: String,
}

/// Independently initialized fits of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<FitResult>,
    pub failures: Vec<MemberFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    /// Mean of the member means.
    pub mean: f64,
    /// Standard error of the member means.
    pub epistemic_sd: f64,
    /// Mean of the member variances.
    pub aleatoric_variance: f64,
    /// Aleatoric plus between-member variance.
    pub variance: f64,
    pub pi: f64,
    pub lambda: f64,
}

/// `config.ensemble_size` fits with seeds `seed, seed+1, …`.
pub fn fit_ensemble(fold: &FoldData, config: &FitConfig, kind: ModelKind) -> Result<Ensemble> {
    let seeds: Vec<u64> = (0..config.ensemble_size as u64)
        .map(|m| config.seed + m)
        .collect();
    fit_ensemble_with_seeds(fold, config, kind, &seeds)
}

/// Members run concurrently; results are kept in seed order. Failed
/// members are recorded, and at least two survivors are required.
pub fn fit_ensemble_with_seeds(
    fold: &FoldData,
    config: &FitConfig,
    kind: ModelKind,
    seeds: &[u64],
) -> Result<Ensemble> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an ensemble needs at least two members, got {}",
            seeds.len()
        )));
    }
    let outcomes: Vec<(u64, Result<FitResult>)> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = FitConfig {
                seed,
                ..config.clone()
            };
            (seed, fit(fold, &cfg, kind))
        })
        .collect();
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(f) => members.push(f),
            Err(e) => failures.push(MemberFailure {
                seed,
                message: e.to_string(),
            }),
        }
    }
    if members.len() < 2 {
        let detail: Vec<String> = failures
            .iter()
            .map(|f| format!("seed {}: {}", f.seed, f.message))
            .collect();
        return Err(Error::Numerical(format!(
            "only {} of {} ensemble members converged ({})",
            members.len(),
            seeds.len(),
            detail.join("; ")
        )));
    }
    Ok(Ensemble { members, failures })
}

impl Ensemble {
    pub fn predict_rows(&self, rows: &[FeatureRow]) -> Result<Vec<EnsemblePrediction>> {
        let m = self.members.len();
        if m < 2 {
            return Err(Error::InvalidArgument(
                "epistemic uncertainty needs at least two members".into(),
            ));
        }
        let per_member = self
            .members
            .iter()
            .map(|f| f.predict_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        let mf = m as f64;
        Ok((0..rows.len())
            .map(|i| {
                let means: Vec<f64> = per_member.iter().map(|p| p[i].mean).collect();
                let mean = means.iter().sum::<f64>() / mf;
                // shifted by the first member so identical members give exactly 0
                let d: Vec<f64> = means.iter().map(|x| x - means[0]).collect();
                let (s1, s2) = (d.iter().sum::<f64>(), d.iter().map(|x| x * x).sum::<f64>());
                let between = ((s2 - s1 * s1 / mf) / (mf - 1.0)).max(0.0);
                let aleatoric = per_member.iter().map(|p| p[i].variance).sum::<f64>() / mf;
                EnsemblePrediction {
                    mean,
                    epistemic_sd: (between / mf).sqrt(),
                    aleatoric_variance: aleatoric,
                    variance: aleatoric + between,
                    pi: per_member.iter().map(|p| p[i].pi).sum::<f64>() / mf,
                    lambda: per_member.iter().map(|p| p[i].lambda).sum::<f64>() / mf,
                }
            })
            .collect())
    }
}
