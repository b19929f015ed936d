//! Expanding-window backtests, scores, baselines and calibration checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::distheads::Family;
use crate::error::{Error, Result};
use crate::graphnet::GraphInput;
use crate::networks::{DerivedFeatures, NetworkStack};
use crate::panel::{CasePanel, N_GROUPS};
use crate::splines::FeatureRow;
use crate::trainer::{self, gnn_only_design, Ensemble, FitConfig, FitResult, FoldData, ModelKind};

/// One backtest split: train through `train_end`, select on the next week,
/// score on the week after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_end: i32,
    pub validation_week: i32,
    pub test_week: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn new(folds: Vec<Fold>) -> Result<Self> {
        for f in &folds {
            if f.validation_week != f.train_end + 1 || f.test_week != f.train_end + 2 {
                return Err(Error::InvalidArgument(format!(
                    "fold {f:?} must validate one week and test two weeks after training"
                )));
            }
        }
        if folds.windows(2).any(|w| w[1].train_end <= w[0].train_end) {
            return Err(Error::InvalidArgument(
                "folds must be strictly increasing".into(),
            ));
        }
        Ok(FoldPlan { folds })
    }

    pub fn test_weeks(&self) -> Vec<i32> {
        self.folds.iter().map(|f| f.test_week).collect()
    }

    /// Every week a fold touches must lie in the panel, and the first
    /// training week needs a predecessor for its lag.
    pub fn check_panel(&self, panel: &CasePanel) -> Result<()> {
        for (k, f) in self.folds.iter().enumerate() {
            if f.train_end <= panel.week_min || !panel.contains_week(f.test_week) {
                return Err(Error::InvalidArgument(format!(
                    "fold {} (train to {}, test {}) outside the panel weeks {}..={}",
                    k + 1,
                    f.train_end,
                    f.test_week,
                    panel.week_min,
                    panel.week_max
                )));
            }
        }
        Ok(())
    }
}

/// `count` folds starting at `first_train_end`, `step` weeks apart.
pub fn make_folds(
    panel: &CasePanel,
    first_train_end: i32,
    step: i32,
    count: usize,
) -> Result<FoldPlan> {
    if step < 1 || count == 0 {
        return Err(Error::InvalidArgument(
            "need a positive step and at least one fold".into(),
        ));
    }
    let folds = (0..count as i32)
        .map(|k| {
            let train_end = first_train_end + k * step;
            Fold {
                train_end,
                validation_week: train_end + 1,
                test_week: train_end + 2,
            }
        })
        .collect();
    let plan = FoldPlan::new(folds)?;
    plan.check_panel(panel)?;
    Ok(plan)
}

/// Root mean squared error on the count scale.
pub fn rmse(predictions: &[f64], observations: &[f64]) -> Result<f64> {
    if predictions.len() != observations.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} observations",
            predictions.len(),
            observations.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty set".into()));
    }
    let sq: Vec<f64> = predictions
        .iter()
        .zip(observations)
        .map(|(p, o)| (p - o) * (p - o))
        .collect();
    Ok((crate::distheads::pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

/// Group means over districts at the last training week, broadcast to
/// every district; laid out in (district, group) order.
pub fn mean_baseline(panel: &CasePanel, fold: &Fold) -> Result<Vec<f64>> {
    if !panel.contains_week(fold.train_end) {
        return Err(Error::InvalidArgument(format!(
            "week {} outside the panel",
            fold.train_end
        )));
    }
    let n = panel.n_districts();
    let mut sums = [0.0; N_GROUPS];
    for o in panel.week_slice(fold.train_end) {
        sums[o.group] += o.cases as f64;
    }
    Ok((0..n * N_GROUPS)
        .map(|c| sums[c % N_GROUPS] / n as f64)
        .collect())
}

/// Each cell's count at the last training week.
pub fn persistence_baseline(panel: &CasePanel, fold: &Fold) -> Result<Vec<f64>> {
    if !panel.contains_week(fold.train_end) {
        return Err(Error::InvalidArgument(format!(
            "week {} outside the panel",
            fold.train_end
        )));
    }
    Ok(panel
        .week_slice(fold.train_end)
        .iter()
        .map(|o| o.cases as f64)
        .collect())
}

/// Forecast of one (district, group) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub week: i32,
    pub district: usize,
    pub group: usize,
    pub mean: f64,
    pub variance: f64,
    pub pi: f64,
    pub lambda: f64,
    /// `max(mean − 2 sd, 0)`.
    pub lower: f64,
    pub upper: f64,
    pub observed: u64,
    /// Standard error across ensemble members, when available.
    pub epistemic_sd: Option<f64>,
}

impl ForecastRecord {
    pub fn new(
        row: &FeatureRow,
        mean: f64,
        variance: f64,
        pi: f64,
        lambda: f64,
        epistemic_sd: Option<f64>,
    ) -> Result<Self> {
        if !(variance >= 0.0) || !mean.is_finite() {
            return Err(Error::Numerical(format!(
                "invalid forecast moments (mean {mean}, variance {variance})"
            )));
        }
        let sd = variance.sqrt();
        Ok(ForecastRecord {
            week: row.week,
            district: row.district,
            group: row.group,
            mean,
            variance,
            pi,
            lambda,
            lower: (mean - 2.0 * sd).max(0.0),
            upper: mean + 2.0 * sd,
            observed: row.cases,
            epistemic_sd,
        })
    }

    pub fn covers(&self) -> bool {
        let y = self.observed as f64;
        self.lower <= y && y <= self.upper
    }
}

/// Forecasts of a single fit for every cell of `week`.
pub fn fit_forecasts(
    fit: &FitResult,
    panel: &CasePanel,
    features: &DerivedFeatures,
    week: i32,
) -> Result<Vec<ForecastRecord>> {
    let (rows, preds) = fit.predict_week(panel, features, week)?;
    rows.iter()
        .zip(preds)
        .map(|(r, p)| ForecastRecord::new(r, p.mean, p.variance, p.pi, p.lambda, None))
        .collect()
}

/// Ensemble forecasts with between-member uncertainty.
pub fn ensemble_forecasts(
    ensemble: &Ensemble,
    panel: &CasePanel,
    features: &DerivedFeatures,
    week: i32,
) -> Result<Vec<ForecastRecord>> {
    let rows = crate::splines::collect_rows(panel, features, [week])?;
    let preds = ensemble.predict_rows(&rows)?;
    rows.iter()
        .zip(preds)
        .map(|(r, p)| {
            ForecastRecord::new(r, p.mean, p.variance, p.pi, p.lambda, Some(p.epistemic_sd))
        })
        .collect()
}

const FORECAST_HEADER: [&str; 11] = [
    "week",
    "district_id",
    "group_id",
    "mean",
    "variance",
    "pi",
    "lambda",
    "lower",
    "upper",
    "observed",
    "epistemic_sd",
];

pub fn write_forecasts_csv(path: impl AsRef<Path>, records: &[ForecastRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(FORECAST_HEADER)
        .map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.write_record([
            r.week.to_string(),
            r.district.to_string(),
            r.group.to_string(),
            r.mean.to_string(),
            r.variance.to_string(),
            r.pi.to_string(),
            r.lambda.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            r.observed.to_string(),
            r.epistemic_sd.map(|x| x.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ForecastCsvRow {
    week: i32,
    district_id: usize,
    group_id: usize,
    mean: f64,
    variance: f64,
    pi: f64,
    lambda: f64,
    lower: f64,
    upper: f64,
    observed: u64,
    epistemic_sd: Option<f64>,
}

pub fn read_forecasts_csv(path: impl AsRef<Path>) -> Result<Vec<ForecastRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize::<ForecastCsvRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::csv(path, e))?;
            Ok(ForecastRecord {
                week: row.week,
                district: row.district_id,
                group: row.group_id,
                mean: row.mean,
                variance: row.variance,
                pi: row.pi,
                lambda: row.lambda,
                lower: row.lower,
                upper: row.upper,
                observed: row.observed,
                epistemic_sd: row.epistemic_sd,
            })
        })
        .collect()
}

/// Models compared in a backtest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchModel {
    HybridZip,
    HybridZinb,
    StructuredOnly,
    GnnOnly,
    Mean,
    Persistence,
}

impl BenchModel {
    pub const ALL: [BenchModel; 6] = [
        BenchModel::HybridZip,
        BenchModel::HybridZinb,
        BenchModel::StructuredOnly,
        BenchModel::GnnOnly,
        BenchModel::Mean,
        BenchModel::Persistence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchModel::HybridZip => "hybrid_zip",
            BenchModel::HybridZinb => "hybrid_zinb",
            BenchModel::StructuredOnly => "structured_only",
            BenchModel::GnnOnly => "gnn_only",
            BenchModel::Mean => "mean",
            BenchModel::Persistence => "persistence",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        BenchModel::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model {s:?}")))
    }

    /// Model kind and family of the fitted models; `None` for baselines.
    pub fn fitted(self, default_family: Family) -> Option<(ModelKind, Family)> {
        match self {
            BenchModel::HybridZip => Some((ModelKind::Hybrid, Family::Zip)),
            BenchModel::HybridZinb => Some((ModelKind::Hybrid, Family::Zinb)),
            BenchModel::StructuredOnly => Some((ModelKind::StructuredOnly, default_family)),
            BenchModel::GnnOnly => Some((ModelKind::GnnOnly, default_family)),
            BenchModel::Mean | BenchModel::Persistence => None,
        }
    }
}

/// RMSE of every model on every fold; `None` marks a failed fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub models: Vec<BenchModel>,
    pub test_weeks: Vec<i32>,
    /// `rmse[model][fold]`.
    pub rmse: Vec<Vec<Option<f64>>>,
    pub failures: Vec<String>,
}

impl ScoreTable {
    pub fn get(&self, model: BenchModel, test_week: i32) -> Option<f64> {
        let m = self.models.iter().position(|&x| x == model)?;
        let f = self.test_weeks.iter().position(|&w| w == test_week)?;
        self.rmse[m][f]
    }

    /// Index of the lowest-RMSE model per fold; ties go to the earlier model.
    pub fn best_per_fold(&self) -> Vec<Option<usize>> {
        (0..self.test_weeks.len())
            .map(|f| {
                let mut best: Option<(usize, f64)> = None;
                for (m, row) in self.rmse.iter().enumerate() {
                    if let Some(v) = row[f] {
                        if best.is_none_or(|(_, b)| v < b) {
                            best = Some((m, v));
                        }
                    }
                }
                best.map(|(m, _)| m)
            })
            .collect()
    }

    /// `model,fold_test_week,rmse`; a failed fit leaves the score empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,fold_test_week,rmse\n");
        for (m, model) in self.models.iter().enumerate() {
            for (f, week) in self.test_weeks.iter().enumerate() {
                let v = self.rmse[m][f].map(|x| x.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{week},{v}", model.name());
            }
        }
        out
    }

    /// Fixed-width table with the best model per fold starred.
    pub fn format_table(&self) -> String {
        let best = self.best_per_fold();
        let width = self
            .models
            .iter()
            .map(|m| m.name().len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("{:<width$}", "model");
        for w in &self.test_weeks {
            let _ = write!(out, " {:>10}", format!("wk {w}"));
        }
        out.push('\n');
        for (m, model) in self.models.iter().enumerate() {
            let _ = write!(out, "{:<width$}", model.name());
            for (score, winner) in self.rmse[m].iter().zip(&best) {
                let cell = match *score {
                    Some(v) if *winner == Some(m) => format!("*{v:.3}"),
                    Some(v) => format!("{v:.3}"),
                    None => "-".to_string(),
                };
                let _ = write!(out, " {cell:>10}");
            }
            out.push('\n');
        }
        out
    }
}

/// Fails if any training row of the fold lies after its training end.
pub fn check_no_leakage(fold: &FoldData) -> Result<()> {
    let late = fold.train.rows.iter().find(|r| r.week > fold.train_end);
    match late {
        Some(r) => Err(Error::InvalidData(format!(
            "training row from week {} leaks past week {}",
            r.week, fold.train_end
        ))),
        None if fold
            .validation
            .rows
            .iter()
            .any(|r| r.week != fold.validation_week) =>
        {
            Err(Error::InvalidData(
                "validation rows come from the wrong week".into(),
            ))
        }
        None => Ok(()),
    }
}

/// Inputs shared by every fold of a backtest.
pub struct BenchmarkData<'a> {
    pub panel: &'a CasePanel,
    pub features: DerivedFeatures,
    pub graph: GraphInput,
}

impl<'a> BenchmarkData<'a> {
    pub fn new(panel: &'a CasePanel, networks: &NetworkStack) -> Result<Self> {
        Ok(BenchmarkData {
            panel,
            features: DerivedFeatures::from_networks(networks)?,
            graph: GraphInput::from_networks(&panel.districts, networks)?,
        })
    }

    pub fn fold_data(&self, fold: &Fold, kind: ModelKind, config: &FitConfig) -> Result<FoldData> {
        let spec = if kind == ModelKind::GnnOnly {
            gnn_only_design()
        } else {
            config.design.clone()
        };
        let data = FoldData::new(
            self.panel,
            &self.features,
            self.graph.clone(),
            &spec,
            fold.train_end,
            fold.validation_week,
        )?;
        check_no_leakage(&data)?;
        Ok(data)
    }

    /// Point predictions of one model for the test week.
    pub fn predict(&self, model: BenchModel, fold: &Fold, config: &FitConfig) -> Result<Vec<f64>> {
        match model.fitted(config.family) {
            None if model == BenchModel::Mean => mean_baseline(self.panel, fold),
            None => persistence_baseline(self.panel, fold),
            Some((kind, family)) => {
                let data = self.fold_data(fold, kind, config)?;
                let cfg = FitConfig {
                    family,
                    ..config.clone()
                };
                let fit = trainer::fit(&data, &cfg, kind)?;
                let (_, preds) = fit.predict_week(self.panel, &self.features, fold.test_week)?;
                Ok(preds.iter().map(|p| p.mean).collect())
            }
        }
    }
}

/// Scores every model on every fold. Folds run concurrently; a failed fit
/// becomes a missing cell and a note in `failures`.
pub fn run_benchmark(
    panel: &CasePanel,
    networks: &NetworkStack,
    config: &FitConfig,
    models: &[BenchModel],
    plan: &FoldPlan,
) -> Result<ScoreTable> {
    plan.check_panel(panel)?;
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to benchmark".into()));
    }
    let data = BenchmarkData::new(panel, networks)?;
    // the leakage check runs for every fold before any fitting
    for fold in &plan.folds {
        check_no_leakage(&data.fold_data(fold, ModelKind::StructuredOnly, config)?)?;
    }
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..plan.folds.len()).map(move |f| (m, f)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(m, f)| {
            let fold = &plan.folds[f];
            let pred = data.predict(models[m], fold, config)?;
            let obs: Vec<f64> = panel
                .week_slice(fold.test_week)
                .iter()
                .map(|o| o.cases as f64)
                .collect();
            rmse(&pred, &obs)
        })
        .collect();
    let mut table = ScoreTable {
        models: models.to_vec(),
        test_weeks: plan.test_weeks(),
        rmse: vec![vec![None; plan.folds.len()]; models.len()],
        failures: vec![],
    };
    for (&(m, f), r) in jobs.iter().zip(results) {
        match r {
            Ok(v) => table.rmse[m][f] = Some(v),
            Err(e) => table.failures.push(format!(
                "{} on test week {}: {e}",
                models[m].name(),
                plan.folds[f].test_week
            )),
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldCalibration {
    pub week: i32,
    pub n: usize,
    pub coverage: f64,
    /// Mean of `mean − observed`.
    pub mean_bias: f64,
    pub t_statistic: f64,
    /// One-sided p-value for a positive bias.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_uncertainty: f64,
    pub mean_absolute_error: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub coverage: f64,
    pub folds: Vec<FoldCalibration>,
    /// Rank correlation of the epistemic sd with the absolute error; absent
    /// when some forecast has no epistemic sd.
    pub spearman: Option<f64>,
    /// Absolute error by uncertainty decile (epistemic sd when present for
    /// every record, predictive sd otherwise).
    pub bins: Vec<UncertaintyBin>,
}

/// Ranks starting at 1, ties receive their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; needs at least three pairs.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape("rank correlation of unequal lengths".into()));
    }
    if a.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rank correlation needs at least 3 observations, got {}",
            a.len()
        )));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

fn bias_test(errors: &[f64]) -> (f64, f64, f64) {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    if errors.len() < 2 {
        return (mean, 0.0, 0.5);
    }
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = if mean == 0.0 {
        0.0
    } else if var == 0.0 {
        mean.signum() * f64::INFINITY
    } else {
        mean / (var / n).sqrt()
    };
    let p = match StudentsT::new(0.0, 1.0, n - 1.0) {
        Ok(dist) if t.is_finite() => 1.0 - dist.cdf(t),
        _ if t > 0.0 => 0.0,
        _ if t < 0.0 => 1.0,
        _ => 0.5,
    };
    (mean, t, p)
}

/// Coverage, bias tests, uncertainty ranking and the error-by-uncertainty
/// curve over a set of forecasts.
pub fn calibration_report(records: &[ForecastRecord], n_bins: usize) -> Result<CalibrationReport> {
    if records.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 3 forecasts, got {}",
            records.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let coverage_of =
        |rs: &[&ForecastRecord]| rs.iter().filter(|r| r.covers()).count() as f64 / rs.len() as f64;
    let all: Vec<&ForecastRecord> = records.iter().collect();
    let mut by_week: BTreeMap<i32, Vec<&ForecastRecord>> = BTreeMap::new();
    for r in records {
        by_week.entry(r.week).or_default().push(r);
    }
    let folds = by_week
        .iter()
        .map(|(&week, rs)| {
            let errors: Vec<f64> = rs.iter().map(|r| r.mean - r.observed as f64).collect();
            let (mean_bias, t_statistic, p_value) = bias_test(&errors);
            FoldCalibration {
                week,
                n: rs.len(),
                coverage: coverage_of(rs),
                mean_bias,
                t_statistic,
                p_value,
            }
        })
        .collect();
    let abs_err: Vec<f64> = records
        .iter()
        .map(|r| (r.mean - r.observed as f64).abs())
        .collect();
    let epistemic: Option<Vec<f64>> = records.iter().map(|r| r.epistemic_sd).collect();
    let spearman_rho = match &epistemic {
        Some(e) => Some(spearman(e, &abs_err)?),
        None => None,
    };
    let uncertainty =
        epistemic.unwrap_or_else(|| records.iter().map(|r| r.variance.sqrt()).collect());
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    let n_bins = n_bins.min(records.len());
    let bins = (0..n_bins)
        .map(|b| {
            let lo = b * order.len() / n_bins;
            let hi = (b + 1) * order.len() / n_bins;
            let idx = &order[lo..hi];
            let k = idx.len() as f64;
            UncertaintyBin {
                lower: uncertainty[idx[0]],
                upper: uncertainty[idx[idx.len() - 1]],
                mean_uncertainty: idx.iter().map(|&i| uncertainty[i]).sum::<f64>() / k,
                mean_absolute_error: idx.iter().map(|&i| abs_err[i]).sum::<f64>() / k,
                n: idx.len(),
            }
        })
        .collect();
    Ok(CalibrationReport {
        n: records.len(),
        coverage: coverage_of(&all),
        folds,
        spearman: spearman_rho,
        bins,
    })
}
