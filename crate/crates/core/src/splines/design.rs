//! Structured design matrix: intercept, group dummies, P-spline smooths and
//! the log-population offset.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::basis::{
    bspline_basis, difference_penalty, tensor_basis, tensor_penalties, Constraint, SmoothTerm,
    SumToZero, TermKind,
};
use crate::error::{Error, Result};
use crate::networks::DerivedFeatures;
use crate::panel::{CasePanel, N_GROUPS};
use crate::{Mat, Vector};

/// Covariates a smooth term can be built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// `log(lagged rate + 1/population)`: log rate with a one-case continuity
    /// correction, so rescaling populations only shifts it.
    LaggedRate,
    Gini,
    StayingPut,
    Week,
    Mds1,
    Mds2,
}

impl Feature {
    pub fn label(self) -> &'static str {
        match self {
            Feature::LaggedRate => "log(lagged rate)",
            Feature::Gini => "gini (standardized)",
            Feature::StayingPut => "staying put",
            Feature::Week => "week",
            Feature::Mds1 => "mds 1",
            Feature::Mds2 => "mds 2",
        }
    }
}

/// All covariates of one (week, district, group) observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub week: i32,
    pub district: usize,
    pub group: usize,
    pub cases: u64,
    pub population: f64,
    pub lagged_rate: f64,
    pub gini: f64,
    pub staying_put: f64,
    pub mds: [f64; 2],
}

impl FeatureRow {
    pub fn value(&self, f: Feature) -> f64 {
        match f {
            Feature::LaggedRate => (self.lagged_rate + 1.0 / self.population).ln(),
            Feature::Gini => self.gini,
            Feature::StayingPut => self.staying_put,
            Feature::Week => self.week as f64,
            Feature::Mds1 => self.mds[0],
            Feature::Mds2 => self.mds[1],
        }
    }

    pub fn log_population(&self) -> f64 {
        self.population.ln()
    }
}

/// Feature rows for every (district, group) of each week in `weeks`.
/// Rows without a lagged rate (the first panel week) are dropped.
pub fn collect_rows(
    panel: &CasePanel,
    features: &DerivedFeatures,
    weeks: impl IntoIterator<Item = i32>,
) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for week in weeks {
        if !panel.contains_week(week) {
            return Err(Error::InvalidArgument(format!(
                "week {week} outside the panel"
            )));
        }
        let gini = features
            .gini
            .get(&week)
            .ok_or_else(|| Error::InvalidData(format!("no colocation data for week {week}")))?;
        let sp = features
            .staying_put_weekly
            .get(&week)
            .ok_or_else(|| Error::InvalidData(format!("no staying-put data for week {week}")))?;
        for o in panel.week_slice(week) {
            let Some(lagged_rate) = o.lagged_rate else {
                continue;
            };
            rows.push(FeatureRow {
                week,
                district: o.district,
                group: o.group,
                cases: o.cases,
                population: panel.districts[o.district].population(o.group),
                lagged_rate,
                gini: gini[o.district],
                staying_put: sp[o.district],
                mds: [
                    features.mds_embedding[(o.district, 0)],
                    features.mds_embedding[(o.district, 1)],
                ],
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub name: String,
    pub kind: TermKind,
    pub features: Vec<Feature>,
    /// Basis functions per margin before the identifiability constraint.
    pub num_basis: Vec<usize>,
    pub degree: usize,
    pub penalty_order: usize,
    /// One smoothing parameter per margin.
    pub smoothing: Vec<f64>,
    pub constraint: Constraint,
}

impl TermSpec {
    pub fn univariate(name: &str, feature: Feature, num_basis: usize) -> Self {
        TermSpec {
            name: name.into(),
            kind: TermKind::Univariate,
            features: vec![feature],
            num_basis: vec![num_basis],
            degree: 3,
            penalty_order: 2,
            smoothing: vec![1.0],
            constraint: Constraint::SumToZero,
        }
    }

    pub fn tensor(name: &str, a: Feature, b: Feature, num_basis: usize) -> Self {
        TermSpec {
            name: name.into(),
            kind: TermKind::TensorBivariate,
            features: vec![a, b],
            num_basis: vec![num_basis, num_basis],
            degree: 3,
            penalty_order: 2,
            smoothing: vec![1.0, 1.0],
            constraint: Constraint::SumToZero,
        }
    }
}

/// The term list of the structured predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSpec {
    pub intercept: bool,
    /// Dummy-coded groups with group 0 as reference.
    pub group_dummies: bool,
    pub terms: Vec<TermSpec>,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            intercept: true,
            group_dummies: true,
            terms: vec![
                TermSpec::univariate("lagged_rate", Feature::LaggedRate, 10),
                TermSpec::tensor("gini_week", Feature::Gini, Feature::Week, 5),
                TermSpec::tensor("staying_put_week", Feature::StayingPut, Feature::Week, 5),
                TermSpec::tensor("mds", Feature::Mds1, Feature::Mds2, 5),
            ],
        }
    }
}

impl DesignSpec {
    /// Multiplies every smoothing parameter by `factor`.
    pub fn scaled_smoothing(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.smoothing.iter_mut().for_each(|x| *x *= factor);
        }
        out
    }
}

/// One marginal penalty `ξ · P` acting on a block of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyComponent {
    pub matrix: Mat,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBlock {
    pub term: String,
    pub columns: Range<usize>,
    pub components: Vec<PenaltyComponent>,
}

impl PenaltyBlock {
    /// `Σ_c ξ_c P_c`.
    pub fn weighted(&self) -> Mat {
        let k = self.columns.len();
        self.components
            .iter()
            .fold(Mat::zeros(k, k), |acc, c| acc + &c.matrix * c.xi)
    }
}

/// Block-diagonal quadratic penalty over the structured coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredPenalty {
    pub n_columns: usize,
    pub blocks: Vec<PenaltyBlock>,
}

impl StructuredPenalty {
    pub fn value(&self, theta: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let t = Vector::from_column_slice(&theta[b.columns.clone()]);
                (t.transpose() * b.weighted() * &t)[(0, 0)]
            })
            .sum()
    }

    /// Adds `∂/∂θ Σ θᵀPθ = 2Pθ` into `grad`.
    pub fn add_gradient(&self, theta: &[f64], grad: &mut [f64]) {
        for b in &self.blocks {
            let t = Vector::from_column_slice(&theta[b.columns.clone()]);
            let g = b.weighted() * t * 2.0;
            for (k, c) in b.columns.clone().enumerate() {
                grad[c] += g[k];
            }
        }
    }

    /// Full `p₁ × p₁` matrix `P` with `J(θ) = θᵀPθ`.
    pub fn matrix(&self) -> Mat {
        let mut p = Mat::zeros(self.n_columns, self.n_columns);
        for b in &self.blocks {
            let w = b.weighted();
            let s = b.columns.start;
            p.view_mut((s, s), (w.nrows(), w.ncols())).copy_from(&w);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTerm {
    pub spec: TermSpec,
    pub smooth: SmoothTerm,
    pub constraint: Option<SumToZero>,
    pub columns: Range<usize>,
    /// Unweighted marginal penalties in the constrained parameterization.
    pub penalties: Vec<Mat>,
}

impl FittedTerm {
    /// Constrained basis evaluated at per-margin feature values.
    pub fn basis(&self, margins: &[Vec<f64>]) -> Result<Mat> {
        let mut bases = margins
            .iter()
            .zip(&self.smooth.knots)
            .map(|(x, k)| bspline_basis(x, k, self.smooth.degree));
        let raw = match self.smooth.kind {
            TermKind::Univariate => bases.next().expect("one margin")?,
            TermKind::TensorBivariate => {
                let b1 = bases.next().expect("two margins")?;
                let b2 = bases.next().expect("two margins")?;
                tensor_basis(&b1, &b2)?
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "{other:?} is not a smooth term"
                )))
            }
        };
        Ok(match &self.constraint {
            Some(c) => c.apply(&raw),
            None => raw,
        })
    }

    pub fn basis_for_rows(&self, rows: &[FeatureRow]) -> Result<Mat> {
        let margins: Vec<Vec<f64>> = self
            .spec
            .features
            .iter()
            .map(|&f| rows.iter().map(|r| r.value(f)).collect())
            .collect();
        self.basis(&margins)
    }

    /// Range of the training data on each margin (the knot span).
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        self.smooth
            .knots
            .iter()
            .map(|k| (k[0], k[k.len() - 1]))
            .collect()
    }
}

/// Knots, constraint transforms and column layout learned from training
/// rows, reused unchanged for any later rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBasis {
    pub spec: DesignSpec,
    pub terms: Vec<FittedTerm>,
    pub column_map: Vec<(String, Range<usize>)>,
    pub n_columns: usize,
}

impl DesignBasis {
    pub fn fit(spec: &DesignSpec, train: &[FeatureRow]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument(
                "no training rows for the design".into(),
            ));
        }
        let mut column_map = Vec::new();
        let mut col = 0;
        if spec.intercept {
            column_map.push(("intercept".to_string(), col..col + 1));
            col += 1;
        }
        if spec.group_dummies {
            column_map.push(("group".to_string(), col..col + N_GROUPS - 1));
            col += N_GROUPS - 1;
        }
        let mut terms = Vec::with_capacity(spec.terms.len());
        for ts in &spec.terms {
            let expected_margins = match ts.kind {
                TermKind::Univariate => 1,
                TermKind::TensorBivariate => 2,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "term {:?}: {other:?} terms are built in, not listed",
                        ts.name
                    )))
                }
            };
            if ts.features.len() != expected_margins
                || ts.num_basis.len() != expected_margins
                || ts.smoothing.len() != expected_margins
            {
                return Err(Error::InvalidArgument(format!(
                    "term {:?} needs {expected_margins} margins",
                    ts.name
                )));
            }
            let knots = ts
                .features
                .iter()
                .zip(&ts.num_basis)
                .map(|(&f, &k)| {
                    let (lo, hi) = train
                        .iter()
                        .map(|r| r.value(f))
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v), hi.max(v))
                        });
                    SmoothTerm::equally_spaced(lo, hi, k, ts.degree)
                })
                .collect::<Result<Vec<_>>>()?;
            let smooth = SmoothTerm {
                kind: ts.kind,
                knots,
                degree: ts.degree,
                penalty_order: ts.penalty_order,
                constraint: ts.constraint,
            };
            smooth.validate()?;
            let marginal: Vec<Mat> = (0..expected_margins)
                .map(|m| difference_penalty(smooth.num_basis(m), ts.penalty_order))
                .collect::<Result<_>>()?;
            let raw_penalties = if expected_margins == 1 {
                marginal
            } else {
                let (a, b) = tensor_penalties(&marginal[0], &marginal[1]);
                vec![a, b]
            };
            let mut fitted = FittedTerm {
                spec: ts.clone(),
                smooth,
                constraint: None,
                columns: 0..0,
                penalties: raw_penalties,
            };
            if ts.constraint == Constraint::SumToZero {
                let raw = fitted.basis_for_rows(train)?;
                let c = SumToZero::from_basis(&raw);
                fitted.penalties = fitted
                    .penalties
                    .iter()
                    .map(|p| c.apply_penalty(p))
                    .collect();
                fitted.constraint = Some(c);
            }
            let width = fitted.penalties[0].ncols();
            fitted.columns = col..col + width;
            column_map.push((ts.name.clone(), fitted.columns.clone()));
            col += width;
            terms.push(fitted);
        }
        Ok(DesignBasis {
            spec: spec.clone(),
            terms,
            column_map,
            n_columns: col,
        })
    }

    pub fn term(&self, name: &str) -> Option<&FittedTerm> {
        self.terms.iter().find(|t| t.spec.name == name)
    }

    pub fn columns_of(&self, name: &str) -> Option<Range<usize>> {
        self.column_map
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    pub fn penalty(&self) -> StructuredPenalty {
        StructuredPenalty {
            n_columns: self.n_columns,
            blocks: self
                .terms
                .iter()
                .map(|t| PenaltyBlock {
                    term: t.spec.name.clone(),
                    columns: t.columns.clone(),
                    components: t
                        .penalties
                        .iter()
                        .zip(&t.spec.smoothing)
                        .map(|(m, &xi)| PenaltyComponent {
                            matrix: m.clone(),
                            xi,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn matrix(&self, rows: &[FeatureRow]) -> Result<Mat> {
        let mut z = Mat::zeros(rows.len(), self.n_columns);
        let mut col = 0;
        if self.spec.intercept {
            z.column_mut(0).fill(1.0);
            col += 1;
        }
        if self.spec.group_dummies {
            for (i, r) in rows.iter().enumerate() {
                if r.group > 0 {
                    z[(i, col + r.group - 1)] = 1.0;
                }
            }
        }
        for t in &self.terms {
            let b = t.basis_for_rows(rows)?;
            z.view_mut((0, t.columns.start), (rows.len(), t.columns.len()))
                .copy_from(&b);
        }
        Ok(z)
    }

    pub fn design(&self, rows: &[FeatureRow]) -> Result<DesignMatrices> {
        Ok(DesignMatrices {
            z: self.matrix(rows)?,
            penalty: self.penalty(),
            offset: Vector::from_iterator(rows.len(), rows.iter().map(FeatureRow::log_population)),
            column_map: self.column_map.clone(),
        })
    }
}

/// Evaluated structured design over a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrices {
    pub z: Mat,
    pub penalty: StructuredPenalty,
    /// `log(population)` per row, entering with coefficient one.
    pub offset: Vector,
    pub column_map: Vec<(String, Range<usize>)>,
}

/// Fits the design on the training weeks and evaluates it there.
pub fn build_design(
    panel: &CasePanel,
    features: &DerivedFeatures,
    spec: &DesignSpec,
    train_weeks: impl IntoIterator<Item = i32>,
) -> Result<(DesignBasis, Vec<FeatureRow>, DesignMatrices)> {
    let rows = collect_rows(panel, features, train_weeks)?;
    let basis = DesignBasis::fit(spec, &rows)?;
    let dm = basis.design(&rows)?;
    Ok((basis, rows, dm))
}

/// Summary of where each training feature lives, for reporting.
pub fn feature_ranges(rows: &[FeatureRow], features: &[Feature]) -> BTreeMap<String, (f64, f64)> {
    features
        .iter()
        .map(|&f| {
            let (lo, hi) = rows
                .iter()
                .map(|r| r.value(f))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            (f.label().to_string(), (lo, hi))
        })
        .collect()
}
