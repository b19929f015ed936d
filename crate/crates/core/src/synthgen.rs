//! Synthetic scenarios with a serialized ground truth.
//!
//! Districts are scattered on a square, networks are derived from the layout
//! and populations, and counts are simulated forward in time from a known
//! structured predictor plus an optional network term.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::distheads::{CountFamily, Family, ZeroInflatedParams};
use crate::error::{Error, Result};
use crate::networks::{self, DerivedFeatures, NetworkStack};
use crate::panel::{self, CasePanel, District, N_GROUPS};
use crate::splines::FeatureRow;
use crate::Mat;

/// Attempts at drawing a layout without coincident points.
pub const LAYOUT_ATTEMPTS: usize = 10;
/// Neighbours per district in the adjacency rule.
pub const KNN: usize = 4;
/// Weeks simulated before the panel starts so the lag starts near equilibrium.
const BURN_IN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_districts: usize,
    pub n_weeks: usize,
    pub week_min: i32,
    pub seed: u64,
    /// Side of the square in km.
    pub area_km: f64,
    /// Log-uniform range of per-group populations.
    pub population_range: (f64, f64),
    pub density_range: (f64, f64),
    pub gravity_exponent: f64,
    /// Distance added inside the gravity kernel, km.
    pub gravity_offset_km: f64,
    pub connectedness_length_km: f64,
    /// Amplitude of the seasonal mobility multiplier.
    pub mobility_amplitude: f64,
    pub mobility_period_weeks: f64,
    /// Log-normal noise on colocation entries.
    pub colocation_noise: f64,
    pub staying_put_noise: f64,
    pub family: Family,
    pub truth: TruthCoefficients,
    /// Multiplier of the network term; 0 gives a structured-only truth.
    pub network_strength: f64,
}

/// Coefficients of the generating predictor.
///
/// With `x` the log lagged rate, `g` the standardized Gini, `s` the share
/// staying put, `τ ∈ [−1, 1]` the rescaled week and `m` the MDS coordinates:
///
/// ```text
/// η = base_log_rate + group_effects[k]
///   + lag_amplitude · tanh((x − base_log_rate) / lag_scale)
///   + season_amplitude · sin(π · (week − week_min) / n_weeks)
///   + (gini_slope + gini_week_slope · τ) · g
///   + (staying_put_slope + staying_put_week_slope · τ) · (s − staying_put_center)
///   + mds_amplitude · (tanh(m₁ / sd₁) − ½ tanh(m₂ / sd₂))
///   + network_strength · h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthCoefficients {
    pub base_log_rate: f64,
    pub group_effects: [f64; N_GROUPS],
    pub lag_amplitude: f64,
    pub lag_scale: f64,
    pub season_amplitude: f64,
    pub gini_slope: f64,
    pub gini_week_slope: f64,
    pub staying_put_slope: f64,
    pub staying_put_week_slope: f64,
    pub staying_put_center: f64,
    pub mds_amplitude: f64,
    /// ZIP link scalar `χ`, or `ζ` for the ZINB.
    pub chi: f64,
    /// NB dispersion for the negative-binomial families.
    pub dispersion: f64,
}

impl Default for TruthCoefficients {
    fn default() -> Self {
        TruthCoefficients {
            base_log_rate: -9.9,
            group_effects: [0.0, 0.2, -0.15, 0.1],
            lag_amplitude: 0.8,
            lag_scale: 1.5,
            season_amplitude: 0.3,
            gini_slope: 0.15,
            gini_week_slope: 0.1,
            staying_put_slope: -2.0,
            staying_put_week_slope: 0.5,
            staying_put_center: 0.27,
            mds_amplitude: 0.3,
            chi: 0.0,
            dispersion: 5.0,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_districts: 50,
            n_weeks: 40,
            week_min: 9,
            seed: 1,
            area_km: 300.0,
            population_range: (1e4, 1e5),
            density_range: (80.0, 3000.0),
            gravity_exponent: 2.0,
            gravity_offset_km: 5.0,
            connectedness_length_km: 60.0,
            mobility_amplitude: 0.3,
            mobility_period_weeks: 26.0,
            colocation_noise: 0.2,
            staying_put_noise: 0.1,
            family: Family::Zip,
            truth: TruthCoefficients::default(),
            network_strength: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_districts < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 3 districts, got {}",
                self.n_districts
            )));
        }
        if self.n_weeks < 6 {
            return Err(Error::InvalidArgument(format!(
                "need at least 6 weeks, got {}",
                self.n_weeks
            )));
        }
        let (lo, hi) = self.population_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(
                "population range must satisfy 1 ≤ lo ≤ hi".into(),
            ));
        }
        let (lo, hi) = self.density_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(
                "density range must be positive".into(),
            ));
        }
        for (name, v) in [
            ("area_km", self.area_km),
            ("connectedness_length_km", self.connectedness_length_km),
            ("mobility_period_weeks", self.mobility_period_weeks),
            ("lag_scale", self.truth.lag_scale),
            ("dispersion", self.truth.dispersion),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("gravity_exponent", self.gravity_exponent),
            ("gravity_offset_km", self.gravity_offset_km),
            ("colocation_noise", self.colocation_noise),
            ("staying_put_noise", self.staying_put_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be non-negative"
                )));
            }
        }
        if !(self.mobility_amplitude.abs() < 1.0) {
            return Err(Error::InvalidArgument(
                "mobility amplitude must be below 1".into(),
            ));
        }
        if !self.network_strength.is_finite() {
            return Err(Error::InvalidArgument(
                "network strength must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn week_max(&self) -> i32 {
        self.week_min + self.n_weeks as i32 - 1
    }

    /// Seasonal mobility multiplier of a week.
    pub fn mobility(&self, week: i32) -> f64 {
        1.0 + self.mobility_amplitude
            * (2.0 * PI * (week - self.week_min) as f64 / self.mobility_period_weeks).sin()
    }
}

/// Everything needed to evaluate the generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: ScenarioConfig,
    pub structured_only: bool,
    pub family: Family,
    /// Auxiliary scalars in the layout of [`Family::params`].
    pub aux: Vec<f64>,
    /// Standard deviations used to scale the MDS coordinates.
    pub mds_scale: [f64; 2],
    /// Unscaled network term per week and district: the standardized log of
    /// the mean lagged rate over adjacent districts times the district's own
    /// population density.
    pub network_term: BTreeMap<i32, Vec<f64>>,
    pub layout_km: Vec<[f64; 2]>,
    pub zero_fraction: f64,
}

impl GroundTruth {
    fn tau(&self, week: f64) -> f64 {
        let c = &self.config;
        let mid = c.week_min as f64 + (c.n_weeks as f64 - 1.0) / 2.0;
        let half = ((c.n_weeks as f64 - 1.0) / 2.0).max(1.0);
        (week - mid) / half
    }

    pub fn lag_effect(&self, log_lagged_rate: f64) -> f64 {
        let t = &self.config.truth;
        t.lag_amplitude * ((log_lagged_rate - t.base_log_rate) / t.lag_scale).tanh()
    }

    pub fn season(&self, week: f64) -> f64 {
        let c = &self.config;
        c.truth.season_amplitude * (PI * (week - c.week_min as f64) / c.n_weeks as f64).sin()
    }

    pub fn gini_effect(&self, gini: f64, week: f64) -> f64 {
        let t = &self.config.truth;
        (t.gini_slope + t.gini_week_slope * self.tau(week)) * gini
    }

    pub fn staying_put_effect(&self, share: f64, week: f64) -> f64 {
        let t = &self.config.truth;
        (t.staying_put_slope + t.staying_put_week_slope * self.tau(week))
            * (share - t.staying_put_center)
    }

    pub fn mds_effect(&self, m1: f64, m2: f64) -> f64 {
        let t = &self.config.truth;
        t.mds_amplitude * ((m1 / self.mds_scale[0]).tanh() - 0.5 * (m2 / self.mds_scale[1]).tanh())
    }

    /// Generating value of a smooth term under the default design's names,
    /// evaluated at its margin values. The week-only season is not part of
    /// any term; see [`GroundTruth::season`].
    pub fn term_effect(&self, term: &str, x: &[f64]) -> Result<f64> {
        let need = |k: usize| -> Result<()> {
            if x.len() == k {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "term {term} takes {k} values, got {}",
                    x.len()
                )))
            }
        };
        match term {
            "lagged_rate" => need(1).map(|_| self.lag_effect(x[0])),
            "gini_week" => need(2).map(|_| self.gini_effect(x[0], x[1])),
            "staying_put_week" => need(2).map(|_| self.staying_put_effect(x[0], x[1])),
            "mds" => need(2).map(|_| self.mds_effect(x[0], x[1])),
            other => Err(Error::InvalidArgument(format!(
                "no generating function for term {other:?}"
            ))),
        }
    }

    pub fn network_effect(&self, week: i32, district: usize) -> f64 {
        if self.structured_only {
            return 0.0;
        }
        self.network_term
            .get(&week)
            .map_or(0.0, |h| self.config.network_strength * h[district])
    }

    /// Generating log-rate `η` of one observation (without the offset).
    pub fn eta(&self, row: &FeatureRow) -> f64 {
        let t = &self.config.truth;
        let w = row.week as f64;
        let x = (row.lagged_rate + 1.0 / row.population).ln();
        t.base_log_rate
            + t.group_effects[row.group]
            + self.lag_effect(x)
            + self.season(w)
            + self.gini_effect(row.gini, w)
            + self.staying_put_effect(row.staying_put, w)
            + self.mds_effect(row.mds[0], row.mds[1])
            + self.network_effect(row.week, row.district)
    }

    /// Generating distribution of one observation.
    pub fn params(&self, row: &FeatureRow) -> ZeroInflatedParams {
        self.family
            .params(self.eta(row) + row.population.ln(), &self.aux)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub districts: Vec<District>,
    pub networks: NetworkStack,
    pub panel: CasePanel,
    pub truth: GroundTruth,
}

/// Draws `n` points, retrying when two coincide.
fn draw_layout(n: usize, side: f64, mut draw: impl FnMut() -> [f64; 2]) -> Result<Vec<[f64; 2]>> {
    let min_sep = 1e-9 * side;
    for _ in 0..LAYOUT_ATTEMPTS {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let [a, b] = draw();
                [a * side, b * side]
            })
            .collect();
        let degenerate = (0..n).any(|i| {
            (i + 1..n).any(|j| (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]) < min_sep)
        });
        if !degenerate {
            return Ok(pts);
        }
    }
    Err(Error::InvalidData(format!(
        "layout still has coincident points after {LAYOUT_ATTEMPTS} draws"
    )))
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi == lo {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Symmetric k-nearest-neighbour indicator: `i ~ j` if either is among the
/// other's `k` nearest.
pub fn knn_adjacency(distance: &Mat, k: usize) -> Mat {
    let n = distance.nrows();
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&x, &y| {
            distance[(i, x)]
                .total_cmp(&distance[(i, y)])
                .then(x.cmp(&y))
        });
        for &j in order.iter().take(k) {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
    }
    a
}

fn sample_count(rng: &mut ChaCha8Rng, p: &ZeroInflatedParams, family: CountFamily) -> Result<u64> {
    if rng.random::<f64>() < p.pi {
        return Ok(0);
    }
    let mean = match family {
        CountFamily::Poisson => p.lambda,
        CountFamily::NegBin => {
            let g = Gamma::new(p.chi, p.lambda / p.chi)
                .map_err(|e| Error::Numerical(format!("gamma draw: {e}")))?;
            g.sample(rng)
        }
    };
    if mean <= 0.0 {
        return Ok(0);
    }
    let pois = Poisson::new(mean).map_err(|e| Error::Numerical(format!("poisson draw: {e}")))?;
    Ok(pois.sample(rng) as u64)
}

fn standardize_or_zero(v: &[f64]) -> Vec<f64> {
    networks::standardize(v).unwrap_or_else(|_| vec![0.0; v.len()])
}

/// Builds a scenario from its configuration; pure in the seed.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let n = config.n_districts;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layout = {
        let r = &mut rng;
        draw_layout(n, config.area_km, || [r.random::<f64>(), r.random::<f64>()])?
    };

    // districts
    const SHARES: [f64; N_GROUPS] = [0.27, 0.26, 0.24, 0.23];
    let mut districts = Vec::with_capacity(n);
    for id in 0..n {
        let scale = log_uniform(&mut rng, config.population_range);
        let density = log_uniform(&mut rng, config.density_range);
        let mut pops = [0u64; N_GROUPS];
        let mut dens = [0.0; N_GROUPS];
        for g in 0..N_GROUPS {
            let jitter = rng.random_range(0.9..1.1);
            pops[g] = ((scale * SHARES[g] * N_GROUPS as f64 * jitter).round() as u64).max(1);
            dens[g] = density * rng.random_range(0.9..1.1);
        }
        districts.push(District {
            id,
            name: format!("D{id:03}"),
            population_by_group: pops,
            density_by_group: dens,
        });
    }
    let total_pop: Vec<f64> = districts.iter().map(District::total_population).collect();

    // static networks
    let distance_km = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (layout[i][0] - layout[j][0]).hypot(layout[i][1] - layout[j][1])
        }
    });
    let adjacency = knn_adjacency(&distance_km, KNN.min(n - 1));
    let raw_conn = Mat::from_fn(n, n, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        (-distance_km[(a, b)] / config.connectedness_length_km).exp() * total_pop[a] * total_pop[b]
    });
    let mut s_max = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s_max = s_max.max(raw_conn[(i, j)]);
            }
        }
    }
    let connectedness = Mat::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            raw_conn[(i, j)] / s_max
        }
    });

    // weekly networks
    let gravity = Mat::from_fn(n, n, |i, j| {
        let d = distance_km[(i, j)] + config.gravity_offset_km;
        total_pop[i] * total_pop[j] / d.max(1e-9).powf(config.gravity_exponent)
    });
    let g_max = gravity.max();
    let base_stay = Normal::new(-1.0, 0.3).expect("valid normal");
    let stay_level: Vec<f64> = (0..n).map(|_| base_stay.sample(&mut rng)).collect();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut colocation = BTreeMap::new();
    let mut staying_put = BTreeMap::new();
    for w in 0..config.n_weeks {
        let week = config.week_min + w as i32;
        let m = config.mobility(week);
        let mut c = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let noise = (config.colocation_noise * unit.sample(&mut rng)).exp();
                let v = m * gravity[(i, j)] / g_max * noise;
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        colocation.insert(week, c);
        let sp: Vec<f64> = (0..n)
            .map(|i| {
                let z = stay_level[i] - 1.2 * (m - 1.0)
                    + config.staying_put_noise * unit.sample(&mut rng);
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
        staying_put.insert(week, sp);
    }
    let stack = NetworkStack {
        colocation,
        connectedness,
        distance_km,
        adjacency,
        staying_put,
    };
    stack.validate()?;
    let features = DerivedFeatures::from_networks(&stack)?;
    let mds_scale = [0, 1].map(|k| {
        let col: Vec<f64> = features.mds_embedding.column(k).iter().copied().collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        if var > 0.0 {
            var.sqrt()
        } else {
            1.0
        }
    });

    let t = &config.truth;
    let aux = match config.family {
        Family::Zip => vec![t.chi],
        Family::Zinb => vec![t.dispersion.ln(), t.chi],
        Family::Nb => vec![t.dispersion.ln()],
    };
    let structured_only = config.network_strength == 0.0;
    let mut truth = GroundTruth {
        config: config.clone(),
        structured_only,
        family: config.family,
        aux,
        mds_scale,
        network_term: BTreeMap::new(),
        layout_km: layout,
        zero_fraction: 0.0,
    };

    // forward simulation; burn-in weeks reuse the first week's networks
    let count_family = config.family.count_family();
    let cells = n * N_GROUPS;
    let mut prev: Vec<u64> = (0..cells)
        .map(|c| {
            (t.base_log_rate.exp() * districts[c / N_GROUPS].population(c % N_GROUPS)).round()
                as u64
        })
        .collect();
    let mut counts = Vec::with_capacity(cells * config.n_weeks);
    for step in 0..BURN_IN + config.n_weeks {
        let week = config.week_min + step.saturating_sub(BURN_IN) as i32;
        let network: Vec<f64> = {
            let weighted: Vec<f64> = (0..n)
                .map(|d| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for j in (0..n).filter(|&j| stack.adjacency[(d, j)] == 1.0) {
                        let cases: f64 = (0..N_GROUPS).map(|g| prev[j * N_GROUPS + g] as f64).sum();
                        num += (cases + 1.0) / total_pop[j];
                        den += 1.0;
                    }
                    (districts[d].mean_density() * num / den).ln()
                })
                .collect();
            standardize_or_zero(&weighted)
        };
        truth.network_term.insert(week, network);
        let mut next = vec![0u64; cells];
        for d in 0..n {
            for g in 0..N_GROUPS {
                let pop = districts[d].population(g);
                let row = FeatureRow {
                    week,
                    district: d,
                    group: g,
                    cases: 0,
                    population: pop,
                    lagged_rate: prev[d * N_GROUPS + g] as f64 / pop,
                    gini: features.gini[&week][d],
                    staying_put: features.staying_put_weekly[&week][d],
                    mds: [
                        features.mds_embedding[(d, 0)],
                        features.mds_embedding[(d, 1)],
                    ],
                };
                next[d * N_GROUPS + g] = sample_count(&mut rng, &truth.params(&row), count_family)?;
            }
        }
        if step >= BURN_IN {
            counts.extend_from_slice(&next);
        }
        prev = next;
    }
    if structured_only {
        truth.network_term.clear();
    }
    truth.zero_fraction = counts.iter().filter(|&&c| c == 0).count() as f64 / counts.len() as f64;
    let panel = CasePanel::from_counts(districts.clone(), config.week_min, &counts)?;
    Ok(Scenario {
        districts,
        networks: stack,
        panel,
        truth,
    })
}

/// File names written by [`write_scenario`].
pub const SCENARIO_FILES: [&str; 6] = [
    "panel.csv",
    "districts.csv",
    "colocation.csv",
    "static_edges.csv",
    "staying_put.csv",
    "truth.json",
];

/// Writes the scenario in the ingestion formats plus the ground truth.
pub fn write_scenario(dir: impl AsRef<Path>, scenario: &Scenario) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths: Vec<PathBuf> = SCENARIO_FILES.iter().map(|f| dir.join(f)).collect();
    scenario.panel.write_csv(&paths[0])?;
    panel::write_districts(&paths[1], &scenario.districts)?;
    networks::write_colocation(&paths[2], &scenario.networks.colocation)?;
    networks::write_static_edges(&paths[3], &scenario.networks)?;
    networks::write_staying_put(&paths[4], &scenario.networks.staying_put)?;
    let json = serde_json::to_string_pretty(&scenario.truth)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(&paths[5], json + "\n").map_err(|e| Error::io(&paths[5], e))?;
    Ok(paths)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}
