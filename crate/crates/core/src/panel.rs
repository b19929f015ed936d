//! Weekly district × group case panels.
//!
//! A panel is a complete grid over (week, district, group). Rates are cases
//! divided by the group population of the district, and every observation
//! after the first week carries the previous week's rate as its lag.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of demographic groups (age band × gender).
pub const N_GROUPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    /// 15–35 years.
    Young,
    /// 36–59 years.
    Middle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

/// One cell of the age band × gender product. Group 0 (young, female) is the
/// reference level for dummy coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Group {
    pub age_band: AgeBand,
    pub gender: Gender,
}

impl Group {
    pub const ALL: [Group; N_GROUPS] = [
        Group {
            age_band: AgeBand::Young,
            gender: Gender::Female,
        },
        Group {
            age_band: AgeBand::Young,
            gender: Gender::Male,
        },
        Group {
            age_band: AgeBand::Middle,
            gender: Gender::Female,
        },
        Group {
            age_band: AgeBand::Middle,
            gender: Gender::Male,
        },
    ];

    pub fn from_id(id: usize) -> Option<Group> {
        Self::ALL.get(id).copied()
    }

    pub fn id(self) -> usize {
        Self::ALL
            .iter()
            .position(|g| *g == self)
            .expect("group in ALL")
    }

    pub fn label(self) -> &'static str {
        match (self.age_band, self.gender) {
            (AgeBand::Young, Gender::Female) => "15-35 female",
            (AgeBand::Young, Gender::Male) => "15-35 male",
            (AgeBand::Middle, Gender::Female) => "36-59 female",
            (AgeBand::Middle, Gender::Male) => "36-59 male",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct District {
    pub id: usize,
    pub name: String,
    pub population_by_group: [u64; N_GROUPS],
    /// Persons per km².
    pub density_by_group: [f64; N_GROUPS],
}

impl District {
    pub fn population(&self, group: usize) -> f64 {
        self.population_by_group[group] as f64
    }

    pub fn total_population(&self) -> f64 {
        self.population_by_group.iter().map(|&p| p as f64).sum()
    }

    pub fn mean_density(&self) -> f64 {
        self.density_by_group.iter().sum::<f64>() / N_GROUPS as f64
    }
}

/// Checks populations and id contiguity.
pub fn validate_districts(districts: &[District]) -> Result<()> {
    for (pos, d) in districts.iter().enumerate() {
        if d.id != pos {
            return Err(Error::InvalidData(format!(
                "district ids must be contiguous from 0; found {} at position {pos}",
                d.id
            )));
        }
        if d.population_by_group.contains(&0) {
            return Err(Error::InvalidData(format!(
                "district {} has a zero population",
                d.id
            )));
        }
        if d.density_by_group
            .iter()
            .any(|&x| !(x > 0.0 && x.is_finite()))
        {
            return Err(Error::InvalidData(format!(
                "district {} has a non-positive density",
                d.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct DistrictRow {
    district_id: i64,
    name: String,
    group_id: i64,
    population: i64,
    density: f64,
}

/// Reads `district_id,name,group_id,population,density`, one row per
/// district and group.
pub fn load_districts(path: impl AsRef<Path>) -> Result<Vec<District>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    // district -> (name, per group (population, density))
    type Partial = (String, [Option<(u64, f64)>; N_GROUPS]);
    let mut partial: BTreeMap<usize, Partial> = BTreeMap::new();
    for row in reader.deserialize::<DistrictRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let id = usize::try_from(row.district_id).map_err(|_| Error::UnknownId {
            kind: "district",
            id: row.district_id,
        })?;
        let group = usize::try_from(row.group_id)
            .ok()
            .filter(|&g| g < N_GROUPS)
            .ok_or(Error::UnknownId {
                kind: "group",
                id: row.group_id,
            })?;
        if row.population <= 0 {
            return Err(Error::InvalidData(format!(
                "district {id} group {group}: population must be positive"
            )));
        }
        let entry = partial
            .entry(id)
            .or_insert_with(|| (row.name.clone(), [None; N_GROUPS]));
        if entry.1[group].is_some() {
            return Err(Error::InvalidData(format!(
                "district {id} group {group} listed twice"
            )));
        }
        entry.1[group] = Some((row.population as u64, row.density));
    }
    let mut districts = Vec::with_capacity(partial.len());
    for (id, (name, cells)) in partial {
        let mut population_by_group = [0u64; N_GROUPS];
        let mut density_by_group = [0f64; N_GROUPS];
        for (g, cell) in cells.iter().enumerate() {
            let (p, d) = cell
                .ok_or_else(|| Error::InvalidData(format!("district {id} is missing group {g}")))?;
            population_by_group[g] = p;
            density_by_group[g] = d;
        }
        districts.push(District {
            id,
            name,
            population_by_group,
            density_by_group,
        });
    }
    validate_districts(&districts)?;
    Ok(districts)
}

pub fn write_districts(path: impl AsRef<Path>, districts: &[District]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["district_id", "name", "group_id", "population", "density"])
        .map_err(|e| Error::csv(path, e))?;
    for d in districts {
        for g in 0..N_GROUPS {
            w.write_record([
                d.id.to_string(),
                d.name.clone(),
                g.to_string(),
                d.population_by_group[g].to_string(),
                d.density_by_group[g].to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub district: usize,
    pub group: usize,
    pub week: i32,
    pub cases: u64,
    pub rate: f64,
    /// `None` for the first panel week.
    pub lagged_rate: Option<f64>,
}

/// Complete (week, district, group) grid of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePanel {
    pub week_min: i32,
    pub week_max: i32,
    pub districts: Vec<District>,
    observations: Vec<PanelObservation>,
}

impl CasePanel {
    /// Builds a panel from dense counts laid out as `[week][district][group]`.
    pub fn from_counts(districts: Vec<District>, week_min: i32, counts: &[u64]) -> Result<Self> {
        validate_districts(&districts)?;
        let n = districts.len();
        let cells_per_week = n * N_GROUPS;
        if n == 0 || counts.is_empty() || !counts.len().is_multiple_of(cells_per_week) {
            return Err(Error::Shape(format!(
                "{} counts do not tile {} districts × {N_GROUPS} groups",
                counts.len(),
                n
            )));
        }
        let n_weeks = counts.len() / cells_per_week;
        let mut observations = Vec::<PanelObservation>::with_capacity(counts.len());
        for w in 0..n_weeks {
            for d in 0..n {
                for g in 0..N_GROUPS {
                    let cases = counts[w * cells_per_week + d * N_GROUPS + g];
                    let rate = cases as f64 / districts[d].population(g);
                    let lagged_rate = if w == 0 {
                        None
                    } else {
                        Some(observations[(w - 1) * cells_per_week + d * N_GROUPS + g].rate)
                    };
                    observations.push(PanelObservation {
                        district: d,
                        group: g,
                        week: week_min + w as i32,
                        cases,
                        rate,
                        lagged_rate,
                    });
                }
            }
        }
        Ok(CasePanel {
            week_min,
            week_max: week_min + n_weeks as i32 - 1,
            districts,
            observations,
        })
    }

    pub fn n_districts(&self) -> usize {
        self.districts.len()
    }

    pub fn n_weeks(&self) -> usize {
        (self.week_max - self.week_min + 1) as usize
    }

    pub fn weeks(&self) -> impl Iterator<Item = i32> {
        self.week_min..=self.week_max
    }

    pub fn observations(&self) -> &[PanelObservation] {
        &self.observations
    }

    pub fn contains_week(&self, week: i32) -> bool {
        (self.week_min..=self.week_max).contains(&week)
    }

    pub fn get(&self, week: i32, district: usize, group: usize) -> Option<&PanelObservation> {
        if !self.contains_week(week) || district >= self.n_districts() || group >= N_GROUPS {
            return None;
        }
        let idx = (week - self.week_min) as usize * self.n_districts() * N_GROUPS
            + district * N_GROUPS
            + group;
        self.observations.get(idx)
    }

    /// Observations of one week in (district, group) order.
    pub fn week_slice(&self, week: i32) -> &[PanelObservation] {
        assert!(self.contains_week(week), "week {week} outside panel");
        let stride = self.n_districts() * N_GROUPS;
        let start = (week - self.week_min) as usize * stride;
        &self.observations[start..start + stride]
    }

    /// Dense counts in `[week][district][group]` order.
    pub fn counts(&self) -> Vec<u64> {
        self.observations.iter().map(|o| o.cases).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["week", "district_id", "group_id", "cases"])
            .map_err(|e| Error::csv(path, e))?;
        for o in &self.observations {
            w.write_record([
                o.week.to_string(),
                o.district.to_string(),
                o.group.to_string(),
                o.cases.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Deserialize)]
struct PanelRow {
    week: i32,
    district_id: i64,
    group_id: i64,
    cases: i64,
}

/// Reads `week,district_id,group_id,cases` and checks the grid is complete.
pub fn load_panel(path: impl AsRef<Path>, districts: &[District]) -> Result<CasePanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_panel(file, districts).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

/// Reader-based variant of [`load_panel`].
pub fn parse_panel<R: std::io::Read>(reader: R, districts: &[District]) -> Result<CasePanel> {
    validate_districts(districts)?;
    let n = districts.len();
    let mut reader = csv::Reader::from_reader(reader);
    let mut cells: HashMap<(i32, usize, usize), u64> = HashMap::new();
    let (mut week_min, mut week_max) = (i32::MAX, i32::MIN);
    for row in reader.deserialize::<PanelRow>() {
        let row = row.map_err(|e| Error::csv("<panel>", e))?;
        let district = usize::try_from(row.district_id)
            .ok()
            .filter(|&d| d < n)
            .ok_or(Error::UnknownId {
                kind: "district",
                id: row.district_id,
            })?;
        let group = usize::try_from(row.group_id)
            .ok()
            .filter(|&g| g < N_GROUPS)
            .ok_or(Error::UnknownId {
                kind: "group",
                id: row.group_id,
            })?;
        if row.cases < 0 {
            return Err(Error::NegativeCases {
                week: row.week,
                district,
                group,
                cases: row.cases,
            });
        }
        if cells
            .insert((row.week, district, group), row.cases as u64)
            .is_some()
        {
            return Err(Error::DuplicateKey {
                week: row.week,
                district,
                group,
            });
        }
        week_min = week_min.min(row.week);
        week_max = week_max.max(row.week);
    }
    if cells.is_empty() {
        return Err(Error::InvalidData("panel file has no rows".into()));
    }
    let mut counts = Vec::with_capacity(cells.len());
    for week in week_min..=week_max {
        for district in 0..n {
            for group in 0..N_GROUPS {
                let c = cells
                    .get(&(week, district, group))
                    .ok_or(Error::MissingCell {
                        week,
                        district,
                        group,
                    })?;
                counts.push(*c);
            }
        }
    }
    CasePanel::from_counts(districts.to_vec(), week_min, &counts)
}

/// Replaces missing onset days by `registration − d`, with `d` drawn with
/// equal weight from the delays of records whose onset is observed.
pub fn impute_onset_delays(
    registrations: &[(i64, Option<i64>)],
    rng_seed: u64,
) -> Result<Vec<i64>> {
    let delays: Vec<i64> = registrations
        .iter()
        .filter_map(|&(reg, onset)| onset.map(|o| reg - o))
        .collect();
    if registrations.iter().all(|(_, o)| o.is_some()) {
        return Ok(registrations.iter().map(|(_, o)| o.unwrap()).collect());
    }
    if delays.is_empty() {
        return Err(Error::InvalidData(
            "no observed onset delays to sample from".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(registrations
        .iter()
        .map(|&(reg, onset)| match onset {
            Some(o) => o,
            None => reg - delays[rng.random_range(0..delays.len())],
        })
        .collect())
}

/// ISO week number of a calendar day.
pub fn iso_week(day: NaiveDate) -> i32 {
    day.iso_week().week() as i32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyRecord {
    pub day: NaiveDate,
    pub district: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRecord {
    pub week: i32,
    pub district: usize,
    pub value: f64,
}

/// Averages daily values into ISO weeks. Every (district, week) must have
/// exactly seven daily values, all within one ISO year.
pub fn aggregate_daily_to_weekly(daily: &[DailyRecord]) -> Result<Vec<WeeklyRecord>> {
    let mut buckets: BTreeMap<(i32, usize), (usize, f64)> = BTreeMap::new();
    let mut year = None;
    for r in daily {
        let iso = r.day.iso_week();
        match year {
            None => year = Some(iso.year()),
            Some(y) if y != iso.year() => {
                return Err(Error::InvalidData(
                    "daily series spans more than one ISO year".into(),
                ))
            }
            _ => {}
        }
        let e = buckets
            .entry((iso.week() as i32, r.district))
            .or_insert((0, 0.0));
        e.0 += 1;
        e.1 += r.value;
    }
    buckets
        .into_iter()
        .map(|((week, district), (days, sum))| {
            if days != 7 {
                Err(Error::IncompleteWeek {
                    week: week as i64,
                    district,
                    days,
                })
            } else {
                Ok(WeeklyRecord {
                    week,
                    district,
                    value: sum / 7.0,
                })
            }
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct DailyRow {
    day: String,
    district_id: i64,
    value: f64,
}

/// Reads `day,district_id,value` with ISO `YYYY-MM-DD` days.
pub fn load_daily_series(path: impl AsRef<Path>) -> Result<Vec<DailyRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize::<DailyRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::csv(path, e))?;
            let day = NaiveDate::parse_from_str(&row.day, "%Y-%m-%d")
                .map_err(|e| Error::InvalidData(format!("bad day {:?}: {e}", row.day)))?;
            let district = usize::try_from(row.district_id).map_err(|_| Error::UnknownId {
                kind: "district",
                id: row.district_id,
            })?;
            Ok(DailyRecord {
                day,
                district,
                value: row.value,
            })
        })
        .collect()
}
