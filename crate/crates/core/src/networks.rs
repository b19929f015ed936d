//! Dyadic district data and the scalar / embedding features derived from it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, symmetric_eigen_desc};
use crate::Mat;

/// Static and weekly network data over `n` districts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStack {
    /// Weekly colocation probabilities, row `i` = district `i`.
    pub colocation: BTreeMap<i32, Mat>,
    /// Social connectedness index, symmetric.
    pub connectedness: Mat,
    /// Great-circle or planar distance in km, symmetric with zero diagonal.
    pub distance_km: Mat,
    /// Binary neighbourhood indicator, symmetric.
    pub adjacency: Mat,
    /// Weekly share of people staying put, in `[0, 1]`.
    pub staying_put: BTreeMap<i32, Vec<f64>>,
}

impl NetworkStack {
    pub fn n_districts(&self) -> usize {
        self.connectedness.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_districts();
        let square = |m: &Mat, what: &str| -> Result<()> {
            if m.shape() != (n, n) {
                return Err(Error::Shape(format!(
                    "{what} is {:?}, expected {n}×{n}",
                    m.shape()
                )));
            }
            Ok(())
        };
        square(&self.connectedness, "connectedness")?;
        square(&self.distance_km, "distance")?;
        square(&self.adjacency, "adjacency")?;
        for (name, m) in [
            ("connectedness", &self.connectedness),
            ("distance", &self.distance_km),
            ("adjacency", &self.adjacency),
        ] {
            if !is_symmetric(m, 0.0) {
                return Err(Error::InvalidData(format!(
                    "{name} matrix is not symmetric"
                )));
            }
        }
        if self.connectedness.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidData(
                "connectedness must be non-negative".into(),
            ));
        }
        if self.adjacency.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidData("adjacency must be binary".into()));
        }
        for i in 0..n {
            if self.distance_km[(i, i)] != 0.0 {
                return Err(Error::InvalidData("distance diagonal must be zero".into()));
            }
            for j in 0..n {
                if i != j && !(self.distance_km[(i, j)] > 0.0) {
                    return Err(Error::InvalidData(format!(
                        "distance between {i} and {j} must be positive"
                    )));
                }
            }
        }
        for (week, m) in &self.colocation {
            square(m, &format!("colocation week {week}"))?;
            if m.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidData(format!(
                    "colocation week {week} has negative entries"
                )));
            }
        }
        for (week, v) in &self.staying_put {
            if v.len() != n {
                return Err(Error::Shape(format!(
                    "staying-put week {week} has {} values",
                    v.len()
                )));
            }
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidData(format!(
                    "staying-put week {week} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Features fed to the structured predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFeatures {
    /// Weekly standardized Gini concentration of the colocation rows.
    pub gini: BTreeMap<i32, Vec<f64>>,
    /// Two-dimensional classical MDS embedding of the connectedness network.
    pub mds_embedding: Mat,
    pub staying_put_weekly: BTreeMap<i32, Vec<f64>>,
}

impl DerivedFeatures {
    pub fn from_networks(stack: &NetworkStack) -> Result<Self> {
        let n = stack.n_districts();
        let raw: BTreeMap<i32, Vec<f64>> = stack
            .colocation
            .iter()
            .map(|(&week, m)| {
                let row = (0..n)
                    .map(|i| gini_index(m, i))
                    .collect::<Result<Vec<_>>>()?;
                Ok((week, row))
            })
            .collect::<Result<_>>()?;
        Ok(DerivedFeatures {
            gini: standardize_weekly(&raw)?,
            mds_embedding: mds_embed(&stack.connectedness, 2)?,
            staying_put_weekly: stack.staying_put.clone(),
        })
    }
}

/// Gini concentration of district `i`'s colocation row.
///
/// Both pair indices range over districts other than `i`; `n` in the
/// denominator is the total number of districts.
pub fn gini_index(colocation_week: &Mat, i: usize) -> Result<f64> {
    let n = colocation_week.nrows();
    let mut row: Vec<f64> = (0..n)
        .filter(|&j| j != i)
        .map(|j| colocation_week[(i, j)])
        .collect();
    let total: f64 = row.iter().sum();
    if row.len() < 2 || !(total > 0.0) {
        return Err(Error::InvalidData(format!(
            "district {i}: colocation row needs two off-diagonal entries with a positive sum"
        )));
    }
    // Σ_{a,b} |x_a − x_b| over ordered pairs = 2 Σ_k (2k − m + 1) x_(k) for ascending x.
    row.sort_by(f64::total_cmp);
    let m = row.len() as f64;
    let pair_sum: f64 = row
        .iter()
        .enumerate()
        .map(|(k, &x)| (2.0 * k as f64 - m + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok(pair_sum / (2.0 * n as f64 * total))
}

/// Friendship ties normalized by the product of user counts.
pub fn social_connectedness(ties: u64, users_i: u64, users_j: u64) -> Result<f64> {
    if users_i == 0 || users_j == 0 {
        return Err(Error::InvalidArgument(
            "user counts must be positive".into(),
        ));
    }
    Ok(ties as f64 / (users_i as f64 * users_j as f64))
}

/// Classical MDS of the connectedness network.
///
/// Dissimilarities are `−log(s_ij / max s)`; the doubly centred squared
/// dissimilarity matrix is eigen-decomposed and the leading `dim`
/// eigenvectors are scaled by the square roots of their clipped eigenvalues.
pub fn mds_embed(connectedness: &Mat, dim: usize) -> Result<Mat> {
    let n = connectedness.nrows();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "MDS needs at least 3 districts, got {n}"
        )));
    }
    if !connectedness.is_square()
        || !is_symmetric(connectedness, 1e-12 * crate::linalg::max_abs(connectedness))
    {
        return Err(Error::InvalidData(
            "connectedness must be square and symmetric".into(),
        ));
    }
    let mut s_max = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let s = connectedness[(i, j)];
                if !(s > 0.0) {
                    return Err(Error::InvalidData(format!(
                        "connectedness ({i},{j}) must be positive for MDS"
                    )));
                }
                s_max = s_max.max(s);
            }
        }
    }
    let d2 = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let d = -(connectedness[(i, j)] / s_max).ln();
            d * d
        }
    });
    classical_mds(&d2, dim)
}

/// Classical scaling from a matrix of squared dissimilarities.
pub fn classical_mds(squared_dissimilarity: &Mat, dim: usize) -> Result<Mat> {
    let n = squared_dissimilarity.nrows();
    if dim == 0 || dim > n {
        return Err(Error::InvalidArgument(format!(
            "cannot embed {n} points in {dim} dimensions"
        )));
    }
    let row_means: Vec<f64> = (0..n)
        .map(|i| squared_dissimilarity.row(i).sum() / n as f64)
        .collect();
    let col_means: Vec<f64> = (0..n)
        .map(|j| squared_dissimilarity.column(j).sum() / n as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = Mat::from_fn(n, n, |i, j| {
        -0.5 * (squared_dissimilarity[(i, j)] - row_means[i] - col_means[j] + grand)
    });
    let (values, vectors) = symmetric_eigen_desc(&b);
    // eigenvalues at roundoff level would otherwise contribute sqrt(eps) coordinates
    let floor = 1e-12 * values[0].abs().max(f64::MIN_POSITIVE);
    let mut out = Mat::zeros(n, dim);
    for k in 0..dim {
        let scale = if values[k] > floor {
            values[k].sqrt()
        } else {
            0.0
        };
        for i in 0..n {
            out[(i, k)] = vectors[(i, k)] * scale;
        }
    }
    Ok(out)
}

/// `(v − mean) / sd` with the population standard deviation.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot standardize an empty vector".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidData(
            "zero variance, cannot standardize".into(),
        ));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

pub fn standardize_weekly(values: &BTreeMap<i32, Vec<f64>>) -> Result<BTreeMap<i32, Vec<f64>>> {
    values
        .iter()
        .map(|(&week, v)| {
            standardize(v)
                .map(|s| (week, s))
                .map_err(|e| Error::InvalidData(format!("week {week}: {e}")))
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct StaticEdgeRow {
    network: String,
    src_id: usize,
    dst_id: usize,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct WeeklyEdgeRow {
    week: i32,
    src_id: usize,
    dst_id: usize,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct WeeklyNodeRow {
    week: i32,
    district_id: usize,
    value: f64,
}

fn set_symmetric(
    m: &mut Mat,
    seen: &mut Mat,
    i: usize,
    j: usize,
    v: f64,
    what: &str,
) -> Result<()> {
    let n = m.nrows();
    if i >= n || j >= n {
        return Err(Error::UnknownId {
            kind: "district",
            id: i.max(j) as i64,
        });
    }
    for (a, b) in [(i, j), (j, i)] {
        if seen[(a, b)] == 2.0 && m[(a, b)] != v {
            return Err(Error::InvalidData(format!(
                "{what}: conflicting values for edge ({a},{b})"
            )));
        }
    }
    m[(i, j)] = v;
    seen[(i, j)] = 2.0;
    if seen[(j, i)] != 2.0 {
        m[(j, i)] = v;
        seen[(j, i)] = 1.0;
    }
    Ok(())
}

/// Reads `network,src_id,dst_id,value` where `network` is one of
/// `connectedness`, `distance` or `adjacency`. Symmetric closure is applied;
/// absent pairs are zero.
pub fn load_static_edges(path: impl AsRef<Path>, n: usize) -> Result<(Mat, Mat, Mat)> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut mats = [Mat::zeros(n, n), Mat::zeros(n, n), Mat::zeros(n, n)];
    let mut seen = [Mat::zeros(n, n), Mat::zeros(n, n), Mat::zeros(n, n)];
    for row in reader.deserialize::<StaticEdgeRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let k = match row.network.as_str() {
            "connectedness" => 0,
            "distance" => 1,
            "adjacency" => 2,
            other => return Err(Error::InvalidData(format!("unknown network {other:?}"))),
        };
        set_symmetric(
            &mut mats[k],
            &mut seen[k],
            row.src_id,
            row.dst_id,
            row.value,
            &row.network,
        )?;
    }
    let [c, d, a] = mats;
    Ok((c, d, a))
}

pub fn load_colocation(path: impl AsRef<Path>, n: usize) -> Result<BTreeMap<i32, Mat>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out: BTreeMap<i32, Mat> = BTreeMap::new();
    for row in reader.deserialize::<WeeklyEdgeRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if row.src_id >= n || row.dst_id >= n {
            return Err(Error::UnknownId {
                kind: "district",
                id: row.src_id.max(row.dst_id) as i64,
            });
        }
        out.entry(row.week).or_insert_with(|| Mat::zeros(n, n))[(row.src_id, row.dst_id)] =
            row.value;
    }
    Ok(out)
}

pub fn load_staying_put(path: impl AsRef<Path>, n: usize) -> Result<BTreeMap<i32, Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out: BTreeMap<i32, Vec<Option<f64>>> = BTreeMap::new();
    for row in reader.deserialize::<WeeklyNodeRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if row.district_id >= n {
            return Err(Error::UnknownId {
                kind: "district",
                id: row.district_id as i64,
            });
        }
        out.entry(row.week).or_insert_with(|| vec![None; n])[row.district_id] = Some(row.value);
    }
    out.into_iter()
        .map(|(week, v)| {
            let full = v
                .into_iter()
                .enumerate()
                .map(|(d, x)| {
                    x.ok_or_else(|| {
                        Error::InvalidData(format!("staying-put missing week {week} district {d}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((week, full))
        })
        .collect()
}

pub fn write_static_edges(path: impl AsRef<Path>, stack: &NetworkStack) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["network", "src_id", "dst_id", "value"])
        .map_err(|e| Error::csv(path, e))?;
    let n = stack.n_districts();
    for (name, m) in [
        ("connectedness", &stack.connectedness),
        ("distance", &stack.distance_km),
        ("adjacency", &stack.adjacency),
    ] {
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != 0.0 {
                    w.write_record([
                        name.to_string(),
                        i.to_string(),
                        j.to_string(),
                        m[(i, j)].to_string(),
                    ])
                    .map_err(|e| Error::csv(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_colocation(path: impl AsRef<Path>, colocation: &BTreeMap<i32, Mat>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["week", "src_id", "dst_id", "value"])
        .map_err(|e| Error::csv(path, e))?;
    for (week, m) in colocation {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    w.write_record([
                        week.to_string(),
                        i.to_string(),
                        j.to_string(),
                        m[(i, j)].to_string(),
                    ])
                    .map_err(|e| Error::csv(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_staying_put(
    path: impl AsRef<Path>,
    staying_put: &BTreeMap<i32, Vec<f64>>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["week", "district_id", "value"])
        .map_err(|e| Error::csv(path, e))?;
    for (week, v) in staying_put {
        for (d, x) in v.iter().enumerate() {
            w.write_record([week.to_string(), d.to_string(), x.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the three network files into a validated stack.
pub fn load_network_stack(
    static_edges: impl AsRef<Path>,
    colocation: impl AsRef<Path>,
    staying_put: impl AsRef<Path>,
    n: usize,
) -> Result<NetworkStack> {
    let (connectedness, distance_km, adjacency) = load_static_edges(static_edges, n)?;
    let stack = NetworkStack {
        colocation: load_colocation(colocation, n)?,
        connectedness,
        distance_km,
        adjacency,
        staying_put: load_staying_put(staying_put, n)?,
    };
    stack.validate()?;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Double loop straight from the definition.
    fn gini_oracle(m: &Mat, i: usize) -> f64 {
        let n = m.nrows();
        let mut num = 0.0;
        for a in (0..n).filter(|&a| a != i) {
            for b in (0..n).filter(|&b| b != i) {
                num += (m[(i, a)] - m[(i, b)]).abs();
            }
        }
        let den: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        num / (2.0 * n as f64 * den)
    }

    #[test]
    fn gini_uniform_row_is_zero() {
        let mut m = Mat::from_element(4, 4, 0.2);
        m[(1, 1)] = 0.9;
        assert_eq!(gini_index(&m, 1).unwrap(), 0.0);
    }

    #[test]
    fn gini_three_districts_by_hand() {
        // district index 1 here; off-diagonal entries 0.2 and 0.6
        let mut m = Mat::zeros(3, 3);
        m[(1, 0)] = 0.2;
        m[(1, 2)] = 0.6;
        m[(1, 1)] = 5.0;
        let g = gini_index(&m, 1).unwrap();
        assert!((g - 0.8 / 4.8).abs() < 1e-15);
        assert!((g - gini_oracle(&m, 1)).abs() < 1e-15);
    }

    #[test]
    fn gini_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mat::from_fn(5, 5, |_, _| rng.random::<f64>());
        for i in 0..5 {
            assert!((gini_index(&m, i).unwrap() - gini_oracle(&m, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn gini_rejects_zero_row() {
        let m = Mat::zeros(4, 4);
        assert!(gini_index(&m, 0).is_err());
    }

    proptest! {
        #[test]
        fn gini_in_unit_interval(vals in proptest::collection::vec(0.0f64..10.0, 6)) {
            let m = Mat::from_fn(3, 3, |i, j| vals[(i * 3 + j) % 6]);
            prop_assume!((0..3).filter(|&j| j != 0).map(|j| m[(0, j)]).sum::<f64>() > 0.0);
            let g = gini_index(&m, 0).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!((g - gini_oracle(&m, 0)).abs() < 1e-12);
        }

        #[test]
        fn standardize_is_affine_equivariant(
            v in proptest::collection::vec(-100.0f64..100.0, 3..20),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -50.0f64..50.0,
        ) {
            let base = match standardize(&v) { Ok(s) => s, Err(_) => return Ok(()) };
            let shifted: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let s = standardize(&shifted).unwrap();
            for (x, y) in s.iter().zip(&base) {
                prop_assert!((x - a.signum() * y).abs() < 1e-8);
            }
            let again = standardize(&base).unwrap();
            for (x, y) in again.iter().zip(&base) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sci_arithmetic() {
        assert_eq!(social_connectedness(10, 100, 200).unwrap(), 5e-4);
        assert_eq!(social_connectedness(0, 100, 200).unwrap(), 0.0);
        assert_eq!(
            social_connectedness(7, 13, 29).unwrap(),
            social_connectedness(7, 29, 13).unwrap()
        );
        assert!(social_connectedness(1, 0, 3).is_err());
    }

    fn pairwise(m: &Mat) -> Mat {
        let n = m.nrows();
        Mat::from_fn(n, n, |i, j| (m.row(i) - m.row(j)).norm())
    }

    #[test]
    fn mds_recovers_planar_configuration() {
        let pts = Mat::from_row_slice(3, 2, &[0.0, 0.0, 3.0, 0.0, 0.0, 4.0]);
        let d = pairwise(&pts);
        let emb = classical_mds(&d.map(|x| x * x), 2).unwrap();
        assert!((pairwise(&emb) - &d).abs().max() < 1e-8);

        // Through the connectedness transform the smallest off-diagonal
        // dissimilarity is always 0, so use a configuration with two
        // coincident points: d01 = 0, d02 = d12 = 4.
        let target = Mat::from_row_slice(3, 3, &[0.0, 0.0, 4.0, 0.0, 0.0, 4.0, 4.0, 4.0, 0.0]);
        let s = Mat::from_fn(3, 3, |i, j| {
            if i == j {
                9.0
            } else {
                0.25 * (-target[(i, j)]).exp()
            }
        });
        let emb = mds_embed(&s, 2).unwrap();
        assert!(
            (pairwise(&emb) - &target).abs().max() < 1e-8,
            "{emb} {}",
            pairwise(&emb)
        );
    }

    #[test]
    fn mds_equal_off_diagonal_equidistant() {
        // with equal s_ij every d_ij is 0 except that max-normalization keeps them equal
        let mut s = Mat::from_element(5, 5, 0.3);
        s.fill_diagonal(1.0);
        let emb = mds_embed(&s, 2).unwrap();
        let d = pairwise(&emb);
        let first = d[(0, 1)];
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!((d[(i, j)] - first).abs() < 1e-9);
                }
            }
        }
        for k in 0..2 {
            assert!(emb.column(k).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn mds_permutation_invariant_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.05..1.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let perm = [3usize, 0, 5, 1, 4, 2];
        let sp = Mat::from_fn(n, n, |i, j| s[(perm[i], perm[j])]);
        let d = pairwise(&mds_embed(&s, 2).unwrap());
        let dp = pairwise(&mds_embed(&sp, 2).unwrap());
        for i in 0..n {
            for j in 0..n {
                assert!((dp[(i, j)] - d[(perm[i], perm[j])]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mds_top2_reconstruction_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.05..1.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let emb = mds_embed(&s, 2).unwrap();
        let s_max = s.max();
        let d2 = Mat::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                (s[(i, j)] / s_max).ln().powi(2)
            }
        });
        let j = Mat::identity(n, n) - Mat::from_element(n, n, 1.0 / n as f64);
        let b = -0.5 * &j * d2 * &j;
        let (vals, _) = symmetric_eigen_desc(&b);
        let gram = &emb * emb.transpose();
        assert!((gram - b).norm() <= vals[2].abs() * n as f64 + 1e-9);
    }

    #[test]
    fn mds_input_errors() {
        assert!(mds_embed(&Mat::from_element(2, 2, 1.0), 2).is_err());
        let mut s = Mat::from_element(3, 3, 0.5);
        s[(0, 1)] = 0.7;
        assert!(mds_embed(&s, 2).is_err());
    }

    #[test]
    fn standardize_examples() {
        let s = standardize(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let again = standardize(&s).unwrap();
        for (a, b) in again.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(standardize(&[4.0, 4.0, 4.0]).is_err());
    }
}
