use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use netcast_core::evalharness::{
    calibration_report, ensemble_forecasts, fit_forecasts, make_folds, read_forecasts_csv,
    run_benchmark, write_forecasts_csv, BenchModel, BenchmarkData, CalibrationReport, Fold,
};
use netcast_core::networks::load_network_stack;
use netcast_core::panel::{load_districts, load_panel};
use netcast_core::splines::TermKind;
use netcast_core::synthgen::{generate, write_scenario};
use netcast_core::trainer::{
    fit_ensemble, fit_with_observer, load_checkpoint, structured_covariance,
    structured_covariance_generalized, EpochRecord, FitConfig, GeneralizedCovariance, ModelKind,
};
use netcast_core::{CasePanel, Family, FitResult, ForecastRecord, Mat, NetworkStack};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::plot::{emit, grid, FanPoint, Figure, HeatCell, LinePoint};
use crate::{Common, Failure, FitArgs};

/// Grid points of univariate effect plots.
const LINE_POINTS: usize = 100;
/// Grid points per margin of heatmaps.
const HEAT_POINTS: usize = 25;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_fail(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::data(format!("serialization failed: {e}")))
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(d) = &common.data_dir {
        cfg.data.dir = d.clone();
    }
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<(CasePanel, NetworkStack), Failure> {
    let d = &cfg.data;
    let districts = load_districts(d.path(&d.districts))?;
    let panel = load_panel(d.path(&d.panel), &districts)?;
    let networks = load_network_stack(
        d.path(&d.static_edges),
        d.path(&d.colocation),
        d.path(&d.staying_put),
        districts.len(),
    )?;
    Ok((panel, networks))
}

fn parse_family(s: &str) -> Result<Family, Failure> {
    match s.trim().to_ascii_lowercase().as_str() {
        "zip" => Ok(Family::Zip),
        "zinb" => Ok(Family::Zinb),
        "nb" => Ok(Family::Nb),
        other => Err(Failure::usage(format!(
            "unknown family {other:?} (zip, zinb, nb)"
        ))),
    }
}

fn parse_model(s: &str) -> Result<ModelKind, Failure> {
    match s.trim().to_ascii_lowercase().as_str() {
        "hybrid" => Ok(ModelKind::Hybrid),
        "structured_only" => Ok(ModelKind::StructuredOnly),
        "gnn_only" => Ok(ModelKind::GnnOnly),
        other => Err(Failure::usage(format!(
            "unknown model {other:?} (hybrid, structured_only, gnn_only)"
        ))),
    }
}

fn parse_ints<const N: usize>(s: &str, what: &str) -> Result<[i64; N], Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::usage(format!("{what} must look like {}", ["N"; N].join(":")));
    if parts.len() != N {
        return Err(bad());
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn print_config(_defaults: bool, path: Option<&Path>) -> Result<(), Failure> {
    let cfg = RunConfig::load(path)?;
    print!("{}", cfg.to_toml()?);
    Ok(())
}

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    files: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn synth(
    config: Option<&Path>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let mut sc = cfg.synth.clone();
    if let Some(s) = seed {
        sc.seed = s;
    }
    let dir = out_dir.unwrap_or_else(|| cfg.data.dir.clone());
    let scenario = generate(&sc)?;
    let paths = write_scenario(&dir, &scenario)?;
    let mut files = Vec::new();
    for p in &paths {
        let bytes = std::fs::read(p).map_err(|e| io_fail(p, e))?;
        files.push(ManifestEntry {
            name: p
                .file_name()
                .expect("file name")
                .to_string_lossy()
                .into_owned(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        seed: sc.seed,
        files,
    };
    write_file(&dir.join("manifest.json"), &to_json(&manifest)?)?;
    eprintln!("wrote {} files to {}", paths.len() + 1, dir.display());
    Ok(())
}

struct FitSetup {
    cfg: RunConfig,
    fit_config: FitConfig,
    kind: ModelKind,
    panel: CasePanel,
    networks: NetworkStack,
}

impl FitSetup {
    fn new(args: &FitArgs) -> Result<Self, Failure> {
        let mut cfg = load_config(&args.common)?;
        if let Some(t) = args.train_end {
            cfg.training.train_end = t;
        }
        if let Some(f) = &args.family {
            cfg.training.family = parse_family(f)?;
        }
        if let Some(s) = args.seed {
            cfg.training.seed = s;
        }
        if let Some(m) = &args.model {
            cfg.training.model = parse_model(m)?;
        }
        let fit_config = cfg.fit_config();
        fit_config.validate()?;
        let (panel, networks) = load_data(&cfg)?;
        Ok(FitSetup {
            kind: cfg.training.model,
            cfg,
            fit_config,
            panel,
            networks,
        })
    }

    fn fold(&self) -> Fold {
        let t = self.cfg.training.train_end;
        Fold {
            train_end: t,
            validation_week: t + 1,
            test_week: t + 2,
        }
    }

    fn out_path(&self, flag: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match flag {
            Some(p) => p.clone(),
            None => self.cfg.output_dir(None).join(default_name),
        }
    }
}

fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.jsonl")
}

/// Writes each record to stdout and the log file as it arrives, so the
/// log survives a later divergence.
struct LogSink {
    file: BufWriter<File>,
    path: PathBuf,
    error: Option<Failure>,
}

impl LogSink {
    fn create(path: PathBuf) -> Result<Self, Failure> {
        create_parent(&path)?;
        let file = File::create(&path).map_err(|e| io_fail(&path, e))?;
        Ok(LogSink {
            file: BufWriter::new(file),
            path,
            error: None,
        })
    }

    fn line<T: Serialize>(&mut self, record: &T) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(record).expect("log records serialize");
        println!("{line}");
        let r = writeln!(self.file, "{line}").and_then(|_| self.file.flush());
        if let Err(e) = r {
            self.error = Some(io_fail(&self.path, e));
        }
    }

    fn finish(self) -> Result<(), Failure> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

pub fn fit(args: &FitArgs) -> Result<(), Failure> {
    let s = FitSetup::new(args)?;
    let data = BenchmarkData::new(&s.panel, &s.networks)?;
    let fold = data.fold_data(&s.fold(), s.kind, &s.fit_config)?;
    let out = s.out_path(&args.out, "checkpoint.json");
    let mut log = LogSink::create(log_path(&out))?;
    let result = fit_with_observer(&fold, &s.fit_config, s.kind, &mut |r: &EpochRecord| {
        log.line(r)
    });
    log.finish()?;
    let result = result?;
    result.save(&out)?;
    eprintln!(
        "best epoch {} (validation loss {}); checkpoint {}",
        result.best_epoch,
        result.best_val_nll,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MemberRecord<'a> {
    seed: u64,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

pub fn ensemble(args: &FitArgs, members: Option<usize>) -> Result<(), Failure> {
    let mut s = FitSetup::new(args)?;
    if let Some(m) = members {
        s.fit_config.ensemble_size = m;
    }
    let data = BenchmarkData::new(&s.panel, &s.networks)?;
    let fold = data.fold_data(&s.fold(), s.kind, &s.fit_config)?;
    let out = s.out_path(&args.out, "ensemble.json");
    let mut log = LogSink::create(log_path(&out))?;
    // members train concurrently; their logs are emitted afterwards in seed order
    let ens = fit_ensemble(&fold, &s.fit_config, s.kind)?;
    for m in &ens.members {
        for r in &m.log {
            log.line(&MemberRecord {
                seed: m.seed,
                record: r,
            });
        }
    }
    log.finish()?;
    for f in &ens.failures {
        eprintln!("member with seed {} failed: {}", f.seed, f.message);
    }
    let json = serde_json::to_string(&ens).map_err(|e| Failure::data(e.to_string()))?;
    create_parent(&out)?;
    write_file(&out, &(json + "\n"))?;
    eprintln!("{} members; ensemble {}", ens.members.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct CalibrationOutput {
    model: BenchModel,
    members: usize,
    report: Option<CalibrationReport>,
    failures: Vec<String>,
}

pub fn evaluate(
    common: &Common,
    folds: Option<&str>,
    models: Option<&str>,
    out_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(f) = folds {
        let [first, step, count] = parse_ints::<3>(f, "--folds")?;
        let count =
            usize::try_from(count).map_err(|_| Failure::usage("fold count must be positive"))?;
        cfg.evaluation.first_train_end = first as i32;
        cfg.evaluation.step = step as i32;
        cfg.evaluation.count = count;
    }
    if let Some(m) = models {
        cfg.evaluation.models = m
            .split(',')
            .map(BenchModel::parse)
            .collect::<Result<_, _>>()?;
    }
    let ev = &cfg.evaluation;
    let fit_config = cfg.fit_config();
    fit_config.validate()?;
    let (panel, networks) = load_data(&cfg)?;
    let plan = make_folds(&panel, ev.first_train_end, ev.step, ev.count)?;
    let dir = cfg.output_dir(out_dir.as_deref());
    create_dir(&dir)?;

    let table = run_benchmark(&panel, &networks, &fit_config, &ev.models, &plan)?;
    write_file(&dir.join("scores.csv"), &table.to_csv())?;
    let mut text = table.format_table();
    for f in &table.failures {
        text.push_str(&format!("failed: {f}\n"));
        eprintln!("failed: {f}");
    }
    write_file(&dir.join("scores.txt"), &text)?;
    print!("{}", table.format_table());

    let cal_model = ev.calibration_model;
    let Some((kind, family)) = cal_model
        .fitted(fit_config.family)
        .filter(|_| ev.models.contains(&cal_model))
    else {
        return Ok(());
    };
    let data = BenchmarkData::new(&panel, &networks)?;
    let cfg_fit = FitConfig {
        family,
        ensemble_size: ev.calibration_members,
        ..fit_config
    };
    let mut records: Vec<ForecastRecord> = Vec::new();
    let mut failures = Vec::new();
    for fold in &plan.folds {
        let attempt = (|| -> Result<Vec<ForecastRecord>, Failure> {
            let fd = data.fold_data(fold, kind, &cfg_fit)?;
            if cfg_fit.ensemble_size >= 2 {
                let ens = fit_ensemble(&fd, &cfg_fit, kind)?;
                for f in &ens.failures {
                    eprintln!(
                        "calibration member {} on test week {}: {}",
                        f.seed, fold.test_week, f.message
                    );
                }
                Ok(ensemble_forecasts(
                    &ens,
                    &panel,
                    &data.features,
                    fold.test_week,
                )?)
            } else {
                let fit = netcast_core::trainer::fit(&fd, &cfg_fit, kind)?;
                Ok(fit_forecasts(&fit, &panel, &data.features, fold.test_week)?)
            }
        })();
        match attempt {
            Ok(r) => records.extend(r),
            Err(e) => {
                let msg = format!("test week {}: {}", fold.test_week, e.message);
                eprintln!("calibration failed on {msg}");
                failures.push(msg);
            }
        }
    }
    write_forecasts_csv(dir.join("forecasts.csv"), &records)?;
    let report = if records.is_empty() {
        None
    } else {
        match calibration_report(&records, ev.calibration_bins) {
            Ok(r) => Some(r),
            Err(e) => {
                failures.push(e.to_string());
                None
            }
        }
    };
    let out = CalibrationOutput {
        model: cal_model,
        members: cfg_fit.ensemble_size,
        report,
        failures,
    };
    write_file(&dir.join("calibration.json"), &to_json(&out)?)
}

pub fn forecast(
    common: &Common,
    checkpoint: &Path,
    weeks: Option<&str>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let fit = load_checkpoint(checkpoint)?;
    let (panel, networks) = load_data(&cfg)?;
    let (first, last) = match weeks {
        Some(w) => {
            let [a, b] = parse_ints::<2>(w, "--weeks")?;
            (a as i32, b as i32)
        }
        None => (
            panel.week_min + 1,
            panel.week_min + panel.n_weeks() as i32 - 1,
        ),
    };
    if first > last
        || !panel.contains_week(first)
        || !panel.contains_week(last)
        || first <= panel.week_min
    {
        return Err(Failure::usage(format!(
            "weeks {first}:{last} are not lagged panel weeks"
        )));
    }
    let data = BenchmarkData::new(&panel, &networks)?;
    let mut records = Vec::new();
    for w in first..=last {
        records.extend(fit_forecasts(&fit, &panel, &data.features, w)?);
    }
    let out = out.unwrap_or_else(|| cfg.output_dir(None).join("forecasts.csv"));
    create_parent(&out)?;
    write_forecasts_csv(&out, &records)?;
    Ok(())
}

/// Dense covariance as written to disk, row-major. `null_space` lists
/// the directions dropped by a generalized inverse (empty when the
/// precision was invertible).
#[derive(Serialize, Deserialize)]
struct CovarianceFile {
    dim: usize,
    values: Vec<f64>,
    null_space: Vec<Vec<f64>>,
}

/// Tolerance on the null-space component of a functional with a band.
const ESTIMABLE_TOL: f64 = 1e-8;

pub fn covariance(common: &Common, checkpoint: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let fit = load_checkpoint(checkpoint)?;
    let (panel, networks) = load_data(&cfg)?;
    let data = BenchmarkData::new(&panel, &networks)?;
    let fold = Fold {
        train_end: fit.train_end_week,
        validation_week: fit.validation_week,
        test_week: fit.validation_week + 1,
    };
    // the design comes from the checkpoint, not from the current config
    let fd = data.fold_data(&fold, fit.kind, &fit.config)?;
    let g = match structured_covariance(&fit, &fd) {
        Ok(cov) => GeneralizedCovariance {
            null_space: Mat::zeros(cov.nrows(), 0),
            covariance: cov,
        },
        Err(netcast_core::Error::Singular { min_eigenvalue }) => {
            let g = structured_covariance_generalized(&fit, &fd)?;
            eprintln!(
                "precision is singular (smallest eigenvalue {min_eigenvalue:e}); dropped {} shared direction(s)",
                g.null_space.ncols()
            );
            g
        }
        Err(e) => return Err(e.into()),
    };
    let n = g.covariance.nrows();
    let values = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| g.covariance[(i, j)])
        .collect();
    let null_space = g
        .null_space
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let out = out.unwrap_or_else(|| checkpoint.with_extension("cov.json"));
    create_parent(&out)?;
    write_file(
        &out,
        &to_json(&CovarianceFile {
            dim: n,
            values,
            null_space,
        })?,
    )
}

fn load_covariance(path: &Path, fit: &FitResult) -> Result<GeneralizedCovariance, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    let c: CovarianceFile = serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    if c.values.len() != c.dim * c.dim || c.dim != fit.structured.len() {
        return Err(Failure::data(format!(
            "{}: covariance of dimension {} does not match {} structured weights",
            path.display(),
            c.dim,
            fit.structured.len()
        )));
    }
    if c.null_space.iter().any(|v| v.len() != c.dim) {
        return Err(Failure::data(format!(
            "{}: null-space vector of the wrong length",
            path.display()
        )));
    }
    let null_space = Mat::from_fn(c.dim, c.null_space.len(), |i, k| c.null_space[k][i]);
    Ok(GeneralizedCovariance {
        covariance: Mat::from_row_slice(c.dim, c.dim, &c.values),
        null_space,
    })
}

/// Every grid point of a univariate term must be estimable for a band.
fn check_estimable(
    fit: &FitResult,
    name: &str,
    xs: &[f64],
    cov: &GeneralizedCovariance,
) -> Result<(), Failure> {
    if cov.null_space.ncols() == 0 {
        return Ok(());
    }
    let term = fit.design.term(name).expect("term from the design");
    let b = term.basis(&[xs.to_vec()])?;
    for i in 0..b.nrows() {
        let mut c = vec![0.0; fit.structured.len()];
        for (k, col) in term.columns.clone().enumerate() {
            c[col] = b[(i, k)];
        }
        if !cov.estimable(&c, ESTIMABLE_TOL) {
            return Err(Failure {
                code: 3,
                message: format!("term {name} is confounded with another term; no band"),
            });
        }
    }
    Ok(())
}

pub fn report(
    checkpoint: &Path,
    covariance: Option<&Path>,
    bands: bool,
    forecasts: Option<&Path>,
    out_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    if bands && covariance.is_none() {
        return Err(Failure::usage(
            "bands were requested but no --covariance file was given",
        ));
    }
    let fit = load_checkpoint(checkpoint)?;
    let cov = covariance.map(|p| load_covariance(p, &fit)).transpose()?;
    let dir = out_dir.unwrap_or_else(|| RunConfig::default().output_dir(None).join("report"));
    create_dir(&dir)?;

    for term in &fit.design.terms {
        let name = &term.spec.name;
        let ranges = term.ranges();
        match term.spec.kind {
            TermKind::Univariate => {
                let xs = grid(ranges[0].0, ranges[0].1, LINE_POINTS);
                if let Some(c) = &cov {
                    check_estimable(&fit, name, &xs, c)?;
                }
                let eff = fit.term_effect(
                    name,
                    std::slice::from_ref(&xs),
                    cov.as_ref().map(|c| &c.covariance),
                )?;
                let pts =
                    xs.iter()
                        .enumerate()
                        .map(|(i, &x)| LinePoint {
                            x,
                            effect: eff.values[i],
                            band: eff.sd.as_ref().map(|sd| {
                                (eff.values[i] - 2.0 * sd[i], eff.values[i] + 2.0 * sd[i])
                            }),
                        })
                        .collect();
                emit(&dir, &format!("term_{name}"), &Figure::Line(pts))?;
            }
            TermKind::TensorBivariate => {
                let gx = grid(ranges[0].0, ranges[0].1, HEAT_POINTS);
                let gy = grid(ranges[1].0, ranges[1].1, HEAT_POINTS);
                let xs: Vec<f64> = gx.iter().flat_map(|&x| gy.iter().map(move |_| x)).collect();
                let ys: Vec<f64> = gx.iter().flat_map(|_| gy.iter().copied()).collect();
                let eff = fit.term_effect(name, &[xs.clone(), ys.clone()], None)?;
                let cells = (0..xs.len())
                    .map(|i| HeatCell {
                        x: xs[i],
                        y: ys[i],
                        effect: eff.values[i],
                    })
                    .collect();
                emit(&dir, &format!("term_{name}"), &Figure::Heat(cells))?;
            }
            _ => {}
        }
    }

    if let Some(path) = forecasts {
        let records = read_forecasts_csv(path)?;
        let mut districts: Vec<usize> = records.iter().map(|r| r.district).collect();
        districts.sort_unstable();
        districts.dedup();
        for d in districts {
            let mut pts: Vec<FanPoint> = records
                .iter()
                .filter(|r| r.district == d)
                .map(|r| FanPoint {
                    week: r.week,
                    group: r.group,
                    mean: r.mean,
                    lower: r.lower,
                    upper: r.upper,
                    observed: r.observed,
                })
                .collect();
            pts.sort_by_key(|p| (p.group, p.week));
            emit(&dir, &format!("fan_district_{d}"), &Figure::Fan(pts))?;
        }
    }
    eprintln!("report written to {}", dir.display());
    Ok(())
}
