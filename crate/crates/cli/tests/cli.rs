use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &str = r#"
[training]
learning_rate = 0.01
max_epochs = 30
patience = 30
train_end = 14
ensemble_size = 3

[evaluation]
first_train_end = 12
step = 2
count = 3
models = ["hybrid_zip", "structured_only", "mean"]
calibration_members = 3

[gnn]
conv = [{ width = 8, kernels = 2 }, { width = 6, kernels = 2 }]
dense = [5, 4]

[synth]
n_districts = 12
n_weeks = 12
network_strength = 0.5
"#;

struct Workspace {
    dir: tempfile::TempDir,
    config: String,
}

impl Workspace {
    /// A config pointing at `<tmp>/data`, with the scenario already written.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let text = format!(
            "[data]\ndir = {:?}\n[output]\ndir = {:?}\n{SMALL}",
            data.to_str().unwrap(),
            dir.path().join("out").to_str().unwrap()
        );
        let config = dir.path().join("run.toml");
        std::fs::write(&config, text).unwrap();
        let ws = Workspace {
            config: config.to_str().unwrap().to_owned(),
            dir,
        };
        ws.ok(&["synth", "--config", &ws.config]);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn p(&self, rel: &str) -> String {
        self.path(rel).to_str().unwrap().to_owned()
    }

    fn run(&self, args: &[&str]) -> Output {
        netcast(args, &[])
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }
}

fn netcast(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_netcast"));
    cmd.args(args).env_remove("NETCAST_OUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn synth_writes_scenario_and_manifest() {
    let ws = Workspace::new();
    let files = snapshot(&ws.path("data"));
    let names: Vec<String> = files.keys().map(|p| p.display().to_string()).collect();
    assert_eq!(
        names,
        [
            "colocation.csv",
            "districts.csv",
            "manifest.json",
            "panel.csv",
            "static_edges.csv",
            "staying_put.csv",
            "truth.json"
        ]
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&files[Path::new("manifest.json")]).unwrap();
    for entry in manifest["files"].as_array().unwrap() {
        let bytes = &files[Path::new(entry["name"].as_str().unwrap())];
        let hex: String = Sha256::digest(bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        assert_eq!(entry["sha256"], hex.as_str());
        assert_eq!(entry["bytes"], bytes.len() as u64);
    }

    // same seed, same bytes; another seed, other bytes
    ws.ok(&["synth", "--config", &ws.config, "--out-dir", &ws.p("again")]);
    assert_eq!(snapshot(&ws.path("again")), files);
    ws.ok(&[
        "synth",
        "--config",
        &ws.config,
        "--out-dir",
        &ws.p("other"),
        "--seed",
        "9",
    ]);
    assert_ne!(
        snapshot(&ws.path("other"))[Path::new("panel.csv")],
        files[Path::new("panel.csv")]
    );
}

#[test]
fn synth_into_unwritable_path_fails() {
    let ws = Workspace::new();
    std::fs::write(ws.path("blocker"), "x").unwrap();
    let out = ws.run(&[
        "synth",
        "--config",
        &ws.config,
        "--out-dir",
        &ws.p("blocker/sub"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn fit_streams_log_and_is_deterministic() {
    let ws = Workspace::new();
    let a = ws.ok(&["fit", "--config", &ws.config, "--out", &ws.p("a/ck.json")]);
    let b = ws.ok(&["fit", "--config", &ws.config, "--out", &ws.p("b/ck.json")]);
    assert_eq!(snapshot(&ws.path("a")), snapshot(&ws.path("b")));
    assert_eq!(a.stdout, b.stdout);
    let log = std::fs::read(ws.path("a/ck.log.jsonl")).unwrap();
    assert_eq!(log, a.stdout);
    let lines: Vec<serde_json::Value> = log
        .split(|&c| c == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 30);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["train_nll"].is_f64() && l["val_nll"].is_f64());
    }

    let ck: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path("a/ck.json")).unwrap()).unwrap();
    assert_eq!(ck["train_end_week"], 14);
    assert_eq!(ck["family"], "zip");
    // the knots of every week margin stop at the last training week
    for term in ck["design"]["terms"].as_array().unwrap() {
        for (f, knots) in term["spec"]["features"]
            .as_array()
            .unwrap()
            .iter()
            .zip(term["smooth"]["knots"].as_array().unwrap())
        {
            if f == "week" {
                assert_eq!(
                    knots.as_array().unwrap().last().unwrap().as_f64().unwrap(),
                    14.0
                );
            }
        }
    }

    ws.ok(&[
        "fit",
        "--config",
        &ws.config,
        "--family",
        "nb",
        "--out",
        &ws.p("nb/ck.json"),
    ]);
    let nb: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path("nb/ck.json")).unwrap()).unwrap();
    assert_eq!(nb["family"], "nb");
    ws.ok(&[
        "fit",
        "--config",
        &ws.config,
        "--seed",
        "5",
        "--out",
        &ws.p("s5/ck.json"),
    ]);
    assert_ne!(
        std::fs::read(ws.path("s5/ck.json")).unwrap(),
        std::fs::read(ws.path("a/ck.json")).unwrap()
    );
}

#[test]
fn divergence_exits_numerical_and_keeps_the_log() {
    let ws = Workspace::new();
    let text = std::fs::read_to_string(ws.path("run.toml"))
        .unwrap()
        .replace("learning_rate = 0.01", "learning_rate = 230.0");
    std::fs::write(ws.path("run.toml"), text).unwrap();
    let out = ws.run(&["fit", "--config", &ws.config, "--out", &ws.p("d/ck.json")]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!ws.path("d/ck.json").exists());
    let log = std::fs::read(ws.path("d/ck.log.jsonl")).unwrap();
    assert_eq!(log, out.stdout);
    assert!(!log.is_empty());
}

#[test]
fn output_dir_from_environment() {
    let ws = Workspace::new();
    let target = ws.path("from_env");
    let out = netcast(
        &["fit", "--config", &ws.config],
        &[("NETCAST_OUT_DIR", &target)],
    );
    assert!(out.status.success());
    assert!(target.join("checkpoint.json").exists());
    assert!(!ws.path("out").exists());
}

#[test]
fn ensemble_is_deterministic() {
    let ws = Workspace::new();
    for d in ["a", "b"] {
        ws.ok(&[
            "ensemble",
            "--config",
            &ws.config,
            "--members",
            "3",
            "--out",
            &ws.p(&format!("{d}/ens.json")),
        ]);
    }
    assert_eq!(snapshot(&ws.path("a")), snapshot(&ws.path("b")));
    let e: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path("a/ens.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = e["members"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [0, 1, 2]);
    let one = ws.run(&[
        "ensemble",
        "--config",
        &ws.config,
        "--members",
        "1",
        "--out",
        &ws.p("c/ens.json"),
    ]);
    assert_eq!(code(&one), 1);
}

#[test]
fn evaluate_outputs_and_determinism() {
    let ws = Workspace::new();
    for d in ["a", "b"] {
        ws.ok(&["evaluate", "--config", &ws.config, "--out-dir", &ws.p(d)]);
    }
    let a = snapshot(&ws.path("a"));
    assert_eq!(a, snapshot(&ws.path("b")));
    let names: Vec<String> = a.keys().map(|p| p.display().to_string()).collect();
    assert_eq!(
        names,
        [
            "calibration.json",
            "forecasts.csv",
            "scores.csv",
            "scores.txt"
        ]
    );
    let scores = String::from_utf8(a[Path::new("scores.csv")].clone()).unwrap();
    assert_eq!(scores.lines().count(), 1 + 3 * 3);
    let cal: serde_json::Value = serde_json::from_slice(&a[Path::new("calibration.json")]).unwrap();
    assert_eq!(cal["report"]["n"], 3 * 12 * 4);
    assert!(cal["report"]["spearman"].is_f64());
}

#[test]
fn evaluate_mean_only_has_one_row_over_default_folds() {
    let ws = Workspace::new();
    // a 40-week panel starting at week 9 covers the default folds
    let text = std::fs::read_to_string(ws.path("run.toml"))
        .unwrap()
        .replace("n_weeks = 12", "n_weeks = 40")
        .replace("first_train_end = 12\nstep = 2\ncount = 3\n", "");
    std::fs::write(ws.path("run.toml"), text).unwrap();
    ws.ok(&["synth", "--config", &ws.config]);
    let out = ws.ok(&[
        "evaluate",
        "--config",
        &ws.config,
        "--models",
        "mean",
        "--out-dir",
        &ws.p("ev"),
    ]);
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 2, "{table}");
    let weeks: Vec<&str> = rows[0]
        .split_whitespace()
        .skip(1)
        .filter(|w| *w != "wk")
        .collect();
    assert_eq!(weeks, ["32", "35", "38", "41", "44", "47"]);
    assert!(rows[1].starts_with("mean"));
    // no fitted model, so no calibration outputs
    assert!(!ws.path("ev/calibration.json").exists());
    let bad = ws.run(&[
        "evaluate", "--config", &ws.config, "--folds", "30:3:9", "--models", "mean",
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn covariance_report_and_render() {
    let ws = Workspace::new();
    let ck = ws.p("m/ck.json");
    ws.ok(&["fit", "--config", &ws.config, "--out", &ck]);
    ws.ok(&[
        "forecast",
        "--config",
        &ws.config,
        "--checkpoint",
        &ck,
        "--out",
        &ws.p("m/fc.csv"),
    ]);
    for d in ["a", "b"] {
        ws.ok(&[
            "covariance",
            "--config",
            &ws.config,
            "--checkpoint",
            &ck,
            "--out",
            &ws.p(&format!("m/cov_{d}.json")),
        ]);
    }
    assert_eq!(
        std::fs::read(ws.path("m/cov_a.json")).unwrap(),
        std::fs::read(ws.path("m/cov_b.json")).unwrap()
    );
    for d in ["a", "b"] {
        ws.ok(&[
            "report",
            "--checkpoint",
            &ck,
            "--covariance",
            &ws.p("m/cov_a.json"),
            "--forecasts",
            &ws.p("m/fc.csv"),
            "--out-dir",
            &ws.p(&format!("r{d}")),
        ]);
    }
    let files = snapshot(&ws.path("ra"));
    assert_eq!(files, snapshot(&ws.path("rb")));
    for t in [
        "term_lagged_rate",
        "term_gini_week",
        "term_staying_put_week",
        "term_mds",
    ] {
        assert!(files.contains_key(Path::new(&format!("{t}.svg"))), "{t}");
        assert!(files.contains_key(Path::new(&format!("{t}.csv"))), "{t}");
    }
    assert_eq!(
        files
            .keys()
            .filter(|k| k.display().to_string().starts_with("fan_district_"))
            .count(),
        2 * 12
    );

    // the lagged-rate CSV carries a band around the effect
    let line = String::from_utf8(files[Path::new("term_lagged_rate.csv")].clone()).unwrap();
    assert!(line.starts_with("x,effect,lower,upper\n"));
    for row in line.lines().skip(1) {
        let v: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3]);
    }

    // heatmap axes span the training range of both margins
    let ckv: serde_json::Value = serde_json::from_slice(&std::fs::read(&ck).unwrap()).unwrap();
    let term = ckv["design"]["terms"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["spec"]["name"] == "gini_week")
        .unwrap();
    let knots = term["smooth"]["knots"].as_array().unwrap();
    let end = |k: &serde_json::Value, last: bool| {
        let a = k.as_array().unwrap();
        a[if last { a.len() - 1 } else { 0 }].as_f64().unwrap()
    };
    let svg = String::from_utf8(files[Path::new("term_gini_week.svg")].clone()).unwrap();
    let desc = format!(
        "<desc>x range [{}, {}]; y range [{}, {}]</desc>",
        end(&knots[0], false),
        end(&knots[0], true),
        end(&knots[1], false),
        end(&knots[1], true)
    );
    assert!(svg.contains(&desc), "{desc}");

    // re-rendering a CSV reproduces the SVG
    for stem in ["term_lagged_rate", "term_gini_week", "fan_district_3"] {
        let out = ws.p(&format!("{stem}.svg"));
        ws.ok(&[
            "render",
            "--csv",
            &ws.p(&format!("ra/{stem}.csv")),
            "--out",
            &out,
        ]);
        assert_eq!(
            std::fs::read(&out).unwrap(),
            files[Path::new(&format!("{stem}.svg"))]
        );
    }

    let no_cov = ws.run(&[
        "report",
        "--checkpoint",
        &ck,
        "--bands",
        "--out-dir",
        &ws.p("rc"),
    ]);
    assert_eq!(code(&no_cov), 1);
    assert!(String::from_utf8_lossy(&no_cov.stderr).contains("covariance"));
}

#[test]
fn config_errors_and_defaults() {
    let ws = Workspace::new();
    let defaults = ws.ok(&["config", "--defaults"]).stdout;
    std::fs::write(ws.path("d.toml"), &defaults).unwrap();
    assert_eq!(
        ws.ok(&["config", "--config", &ws.p("d.toml")]).stdout,
        defaults
    );
    let text = String::from_utf8(defaults).unwrap();
    for section in [
        "[data]",
        "[training]",
        "[evaluation]",
        "[output]",
        "[terms]",
        "[gnn]",
        "[synth]",
    ] {
        assert!(text.contains(section), "{section}");
    }

    std::fs::write(ws.path("bad.toml"), "[gnn]\nwidth = 3\n").unwrap();
    for cmd in ["fit", "evaluate"] {
        let out = ws.run(&[cmd, "--config", &ws.p("bad.toml")]);
        assert_eq!(code(&out), 1, "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
    }
    assert_eq!(
        code(&ws.run(&["fit", "--config", &ws.config, "--family", "poisson"])),
        1
    );
    assert_eq!(code(&ws.run(&["fit", "--no-such-flag"])), 1);
    assert_eq!(code(&ws.run(&["fit", "--help"])), 0);
    let missing = ws.run(&[
        "fit",
        "--config",
        &ws.config,
        "--data-dir",
        &ws.p("nowhere"),
    ]);
    assert_eq!(code(&missing), 2);
}
