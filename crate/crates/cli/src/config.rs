//! Run configuration: a TOML document with one table per pipeline stage.

use std::path::{Path, PathBuf};

use netcast_core::evalharness::BenchModel;
use netcast_core::splines::DesignSpec;
use netcast_core::synthgen::ScenarioConfig;
use netcast_core::trainer::{FitConfig, ModelKind};
use netcast_core::{Family, GnnConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Environment variable overriding `output.dir`.
pub const OUT_DIR_ENV: &str = "NETCAST_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: PathBuf,
    pub panel: String,
    pub districts: String,
    pub colocation: String,
    pub static_edges: String,
    pub staying_put: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: "data".into(),
            panel: "panel.csv".into(),
            districts: "districts.csv".into(),
            colocation: "colocation.csv".into(),
            static_edges: "static_edges.csv".into(),
            staying_put: "staying_put.csv".into(),
        }
    }
}

impl DataSection {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub model: ModelKind,
    pub family: Family,
    /// Last training week; the next week is the validation week.
    pub train_end: i32,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ensemble_size: usize,
    pub unstructured_init_scale: f64,
    pub track_orthogonality: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let f = FitConfig::default();
        TrainingSection {
            model: ModelKind::Hybrid,
            family: f.family,
            train_end: 30,
            learning_rate: f.learning_rate,
            rmsprop_decay: f.rmsprop_decay,
            rmsprop_epsilon: f.rmsprop_epsilon,
            max_epochs: f.max_epochs,
            patience: f.patience,
            seed: f.seed,
            ensemble_size: f.ensemble_size,
            unstructured_init_scale: f.unstructured_init_scale,
            track_orthogonality: f.track_orthogonality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub first_train_end: i32,
    pub step: i32,
    pub count: usize,
    pub models: Vec<BenchModel>,
    /// Ensemble whose forecasts feed the calibration report. Only used
    /// when it is among `models`.
    pub calibration_model: BenchModel,
    pub calibration_members: usize,
    pub calibration_bins: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            first_train_end: 30,
            step: 3,
            count: 6,
            models: BenchModel::ALL.to_vec(),
            calibration_model: BenchModel::HybridZip,
            calibration_members: 10,
            calibration_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
    pub terms: DesignSpec,
    pub gnn: GnnConfig,
    pub synth: ScenarioConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::usage(format!("invalid config: {e}")))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| Failure::usage(format!("{}: {}", path.display(), f.message)))
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::usage(format!("cannot print config: {e}")))
    }

    pub fn fit_config(&self) -> FitConfig {
        let t = &self.training;
        FitConfig {
            learning_rate: t.learning_rate,
            rmsprop_decay: t.rmsprop_decay,
            rmsprop_epsilon: t.rmsprop_epsilon,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            family: t.family,
            ensemble_size: t.ensemble_size,
            unstructured_init_scale: t.unstructured_init_scale,
            track_orthogonality: t.track_orthogonality,
            design: self.terms.clone(),
            gnn: self.gnn.clone(),
        }
    }

    /// Output directory: an explicit flag, then the environment, then the file.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.dir.clone(),
        }
    }
}
