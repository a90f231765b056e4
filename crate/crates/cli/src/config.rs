//! Run configuration. Keys carry their units (`duration_s`, `peak_force_n`)
//! and relative paths resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use siva::physics::{ModelSpec, ParameterSet};
use siva::signal::PreprocessSettings;
use siva::sim::IvpConfig;
use siva::sindy::{FunctionLibrary, DEFAULT_MAX_ITERS, DEFAULT_THRESHOLD};
use siva::train::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing `{0}` section")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Coefficient values used by `simulate`, keyed by coefficient name.
    #[serde(default)]
    pub truth: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub preprocessing: Option<PreprocessConfig>,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub ivp: IvpConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub sindy: Option<SindyConfig>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub cases: Vec<SimulationCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationCase {
    pub name: String,
    pub initial_displacement_m: Vec<f64>,
    pub initial_velocity_m_per_s: Vec<f64>,
    #[serde(default)]
    pub force: Option<ForceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceConfig {
    /// Recorded force, one column per degree of freedom.
    Csv {
        path: PathBuf,
        #[serde(default)]
        cutoff_s: Option<f64>,
    },
    /// A half-sine pulse starting at `t = 0`, e.g. a hammer blow.
    HalfSine { peak_force_n: Vec<f64>, duration_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub training: DatasetConfig,
    #[serde(default)]
    pub validation: Vec<DatasetConfig>,
}

/// One experiment. Missing displacement or velocity files are derived from
/// the acceleration by the preprocessing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub acceleration_csv: PathBuf,
    #[serde(default)]
    pub displacement_csv: Option<PathBuf>,
    #[serde(default)]
    pub velocity_csv: Option<PathBuf>,
    #[serde(default)]
    pub force_csv: Option<PathBuf>,
    /// Force samples after this time are treated as zero.
    #[serde(default)]
    pub force_cutoff_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "default_filter_order")]
    pub filter_order: usize,
    #[serde(default = "default_bandpass")]
    pub bandpass_hz: [f64; 2],
    #[serde(default = "default_highpass")]
    pub highpass_hz: f64,
    #[serde(default)]
    pub target_rate_hz: Option<f64>,
    #[serde(default)]
    pub start_at_s: f64,
}

fn default_filter_order() -> usize {
    PreprocessSettings::default().filter_order
}

fn default_bandpass() -> [f64; 2] {
    PreprocessSettings::default().bandpass_hz
}

fn default_highpass() -> f64 {
    PreprocessSettings::default().highpass_hz
}

impl PreprocessConfig {
    pub fn settings(&self) -> PreprocessSettings {
        PreprocessSettings {
            filter_order: self.filter_order,
            bandpass_hz: self.bandpass_hz,
            highpass_hz: self.highpass_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    I,
    II,
    III,
}

impl Approach {
    pub fn label(self) -> &'static str {
        match self {
            Approach::I => "I",
            Approach::II => "II",
            Approach::III => "III",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreOn {
    Training,
    Validation,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub approaches: Vec<Approach>,
    /// Generator draws for Approach I.
    pub draw_count: usize,
    /// First harvested epoch for Approaches II and III. Defaults to the
    /// detected convergence epoch, or half the run when none was found.
    pub harvest_from_epoch: Option<usize>,
    pub score_on: ScoreOn,
    /// Let Approach III also consider the Approach I and II estimates.
    pub include_summary_candidates: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            approaches: vec![Approach::I, Approach::II, Approach::III],
            draw_count: 1000,
            harvest_from_epoch: None,
            score_on: ScoreOn::Training,
            include_summary_candidates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SindyConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub library: FunctionLibrary,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl RunConfig {
    /// Parses `path`, resolves relative paths against its directory and
    /// applies a seed override.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_seed(seed);
        Ok(cfg)
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.training.seed = self.seed;
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(data) = &mut self.data {
            for d in std::iter::once(&mut data.training).chain(data.validation.iter_mut()) {
                fix(&mut d.acceleration_csv);
                for p in [&mut d.displacement_csv, &mut d.velocity_csv, &mut d.force_csv].into_iter().flatten() {
                    fix(p);
                }
            }
        }
        if let Some(sim) = &mut self.simulation {
            for c in &mut sim.cases {
                if let Some(ForceConfig::Csv { path, .. }) = &mut c.force {
                    fix(path);
                }
            }
        }
    }

    pub fn model(&self) -> Result<&ModelSpec, ConfigError> {
        let m = self.model.as_ref().ok_or(ConfigError::Missing("model"))?;
        m.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(m)
    }

    pub fn data(&self) -> Result<&DataConfig, ConfigError> {
        self.data.as_ref().ok_or(ConfigError::Missing("data"))
    }

    /// The `truth` table in model order.
    pub fn truth(&self) -> Result<ParameterSet, ConfigError> {
        let model = self.model()?;
        let table = self.truth.as_ref().ok_or(ConfigError::Missing("truth"))?;
        let mut values = Vec::with_capacity(model.coefficients.len());
        for c in &model.coefficients {
            let v = table
                .get(&c.name)
                .ok_or_else(|| ConfigError::Invalid(format!("truth has no value for `{}`", c.name)))?;
            values.push(*v);
        }
        if let Some(extra) = table.keys().find(|k| !model.coefficients.iter().any(|c| &c.name == *k)) {
            return Err(ConfigError::Invalid(format!("truth names unknown coefficient `{extra}`")));
        }
        ParameterSet::new(model, values).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sindy(&self) -> Result<&SindyConfig, ConfigError> {
        let s = self.sindy.as_ref().ok_or(ConfigError::Missing("sindy"))?;
        if s.library.is_empty() {
            return Err(ConfigError::Invalid("sindy library is empty".into()));
        }
        Ok(s)
    }
}
