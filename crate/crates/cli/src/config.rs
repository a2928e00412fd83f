//! Run configuration: one JSON document covering every subsystem.
//!
//! Missing keys take their defaults and unknown keys are rejected. Defaults
//! that come from the reference hyper-parameter table are marked
//! `"reference"` by `--print-config`; all others are `"design-decision"`.

use std::fmt;
use std::path::{Path, PathBuf};

use icode_mppi::paths::{make_ellipse, make_figure8, make_sine};
use icode_mppi::{CostConfig, DisturbanceConfig, MppiConfig, ReferencePath, TrainConfig, VehicleConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Ellipse,
    Sine,
    Figure8,
}

impl PathKind {
    pub const ALL: [PathKind; 3] = [PathKind::Ellipse, PathKind::Sine, PathKind::Figure8];

    pub fn name(self) -> &'static str {
        match self {
            PathKind::Ellipse => "ellipse",
            PathKind::Sine => "sine",
            PathKind::Figure8 => "figure8",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            PathKind::Ellipse => "Ellipse",
            PathKind::Sine => "Sine-wave",
            PathKind::Figure8 => "Figure-8",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nominal,
    Icode,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Nominal, Method::Icode];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nominal => "nominal",
            Method::Icode => "icode",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Method::Nominal => "Nominal-MPPI",
            Method::Icode => "ICODE-MPPI",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub kind: PathKind,
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    pub sine_length: f64,
    pub sine_amplitude: f64,
    pub sine_wavelength: f64,
    pub figure8_scale: f64,
    pub n_points: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            kind: PathKind::Ellipse,
            ellipse_a: 20.0,
            ellipse_b: 10.0,
            sine_length: 60.0,
            sine_amplitude: 5.0,
            sine_wavelength: 20.0,
            figure8_scale: 15.0,
            n_points: 600,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> CliResult<()> {
        let positive = [
            (self.ellipse_a, "path.ellipse_a > 0"),
            (self.ellipse_b, "path.ellipse_b > 0"),
            (self.sine_length, "path.sine_length > 0"),
            (self.sine_wavelength, "path.sine_wavelength > 0"),
            (self.figure8_scale, "path.figure8_scale > 0"),
        ];
        for (v, rule) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Validation(rule.into()));
            }
        }
        if !self.sine_amplitude.is_finite() {
            return Err(CliError::Validation("path.sine_amplitude finite".into()));
        }
        if self.n_points < 8 {
            return Err(CliError::Validation("path.n_points ≥ 8".into()));
        }
        Ok(())
    }

    pub fn build(&self, kind: PathKind) -> ReferencePath {
        match kind {
            PathKind::Ellipse => make_ellipse(self.ellipse_a, self.ellipse_b, self.n_points),
            PathKind::Sine => make_sine(self.sine_length, self.sine_amplitude, self.sine_wavelength, self.n_points),
            PathKind::Figure8 => make_figure8(self.figure8_scale, self.n_points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n_seeds: usize,
    pub trajectories: Vec<PathKind>,
    /// Where per-trajectory checkpoints live; `<out>/train_<path>` if unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_seeds: 5, trajectories: PathKind::ALL.to_vec(), checkpoint_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfiguration {
    pub vehicle: VehicleConfig,
    pub disturbance: DisturbanceConfig,
    pub mppi: MppiConfig,
    pub cost: CostConfig,
    pub train: TrainConfig,
    pub path: PathConfig,
    pub bench: BenchConfig,
    pub seed: u64,
    pub episode_duration: f64,
    pub method: Method,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for RunConfiguration {
    fn default() -> Self {
        Self {
            vehicle: VehicleConfig::default(),
            disturbance: DisturbanceConfig::default(),
            mppi: MppiConfig::default(),
            cost: CostConfig::default(),
            train: TrainConfig::default(),
            path: PathConfig::default(),
            bench: BenchConfig::default(),
            seed: 0,
            episode_duration: 60.0,
            method: Method::Nominal,
            checkpoint_path: None,
        }
    }
}

/// Leaves whose defaults are the reference hyper-parameters.
const REFERENCE_KEYS: &[&str] = &[
    "vehicle.wheelbase",
    "vehicle.a_max",
    "vehicle.delta_max",
    "vehicle.dt",
    "mppi.horizon",
    "mppi.num_samples",
    "mppi.temperature",
    "mppi.noise_cov_a",
    "mppi.noise_cov_omega",
    "train.lr",
    "train.hidden",
];

/// Count fields are unsigned, so a negative value would otherwise surface as
/// a type error; report the violated invariant instead.
const COUNT_RULES: &[(&str, &str, &str)] = &[
    ("mppi", "horizon", "horizon ≥ 1"),
    ("mppi", "num_samples", "num_samples ≥ 1"),
    ("mppi", "sg_window", "sg_window odd and > sg_order"),
    ("train", "batch_size", "train.batch_size ≥ 1"),
    ("train", "n_random", "train.n_random ≥ 1"),
    ("train", "epochs_per_iter", "train.epochs_per_iter ≥ 0"),
    ("train", "n_iterations", "train.n_iterations ≥ 0"),
    ("train", "unroll_steps", "train.unroll_steps ≥ 1"),
    ("bench", "n_seeds", "bench.n_seeds ≥ 1"),
    ("path", "n_points", "path.n_points ≥ 8"),
];

fn precheck_counts(raw: &Value) -> CliResult<()> {
    for (section, key, rule) in COUNT_RULES {
        if let Some(v) = raw.get(section).and_then(|s| s.get(key)).and_then(Value::as_i64) {
            if v < 0 {
                return Err(CliError::Validation((*rule).into()));
            }
        }
    }
    Ok(())
}

fn check(r: icode_mppi::Result<()>) -> CliResult<()> {
    r.map_err(|e| match e {
        icode_mppi::Error::InvalidConfig(m) => CliError::Validation(m),
        other => CliError::Validation(other.to_string()),
    })
}

impl RunConfiguration {
    pub fn validate(&self) -> CliResult<()> {
        check(self.vehicle.validate())?;
        check(self.disturbance.validate())?;
        check(self.mppi.validate())?;
        check(self.cost.validate())?;
        check(self.train.validate())?;
        self.path.validate()?;
        if !(self.episode_duration.is_finite() && self.episode_duration > 0.0) {
            return Err(CliError::Validation("episode_duration > 0".into()));
        }
        if self.mppi.sg_window > self.mppi.horizon {
            return Err(CliError::Validation("mppi.sg_window ≤ mppi.horizon".into()));
        }
        if self.bench.n_seeds < 1 {
            return Err(CliError::Validation("bench.n_seeds ≥ 1".into()));
        }
        if self.bench.trajectories.is_empty() {
            return Err(CliError::Validation("bench.trajectories must not be empty".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, origin: &Path) -> CliResult<Self> {
        let raw: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Parse { file: origin.to_path_buf(), message: e.to_string() })?;
        precheck_counts(&raw)?;
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| CliError::Parse {
            file: origin.to_path_buf(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// The resolved configuration with every leaf annotated by where its
    /// value came from.
    pub fn annotated(&self, user: Option<&Value>, cli_overrides: &[&str]) -> Value {
        let full = serde_json::to_value(self).expect("configuration serializes");
        annotate(&full, user, "", cli_overrides)
    }
}

fn annotate(v: &Value, user: Option<&Value>, prefix: &str, cli: &[&str]) -> Value {
    match v {
        Value::Object(map) => {
            let mut out = Map::new();
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.insert(k.clone(), annotate(child, user.and_then(|u| u.get(k)), &key, cli));
            }
            Value::Object(out)
        }
        leaf => {
            let source = if cli.contains(&prefix) {
                "command-line"
            } else if user.is_some() {
                "config-file"
            } else if REFERENCE_KEYS.contains(&prefix) {
                "reference"
            } else {
                "design-decision"
            };
            serde_json::json!({ "value": leaf, "source": source })
        }
    }
}

pub fn load_config(file: &Path) -> CliResult<RunConfiguration> {
    let text = std::fs::read_to_string(file)
        .map_err(|e| CliError::MissingInput(format!("config file {}: {e}", file.display())))?;
    RunConfiguration::from_json_str(&text, file)
}
