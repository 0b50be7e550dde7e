//! Experiment and sweep configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Adversary, AdversaryKind};
use crate::draa::{EpochSchedule, EstimatorKind, DEFAULT_LAMBDA_SCALE};
use crate::model::{BanditInstance, InstanceDescriptor};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
/// Smallest accepted `lambda_scale`.
pub const MIN_LAMBDA_SCALE: f64 = 16.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid instance: {0}")]
    Instance(#[from] crate::model::ModelError),
    #[error("invalid adversary: {0}")]
    Adversary(#[from] crate::adversary::AdversaryError),
    #[error("invalid algorithm settings: {0}")]
    Algorithm(#[from] crate::draa::DraaError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SeedSpec {
    List {
        list: Vec<u64>,
    },
    Range {
        count: u64,
        #[serde(default)]
        base: u64,
    },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List { list } => list.clone(),
            SeedSpec::Range { count, base } => (0..*count).map(|i| base + i).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default = "default_lambda_scale")]
    pub lambda_scale: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_lambda_scale() -> f64 {
    DEFAULT_LAMBDA_SCALE
}

fn default_delta() -> f64 {
    0.05
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self { estimator: EstimatorKind::Weighted, lambda_scale: DEFAULT_LAMBDA_SCALE, delta: default_delta() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Write the full per-round trace (large).
    #[serde(default)]
    pub trace: bool,
    /// Write the broadcast log as JSON lines.
    #[serde(default)]
    pub messages: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_checkpoints() -> usize {
    64
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), checkpoints: default_checkpoints(), trace: false, messages: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub horizon: u64,
    /// Permit a horizon shorter than the first epoch.
    #[serde(default)]
    pub allow_truncated_first_epoch: bool,
    pub seeds: SeedSpec,
    pub instance: InstanceDescriptor,
    #[serde(default)]
    pub adversary: AdversaryKind,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A config after validation, with its derived objects.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub instance: BanditInstance,
    pub schedule: EpochSchedule,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        let alg = &self.algorithm;
        if !(alg.delta > 0.0 && alg.delta < 1.0) {
            return Err(ConfigError::Invalid(format!("delta must lie in (0,1), got {}", alg.delta)));
        }
        if !(alg.lambda_scale >= MIN_LAMBDA_SCALE && alg.lambda_scale.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "lambda_scale must be at least {MIN_LAMBDA_SCALE}, got {}",
                alg.lambda_scale
            )));
        }
        if self.output.checkpoints == 0 {
            return Err(ConfigError::Invalid("output.checkpoints must be positive".into()));
        }
        let seeds = self.seeds.seeds();
        if seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        let instance = BanditInstance::new(&self.instance)?;
        Adversary::new(self.adversary.clone(), &instance)?;
        let schedule = EpochSchedule::for_instance(&instance, alg.lambda_scale, alg.delta, self.horizon)?;
        if schedule.base_length > self.horizon && !self.allow_truncated_first_epoch {
            return Err(ConfigError::Invalid(format!(
                "horizon {} is shorter than the first epoch ({} rounds); set allow_truncated_first_epoch = true to accept",
                self.horizon, schedule.base_length
            )));
        }
        Ok(Prepared { config: self.clone(), instance, schedule, seeds })
    }
}

/// One sweep dimension: a dotted path into the experiment config and the
/// values it takes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    pub path: String,
    pub values: Vec<toml::Value>,
    /// Display labels, one per value.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

impl SweepAxis {
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(labels) => labels[i].clone(),
            None => render_value(&self.values[i]),
        }
    }
}

fn render_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub schema_version: u32,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    pub base: ExperimentConfig,
    #[serde(rename = "axis")]
    pub axes: Vec<SweepAxis>,
}

fn default_max_points() -> usize {
    256
}

/// A point of the sweep grid: axis labels plus the patched config.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub labels: Vec<String>,
    pub config: ExperimentConfig,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }

    /// Expands the cross product of the axes, first axis slowest.
    pub fn points(&self) -> Result<Vec<SweepPoint>, ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(ConfigError::Invalid(format!("a sweep needs one or two axes, got {}", self.axes.len())));
        }
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(ConfigError::Invalid(format!("axis {} has no values", axis.name)));
            }
            if let Some(labels) = &axis.labels {
                if labels.len() != axis.values.len() {
                    return Err(ConfigError::Invalid(format!(
                        "axis {}: labels and values differ in length",
                        axis.name
                    )));
                }
            }
        }
        let total: usize = self.axes.iter().map(|a| a.values.len()).product();
        if total > self.max_points {
            return Err(ConfigError::Invalid(format!(
                "sweep has {total} points, more than max_points = {}",
                self.max_points
            )));
        }
        let base = toml::Value::try_from(&self.base).expect("config serializes");
        let mut points = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut picks = vec![0; self.axes.len()];
            for (slot, axis) in self.axes.iter().enumerate().rev() {
                picks[slot] = rem % axis.values.len();
                rem /= axis.values.len();
            }
            let mut value = base.clone();
            for (axis, &i) in self.axes.iter().zip(&picks) {
                set_path(&mut value, &axis.path, axis.values[i].clone())?;
            }
            let config: ExperimentConfig = value
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Invalid(format!("sweep point {index}: {e}")))?;
            let labels = self.axes.iter().zip(&picks).map(|(a, &i)| a.label(i)).collect();
            points.push(SweepPoint { index, labels, config });
        }
        Ok(points)
    }
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::Invalid("empty axis path".into()))?;
    let mut cur = root;
    for part in parts {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("axis path {path}: {part} is not inside a table")))?;
        cur = table.entry(part.to_owned()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table =
        cur.as_table_mut().ok_or_else(|| ConfigError::Invalid(format!("axis path {path} does not end in a table")))?;
    table.insert(last.to_owned(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
schema_version = 1
horizon = 20000

[seeds]
list = [7, 8]

[instance]
num_arms = 3
num_agents = 2
arm_sets = [[0, 1], [1, 2]]
means = [0.9, 0.5, 0.2]

[adversary]
kind = "budgeted_targeted"
arm = 1
magnitude = 0.5
budget = 100.0

[algorithm]
estimator = "naive"
lambda_scale = 16.0
delta = 0.1
"#;

    #[test]
    fn parses_and_prepares() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.algorithm.estimator, EstimatorKind::Naive);
        assert_eq!(cfg.seeds.seeds(), vec![7, 8]);
        assert_eq!(cfg.output.checkpoints, 64);
        let p = cfg.prepare().unwrap();
        assert_eq!(p.instance.min_agents_per_arm(), 1);
        assert!(p.schedule.num_epochs() >= 2);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn seed_range() {
        let s: SeedSpec = toml::from_str("count = 3\nbase = 10").unwrap();
        assert_eq!(s.seeds(), vec![10, 11, 12]);
    }

    #[test]
    fn rejects_bad_delta() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.algorithm.delta = 1.5;
        assert!(matches!(cfg.prepare(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rejects_short_horizon_unless_acknowledged() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.horizon = 10;
        assert!(cfg.prepare().is_err());
        cfg.allow_truncated_first_epoch = true;
        assert_eq!(cfg.prepare().unwrap().schedule.num_epochs(), 1);
    }

    #[test]
    fn rejects_unknown_fields_and_schema() {
        let text = SAMPLE.replace("horizon = 20000", "horizon = 20000\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = SAMPLE.replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(ExperimentConfig::from_toml(&text).unwrap().prepare(), Err(ConfigError::Schema(9))));
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.seeds = SeedSpec::List { list: vec![] };
        assert!(cfg.prepare().is_err());
    }

    #[test]
    fn sweep_expands_cross_product() {
        let spec = SweepSpec {
            schema_version: 1,
            max_points: 16,
            base: ExperimentConfig::from_toml(SAMPLE).unwrap(),
            axes: vec![
                SweepAxis {
                    name: "budget".into(),
                    path: "adversary.budget".into(),
                    values: vec![0.0.into(), 50.0.into(), 100.0.into()],
                    labels: None,
                },
                SweepAxis {
                    name: "estimator".into(),
                    path: "algorithm.estimator".into(),
                    values: vec!["weighted".into(), "naive".into()],
                    labels: None,
                },
            ],
        };
        let points = spec.points().unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(points[3].labels, vec!["50.0".to_string(), "naive".to_string()]);
        assert_eq!(points[3].config.algorithm.estimator, EstimatorKind::Naive);
        match &points[3].config.adversary {
            AdversaryKind::BudgetedTargeted { budget, .. } => assert_eq!(*budget, Some(50.0)),
            other => panic!("{other:?}"),
        }

        let mut capped = spec.clone();
        capped.max_points = 4;
        assert!(capped.points().is_err());
    }

    #[test]
    fn sweep_toml_with_arm_set_axis() {
        let text = format!(
            "schema_version = 1\n[[axis]]\nname = \"overlap\"\npath = \"instance.arm_sets\"\nvalues = [[[0, 1], [1, 2]], [[0, 1, 2], [0, 1, 2]]]\nlabels = [\"lmin1\", \"lmin2\"]\n\n[base]\n{}",
            SAMPLE.replace("[seeds]", "[base.seeds]")
                .replace("[instance]", "[base.instance]")
                .replace("[adversary]", "[base.adversary]")
                .replace("[algorithm]", "[base.algorithm]")
        );
        let spec = SweepSpec::from_toml(&text).unwrap();
        let points = spec.points().unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[1].labels, vec!["lmin2".to_string()]);
        let p = points[1].config.prepare().unwrap();
        assert_eq!(p.instance.min_agents_per_arm(), 2);
    }
}
