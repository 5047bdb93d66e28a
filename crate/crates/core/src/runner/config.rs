use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DatasetProfile, ModelKind, SelectionMetric};
use crate::staterep::{enumerate_standard_states, AggOp, StateSpec};
use crate::synthgen::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generator(GeneratorConfig),
    /// Episodes in JSONL or long CSV plus a schema file. Relative paths are
    /// resolved against the config file's directory.
    File { episodes: PathBuf, schema: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_models")]
    pub n_models: usize,
    #[serde(default = "default_bucket_width")]
    pub bucket_width: usize,
    /// Defaults to the experiment's states.
    #[serde(default)]
    pub states: Option<Vec<StateSpec>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { n_models: default_sweep_models(), bucket_width: default_bucket_width(), states: None }
    }
}

/// A (state index, model) pair of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRef {
    pub state: usize,
    pub model: ModelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionConfig {
    pub reference: CellRef,
    pub comparison: CellRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSource,
    #[serde(default)]
    pub profile: DatasetProfile,
    /// Overrides the profile's selection metric.
    #[serde(default)]
    pub selection_metric: Option<SelectionMetric>,
    /// Aggregation operator of the default state list.
    #[serde(default = "default_agg")]
    pub agg: AggOp,
    #[serde(default)]
    pub states: Option<Vec<StateSpec>>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_five")]
    pub n_candidates: usize,
    #[serde(default = "default_five")]
    pub n_splits: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frac")]
    pub test_frac: f64,
    #[serde(default = "default_frac")]
    pub val_frac: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_max_stage")]
    pub max_stage: usize,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub confusion: Option<ConfusionConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_agg() -> AggOp {
    AggOp::Sum
}
fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Lr, ModelKind::Dt]
}
fn default_five() -> usize {
    5
}
fn default_frac() -> f64 {
    0.2
}
fn default_bootstrap() -> usize {
    1000
}
fn default_level() -> f64 {
    0.95
}
fn default_max_stage() -> usize {
    10
}
fn default_sweep_models() -> usize {
    500
}
fn default_bucket_width() -> usize {
    5
}

impl ExperimentConfig {
    pub fn new(name: &str, data: DataSource) -> Self {
        serde_json::from_value(serde_json::json!({ "name": name, "data": data })).expect("defaults deserialize")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        if let DataSource::File { episodes, schema } = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [episodes, schema] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces every seed in the config, including the generator's.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let DataSource::Generator(g) = &mut self.data {
            g.seed = seed;
        }
    }

    pub fn state_specs(&self) -> Vec<StateSpec> {
        self.states.clone().unwrap_or_else(|| enumerate_standard_states(self.agg))
    }

    pub fn metric(&self) -> SelectionMetric {
        self.selection_metric.unwrap_or_else(|| self.profile.selection_metric())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_candidates == 0 || self.n_splits == 0 {
            return bad("n_candidates and n_splits must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("no model kinds configured".into());
        }
        let states = self.state_specs();
        if states.is_empty() {
            return bad("no state representations configured".into());
        }
        for s in &states {
            s.validate()?;
        }
        if self.bootstrap == 0 || !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("invalid bootstrap settings: B={}, level={}", self.bootstrap, self.level));
        }
        if self.max_stage == 0 {
            return bad("max_stage must be at least 1".into());
        }
        if let Some(c) = &self.confusion {
            for r in [c.reference, c.comparison] {
                if r.state >= states.len() || !self.models.contains(&r.model) {
                    return bad(format!("confusion cell {r:?} is not part of the experiment grid"));
                }
            }
        }
        if let DataSource::Generator(g) = &self.data {
            g.validate()?;
        }
        Ok(())
    }
}
