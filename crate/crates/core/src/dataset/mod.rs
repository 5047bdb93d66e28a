//! Episode data: schema, loading, preprocessing and patient-level splits.

mod load;
mod preprocess;
mod split;

pub use load::{load_episodes, parse_csv, parse_jsonl, write_jsonl};
pub use preprocess::{fit_preprocessor, EncodedColumn, NumericEpisode, NumericEpisodeSet, Preprocessor, VariableStats, LOG_EPSILON};
pub use split::{split_dataset, split_indices, Fold, SplitIndices};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// A raw context value as it appears in the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Cat(s) => s.trim().parse().ok(),
        }
    }

    /// Category token; numbers are rendered with their shortest decimal form.
    pub fn token(&self) -> String {
        match self {
            Value::Num(x) => x.to_string(),
            Value::Cat(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Standardize,
    LogStandardize,
    DiscretizeQuintiles,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    LocfThenMean,
    LocfThenMode,
    Constant(Value),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default)]
    pub transform: Option<Transform>,
    #[serde(default)]
    pub imputation: Option<Imputation>,
    #[serde(default = "default_true")]
    pub aggregate_eligible: bool,
    #[serde(default = "default_true")]
    pub lag_eligible: bool,
}

impl VariableSpec {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Numeric,
            transform: Some(Transform::Standardize),
            imputation: Some(Imputation::LocfThenMean),
            aggregate_eligible: true,
            lag_eligible: true,
        }
    }

    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Categorical,
            transform: Some(Transform::None),
            imputation: Some(Imputation::LocfThenMode),
            aggregate_eligible: true,
            lag_eligible: true,
        }
    }

    /// Marks the variable as static: neither aggregated nor lagged.
    pub fn fixed(mut self) -> Self {
        self.aggregate_eligible = false;
        self.lag_eligible = false;
        self
    }

    pub fn with_transform(mut self, t: Transform) -> Self {
        self.transform = Some(t);
        self
    }

    pub fn with_imputation(mut self, i: Imputation) -> Self {
        self.imputation = Some(i);
        self
    }

    pub fn transform(&self) -> Transform {
        self.transform.unwrap_or(match self.kind {
            VariableKind::Numeric => Transform::Standardize,
            VariableKind::Categorical => Transform::None,
        })
    }

    pub fn imputation(&self) -> Imputation {
        self.imputation.clone().unwrap_or(match self.kind {
            VariableKind::Numeric => Imputation::LocfThenMean,
            VariableKind::Categorical => Imputation::LocfThenMode,
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Schema(format!("variable '{}': {msg}", self.name)));
        match (self.kind, self.transform(), self.imputation()) {
            (VariableKind::Categorical, t, _) if t != Transform::None => {
                bad("categorical variables are one-hot encoded and take transform 'none'")
            }
            (VariableKind::Categorical, _, Imputation::LocfThenMean) => {
                bad("mean imputation requires a numeric variable")
            }
            (VariableKind::Numeric, _, Imputation::LocfThenMode) => {
                bad("mode imputation requires a categorical variable")
            }
            (VariableKind::Numeric, _, Imputation::Constant(Value::Cat(c)))
                if c.trim().parse::<f64>().is_err() =>
            {
                bad("constant imputation value must be numeric")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub variables: Vec<VariableSpec>,
    pub action_labels: Vec<String>,
    pub default_action: String,
    #[serde(default)]
    pub severity_column: Option<String>,
}

impl CohortSchema {
    pub fn new(variables: Vec<VariableSpec>, action_labels: Vec<String>, default_action: &str) -> Result<Self> {
        let schema = Self {
            variables,
            action_labels,
            default_action: default_action.to_string(),
            severity_column: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_labels.len() < 2 {
            return Err(Error::Schema("at least two actions are required".into()));
        }
        let mut seen = HashSet::new();
        for a in &self.action_labels {
            if !seen.insert(a) {
                return Err(Error::Schema(format!("duplicate action label '{a}'")));
            }
        }
        if !self.action_labels.contains(&self.default_action) {
            return Err(Error::Schema(format!(
                "default action '{}' is not a declared action",
                self.default_action
            )));
        }
        let mut names = HashSet::new();
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name '{}'", v.name)));
            }
            if ["patient_id", "t", "action", self.severity_name()].contains(&v.name.as_str()) {
                return Err(Error::Schema(format!("variable name '{}' is reserved", v.name)));
            }
            v.validate()?;
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.action_labels.len()
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.action_labels.iter().position(|a| a == label)
    }

    pub fn default_action_index(&self) -> usize {
        self.action_index(&self.default_action).expect("validated schema")
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Name of the severity column in CSV input (defaults to "severity").
    pub fn severity_name(&self) -> &str {
        self.severity_column.as_deref().unwrap_or("severity")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// One entry per schema variable, `None` when missing.
    pub context: Vec<Option<Value>>,
    /// Index into `CohortSchema::action_labels`.
    pub action: usize,
    pub severity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub patient_id: String,
    pub stages: Vec<Stage>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeSet {
    pub episodes: Vec<Episode>,
}

impl EpisodeSet {
    pub fn new(episodes: Vec<Episode>) -> Self {
        Self { episodes }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn n_stages(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            episodes: indices.iter().map(|&i| self.episodes[i].clone()).collect(),
        }
    }

    /// Checks every episode invariant against the schema.
    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        let mut ids = HashSet::new();
        for ep in &self.episodes {
            if ep.stages.is_empty() {
                return Err(Error::Schema(format!("patient '{}' has no stages", ep.patient_id)));
            }
            if !ids.insert(ep.patient_id.as_str()) {
                return Err(Error::Schema(format!("duplicate patient '{}'", ep.patient_id)));
            }
            for st in &ep.stages {
                if st.action >= schema.n_actions() {
                    return Err(Error::Schema(format!("unknown action index {}", st.action)));
                }
                if st.context.len() != schema.variables.len() {
                    return Err(Error::Schema(format!(
                        "patient '{}': context has {} values, schema declares {}",
                        ep.patient_id,
                        st.context.len(),
                        schema.variables.len()
                    )));
                }
            }
        }
        Ok(())
    }
}
