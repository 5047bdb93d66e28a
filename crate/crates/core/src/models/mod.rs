//! Probabilistic policy models behind a single contract: given a state
//! vector, return a distribution over the `K` actions.

mod hyper;
pub mod logreg;
pub mod mlp;
pub mod riskscore;
pub mod tree;

pub use hyper::{sample_hyperparams, DatasetProfile, HyperparamSpace, ModelConfig, SelectionMetric};
pub use logreg::LogisticRegression;
pub use mlp::Mlp;
pub use riskscore::RiskScore;
pub use tree::{Criterion, DecisionTree};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staterep::StateMatrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Dt,
    Rs,
    Mlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Dt => "dt",
            ModelKind::Rs => "rs",
            ModelKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelParams {
    Lr(LogisticRegression),
    Dt(DecisionTree),
    Rs(RiskScore),
    Mlp(Mlp),
}

/// A fitted model together with the feature and class names it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub class_labels: Vec<String>,
    #[serde(flatten)]
    pub params: ModelParams,
}

impl PolicyModel {
    pub fn new(train: &StateMatrix, params: ModelParams) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: train.feature_names.clone(),
            class_labels: train.action_labels.clone(),
            params,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Lr(_) => ModelKind::Lr,
            ModelParams::Dt(_) => ModelKind::Dt,
            ModelParams::Rs(_) => ModelKind::Rs,
            ModelParams::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Probabilities for one state without name checking.
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.params {
            ModelParams::Lr(m) => m.predict_proba(x),
            ModelParams::Dt(m) => m.predict_proba(x),
            ModelParams::Rs(m) => m.predict_proba(x),
            ModelParams::Mlp(m) => m.predict_proba(x),
        }
    }

    pub fn check_features(&self, names: &[String]) -> Result<()> {
        if names != self.feature_names.as_slice() {
            let first = names
                .iter()
                .zip(&self.feature_names)
                .position(|(a, b)| a != b)
                .unwrap_or(names.len().min(self.feature_names.len()));
            return Err(Error::FeatureMismatch(format!(
                "model expects {} features, got {} (first difference at position {first})",
                self.feature_names.len(),
                names.len()
            )));
        }
        Ok(())
    }

    /// Probabilities for a named state vector.
    pub fn predict_proba(&self, names: &[String], x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(names)?;
        Ok(self.predict_row(x))
    }

    /// Probabilities for every row of a state matrix.
    pub fn predict_matrix(&self, m: &StateMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_features(&m.feature_names)?;
        if m.action_labels != self.class_labels {
            return Err(Error::FeatureMismatch("action labels differ from the training labels".into()));
        }
        Ok(m.rows().map(|x| self.predict_row(x)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported model format version {}", m.format_version)));
        }
        Ok(m)
    }
}

/// Fits one candidate. `val` is used only by models with early stopping.
pub fn fit_model(config: &ModelConfig, train: &StateMatrix, val: &StateMatrix, seed: u64) -> Result<PolicyModel> {
    let params = match config {
        ModelConfig::Lr { c, max_iter } => ModelParams::Lr(logreg::fit_logreg(train, *c, *max_iter)?),
        ModelConfig::Dt { criterion, max_depth, min_samples_split } => {
            ModelParams::Dt(tree::fit_tree(train, *criterion, Some(*max_depth), *min_samples_split)?)
        }
        ModelConfig::Rs { max_coef, max_size, pos_weight } => {
            ModelParams::Rs(riskscore::fit_riskscore(train, *max_coef, *max_size, *pos_weight)?)
        }
        ModelConfig::Mlp { hidden, learning_rate, batch_size, max_epochs, patience } => {
            let opts = mlp::MlpOptions {
                hidden: hidden.clone(),
                learning_rate: *learning_rate,
                batch_size: *batch_size,
                max_epochs: *max_epochs,
                patience: *patience,
                seed,
            };
            ModelParams::Mlp(mlp::fit_mlp(train, val, &opts)?.0)
        }
    };
    Ok(PolicyModel::new(train, params))
}

pub(crate) fn require_two_classes(train: &StateMatrix) -> Result<()> {
    if train.n_present_classes() < 2 {
        return Err(Error::Fit("training data contains a single class".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
