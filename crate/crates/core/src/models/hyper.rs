use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::{Criterion, ModelKind};
use crate::util;

/// Which of the reference cohorts a dataset resembles; selects the
/// experiment-dependent search sets, the early-stopping patience and the
/// candidate-selection metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetProfile {
    Adni,
    Ra,
    #[default]
    #[serde(alias = "sepsis", alias = "copd")]
    SepsisCopd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Auroc,
    Accuracy,
}

impl SelectionMetric {
    pub fn metric(self) -> crate::metrics::Metric {
        match self {
            SelectionMetric::Auroc => crate::metrics::Metric::Auroc,
            SelectionMetric::Accuracy => crate::metrics::Metric::Accuracy,
        }
    }
}

impl DatasetProfile {
    pub fn selection_metric(self) -> SelectionMetric {
        match self {
            DatasetProfile::Adni | DatasetProfile::Ra => SelectionMetric::Auroc,
            DatasetProfile::SepsisCopd => SelectionMetric::Accuracy,
        }
    }
}

/// One sampled hyperparameter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelConfig {
    Lr { c: f64, max_iter: usize },
    Dt { criterion: Criterion, max_depth: usize, min_samples_split: usize },
    Rs { max_coef: i64, max_size: usize, pos_weight: f64 },
    Mlp { hidden: Vec<usize>, learning_rate: f64, batch_size: usize, max_epochs: usize, patience: usize },
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Lr { .. } => ModelKind::Lr,
            ModelConfig::Dt { .. } => ModelKind::Dt,
            ModelConfig::Rs { .. } => ModelKind::Rs,
            ModelConfig::Mlp { .. } => ModelKind::Mlp,
        }
    }
}

/// Discrete search sets per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    pub lr_c: Vec<f64>,
    pub lr_max_iter: usize,
    pub dt_criterion: Vec<Criterion>,
    pub dt_min_samples_split: Vec<usize>,
    pub dt_max_depth: Vec<usize>,
    pub rs_max_coef: Vec<i64>,
    pub rs_max_size: Vec<usize>,
    pub rs_pos_weight: Vec<f64>,
    pub mlp_hidden: Vec<Vec<usize>>,
    pub mlp_learning_rate: Vec<f64>,
    pub mlp_max_epochs: Vec<usize>,
    pub mlp_batch_size: Vec<usize>,
    pub mlp_patience: usize,
}

impl HyperparamSpace {
    pub fn for_profile(profile: DatasetProfile) -> Self {
        let (depth, lr, epochs, batch, patience) = match profile {
            DatasetProfile::Adni => (vec![3, 5, 7, 9, 11, 13, 15], vec![1e-3, 1e-2], vec![20], vec![16, 32, 64], 5),
            DatasetProfile::Ra => (vec![2, 3, 4, 5, 6, 7, 8], vec![1e-3, 1e-2], vec![50], vec![128, 256], 5),
            DatasetProfile::SepsisCopd => (
                vec![3, 5, 7, 9, 11, 13, 15],
                vec![1e-4, 1e-3, 1e-2],
                vec![500],
                vec![256, 512, 1024],
                25,
            ),
        };
        Self {
            lr_c: vec![1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3],
            lr_max_iter: 2000,
            dt_criterion: vec![Criterion::Gini, Criterion::Entropy],
            dt_min_samples_split: vec![2, 4, 8, 16, 32, 64, 128],
            dt_max_depth: depth,
            rs_max_coef: vec![3, 4, 5, 6, 7, 8],
            rs_max_size: vec![3, 4, 5, 6, 7],
            rs_pos_weight: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            mlp_hidden: vec![vec![16], vec![32], vec![64], vec![16, 16], vec![32, 32], vec![64, 64]],
            mlp_learning_rate: lr,
            mlp_max_epochs: epochs,
            mlp_batch_size: batch,
            mlp_patience: patience,
        }
    }
}

/// Draws `n` configurations i.i.d. uniformly from the declared sets.
pub fn sample_hyperparams(space: &HyperparamSpace, kind: ModelKind, seed: u64, n: usize) -> Vec<ModelConfig> {
    let mut rng = util::rng(seed);
    (0..n)
        .map(|_| {
            let rng = &mut rng;
            match kind {
                ModelKind::Lr => ModelConfig::Lr {
                    c: *space.lr_c.choose(rng).expect("nonempty lr_c"),
                    max_iter: space.lr_max_iter,
                },
                ModelKind::Dt => ModelConfig::Dt {
                    criterion: *space.dt_criterion.choose(rng).expect("nonempty dt_criterion"),
                    max_depth: *space.dt_max_depth.choose(rng).expect("nonempty dt_max_depth"),
                    min_samples_split: *space.dt_min_samples_split.choose(rng).expect("nonempty dt_min_samples_split"),
                },
                ModelKind::Rs => ModelConfig::Rs {
                    max_coef: *space.rs_max_coef.choose(rng).expect("nonempty rs_max_coef"),
                    max_size: *space.rs_max_size.choose(rng).expect("nonempty rs_max_size"),
                    pos_weight: *space.rs_pos_weight.choose(rng).expect("nonempty rs_pos_weight"),
                },
                ModelKind::Mlp => ModelConfig::Mlp {
                    hidden: space.mlp_hidden.choose(rng).expect("nonempty mlp_hidden").clone(),
                    learning_rate: *space.mlp_learning_rate.choose(rng).expect("nonempty mlp_learning_rate"),
                    batch_size: *space.mlp_batch_size.choose(rng).expect("nonempty mlp_batch_size"),
                    max_epochs: *space.mlp_max_epochs.choose(rng).expect("nonempty mlp_max_epochs"),
                    patience: space.mlp_patience,
                },
            }
        })
        .collect()
}
