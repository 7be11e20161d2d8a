//! Flat JSON run configuration shared by `train` and `sweep`.

use serde::{Deserialize, Serialize};

use rationalize::data::SyntheticSpec;
use rationalize::model::{EncoderKind, SelectionKind};
use rationalize::training::TrainConfig;

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    30
}
fn default_patience() -> usize {
    5
}
fn default_lambda() -> f64 {
    0.1
}
fn default_k() -> f64 {
    0.2
}
fn default_p() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}
fn default_dim() -> usize {
    32
}
fn default_min_count() -> usize {
    1
}
fn default_encoder() -> EncoderKind {
    EncoderKind::MeanPool
}
fn default_selection() -> SelectionKind {
    SelectionKind::TopKUnigram
}

/// Everything a run needs in one flat file. Either the three `*_data` paths
/// or a `synthetic` block must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_k")]
    pub k_fraction: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub noise_enabled: bool,

    #[serde(default = "default_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_true")]
    pub trainable_embeddings: bool,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
    #[serde(default = "default_selection")]
    pub selection: SelectionKind,

    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_true")]
    pub lowercase: bool,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_data: Option<String>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_val: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lambda: self.lambda,
            k_fraction: self.k_fraction,
            p: self.p,
            seed: self.seed,
            noise_enabled: self.noise_enabled,
        }
    }
}
