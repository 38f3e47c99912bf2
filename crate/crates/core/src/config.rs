//! Experiment configuration: one TOML document drives every pipeline stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataFormat, Feedback, PartitionStrategy};
use crate::error::ConfigError;
use crate::eval::{Cohort, EvalOptions};
use crate::mf::{Backbone, PretrainConfig};
use crate::numerics::{AdamConfig, DecayScope};
use crate::relation::{AdaptConfig, AdaptMode, ContrastiveSign, Normalization, RelationInit, ScoreActivation, DEFAULT_FALLBACK_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub seeds: Seeds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Relative paths resolve against the working directory.
    pub path: PathBuf,
    pub format: DataFormat,
    /// Only read for `generic_csv`; MovieLens is always explicit.
    #[serde(default)]
    pub feedback: Option<Feedback>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Key users have more than `delta` training ratings.
    Threshold,
    /// A `gamma` fraction of users, drawn with the split seed, are key users.
    Random,
    /// Every user is a key user (transductive baseline).
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_fraction: f64,
    /// Overrides `test_fraction` with an exact test-set size.
    pub test_count: Option<usize>,
    pub strategy: StrategyKind,
    pub delta: usize,
    pub gamma: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_fraction: 0.1, test_count: None, strategy: StrategyKind::Threshold, delta: 30, gamma: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: Backbone,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_dim() -> usize {
    16
}

fn default_hidden() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub learning_rate: f64,
    /// Adam L2 on the embedding tables.
    pub weight_decay: f64,
    pub decay_scope: DecayScope,
    /// Per-observation embedding penalty added to the loss.
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub global_bias: bool,
    pub neighbor_cap: usize,
    pub negative_ratio: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSection {
            learning_rate: d.adam.learning_rate,
            weight_decay: d.adam.weight_decay,
            decay_scope: d.adam.decay_scope,
            l2: d.l2,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            global_bias: d.global_bias,
            neighbor_cap: d.neighbor_cap,
            negative_ratio: d.negative_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub mode: AdaptMode,
    pub heads: usize,
    pub sample_size: usize,
    pub normalization: Normalization,
    pub score_activation: ScoreActivation,
    pub init: RelationInit,
    pub lambda: f64,
    pub contrastive_sign: ContrastiveSign,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub resample_keys: bool,
    pub finetune_predictor: bool,
    pub fallback_size: usize,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let d = AdaptConfig::default();
        AdaptSection {
            mode: AdaptMode::Interpolation,
            heads: d.heads,
            sample_size: d.sample_size,
            normalization: d.normalization,
            score_activation: d.score_activation,
            init: d.init,
            lambda: d.lambda,
            contrastive_sign: d.contrastive_sign,
            learning_rate: d.adam.learning_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            resample_keys: d.resample_keys,
            finetune_predictor: d.finetune_predictor,
            fallback_size: DEFAULT_FALLBACK_SIZE,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ndcg_k: Option<usize>,
    /// Cohorts to report; empty picks them from the available models.
    pub cohorts: Vec<Cohort>,
    pub negative_ratio: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { split: 7, init: 1, shuffle: 2 }
    }
}

impl Seeds {
    /// One seed for everything, as `--seed` sets it.
    pub fn uniform(seed: u64) -> Self {
        Seeds { split: seed, init: seed, shuffle: seed }
    }
}

#[derive(Serialize)]
struct PretrainIdentity<'a> {
    data: &'a DataSection,
    split: &'a SplitSection,
    model: &'a ModelSection,
    pretrain: &'a PretrainSection,
    seeds: &'a Seeds,
}

impl TrainConfig {
    pub fn from_toml_str(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { source_name: source_name.to_string(), message: e.message().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(ConfigError::invalid("split.test_fraction", format!("{} not in (0, 1)", self.split.test_fraction)));
        }
        if self.split.strategy == StrategyKind::Random && !(self.split.gamma > 0.0 && self.split.gamma < 1.0) {
            return Err(ConfigError::invalid("split.gamma", format!("{} not in (0, 1)", self.split.gamma)));
        }
        if self.eval.ndcg_k == Some(0) {
            return Err(ConfigError::invalid("eval.ndcg_k", "must be positive"));
        }
        self.pretrain_config().validate()?;
        self.adapt_config().validate()
    }

    /// `None` for the all-key (transductive) strategy.
    pub fn partition_strategy(&self) -> Option<PartitionStrategy> {
        match self.split.strategy {
            StrategyKind::Threshold => Some(PartitionStrategy::Threshold { delta: self.split.delta }),
            StrategyKind::Random => Some(PartitionStrategy::Random { gamma: self.split.gamma, seed: self.seeds.split }),
            StrategyKind::All => None,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            backbone: self.model.backbone,
            dim: self.model.dim,
            hidden: self.model.hidden,
            adam: AdamConfig { learning_rate: p.learning_rate, weight_decay: p.weight_decay, decay_scope: p.decay_scope, ..Default::default() },
            l2: p.l2,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            patience: p.patience,
            global_bias: p.global_bias,
            neighbor_cap: p.neighbor_cap,
            negative_ratio: p.negative_ratio,
            init_seed: self.seeds.init,
            shuffle_seed: self.seeds.shuffle,
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        let a = &self.adapt;
        AdaptConfig {
            heads: a.heads,
            sample_size: a.sample_size,
            normalization: a.normalization,
            score_activation: a.score_activation,
            init: a.init,
            lambda: a.lambda,
            contrastive_sign: a.contrastive_sign,
            adam: AdamConfig::with_learning_rate(a.learning_rate),
            batch_size: a.batch_size,
            max_epochs: a.max_epochs,
            patience: a.patience,
            resample_keys: a.resample_keys,
            finetune_predictor: a.finetune_predictor,
            fallback_size: a.fallback_size,
            neighbor_cap: self.pretrain.neighbor_cap,
            init_seed: self.seeds.init,
            shuffle_seed: self.seeds.shuffle,
            context_seed: self.seeds.init,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        let d = EvalOptions::default();
        EvalOptions {
            ndcg_k: self.eval.ndcg_k,
            negative_ratio: self.eval.negative_ratio.unwrap_or(d.negative_ratio),
            negative_seed: self.seeds.split,
        }
    }

    /// Feedback kind the dataset is read as.
    pub fn feedback(&self) -> Feedback {
        match self.data.format {
            DataFormat::Ml100kUdata => Feedback::Explicit,
            DataFormat::GenericCsv => self.data.feedback.unwrap_or(Feedback::Explicit),
        }
    }

    /// SHA-256 over everything that determines the pretrained factors.
    pub fn pretrain_hash(&self) -> String {
        let identity =
            PretrainIdentity { data: &self.data, split: &self.split, model: &self.model, pretrain: &self.pretrain, seeds: &self.seeds };
        let bytes = serde_json::to_vec(&identity).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
path = "ratings.csv"
format = "generic_csv"

[model]
backbone = "gc"
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = TrainConfig::from_toml_str(MINIMAL, "minimal.toml").unwrap();
        assert_eq!(cfg.model.dim, 16);
        assert_eq!(cfg.adapt.heads, 4);
        assert_eq!(cfg.adapt.sample_size, 200);
        assert_eq!(cfg.adapt.lambda, 10.0);
        assert_eq!(cfg.split.delta, 30);
        assert_eq!(cfg.feedback(), Feedback::Explicit);
        assert_eq!(cfg.pretrain_config().backbone, Backbone::Gc);
        assert_eq!(cfg.partition_strategy(), Some(PartitionStrategy::Threshold { delta: 30 }));
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let text = format!("{MINIMAL}\n[pretrain]\nlearnig_rate = 0.1\n");
        let err = TrainConfig::from_toml_str(&text, "typo.toml").unwrap_err();
        assert!(err.to_string().contains("learnig_rate"), "{err}");
        let err = TrainConfig::from_toml_str("[data]\npath = \"x\"\nformat = \"generic_csv\"\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
        let err = TrainConfig::from_toml_str("[data]\nformat = \"generic_csv\"\n[model]\nbackbone = \"nn\"\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("path"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_key() {
        let text = format!("{MINIMAL}\n[split]\ntest_fraction = 1.5\n");
        match TrainConfig::from_toml_str(&text, "x.toml").unwrap_err() {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "split.test_fraction"),
            other => panic!("{other}"),
        }
        let text = MINIMAL.replace("\"gc\"", "\"mlp\"");
        assert!(TrainConfig::from_toml_str(&text, "x.toml").unwrap_err().to_string().contains("mlp"));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = TrainConfig::from_toml_str(MINIMAL, "m").unwrap();
        cfg.eval.ndcg_k = Some(10);
        cfg.eval.cohorts = vec![Cohort::All, Cohort::New];
        cfg.adapt.mode = AdaptMode::Extrapolation;
        let back = TrainConfig::from_toml_str(&cfg.to_toml_string(), "m").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn pretrain_hash_ignores_adaptation_settings() {
        let a = TrainConfig::from_toml_str(MINIMAL, "m").unwrap();
        let mut b = a.clone();
        b.adapt.lambda = 3.0;
        b.eval.ndcg_k = Some(5);
        assert_eq!(a.pretrain_hash(), b.pretrain_hash());
        b.pretrain.learning_rate = 0.5;
        assert_ne!(a.pretrain_hash(), b.pretrain_hash());
        let mut c = a.clone();
        c.seeds = Seeds::uniform(9);
        assert_ne!(a.pretrain_hash(), c.pretrain_hash());
        assert_eq!(a.pretrain_hash().len(), 64);
    }
}
