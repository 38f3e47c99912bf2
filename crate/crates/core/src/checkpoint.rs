//! Portable JSON checkpoints. Numbers are written in shortest round-trip
//! form, so loading reproduces every tensor bit for bit.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{Seeds, TrainConfig};
use crate::error::{CheckpointError, Result};
use crate::mf::{Backbone, MfParams, Predictor, PretrainReport};
use crate::numerics::{ParamTensor, Parameterized};
use crate::relation::{AdaptMode, AdaptReport, InductiveModel, RelationParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

fn shapes(model: &dyn Parameterized) -> Vec<TensorShape> {
    let mut out = Vec::new();
    model.visit_params(&mut |p: &ParamTensor| {
        let (rows, cols) = p.shape();
        out.push(TensorShape { name: p.name.clone(), rows, cols });
    });
    out
}

fn check_shapes(model: &dyn Parameterized, recorded: &[TensorShape]) -> Result<(), CheckpointError> {
    let actual = shapes(model);
    if actual.len() != recorded.len() {
        return Err(CheckpointError::Malformed(format!("{} tensors recorded, {} present", recorded.len(), actual.len())));
    }
    for (a, r) in actual.iter().zip(recorded) {
        if a != r {
            return Err(CheckpointError::Tensor {
                name: r.name.clone(),
                message: format!("recorded {}x{}, found `{}` {}x{}", r.rows, r.cols, a.name, a.rows, a.cols),
            });
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
}

fn parse<T: DeserializeOwned>(text: &str, kind: &'static str) -> Result<T, CheckpointError> {
    let header: Header = serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: header.format_version, expected: FORMAT_VERSION });
    }
    if header.kind != kind {
        return Err(CheckpointError::Kind { expected: kind, found: header.kind });
    }
    serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

/// Stage-one factors with the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfCheckpoint {
    pub format_version: u32,
    pub kind: String,
    pub backbone: Backbone,
    /// Hash of the pretraining-relevant configuration sections.
    pub config_hash: String,
    pub seeds: Seeds,
    pub embedding_checksum: u64,
    pub shapes: Vec<TensorShape>,
    pub config: TrainConfig,
    pub report: PretrainReport,
    pub params: MfParams,
}

impl MfCheckpoint {
    pub const KIND: &'static str = "mf";

    pub fn new(params: MfParams, config: &TrainConfig, report: PretrainReport) -> Self {
        MfCheckpoint {
            format_version: FORMAT_VERSION,
            kind: Self::KIND.into(),
            backbone: params.backbone,
            config_hash: config.pretrain_hash(),
            seeds: config.seeds,
            embedding_checksum: params.embedding_checksum(),
            shapes: shapes(&params),
            config: config.clone(),
            report,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ckpt: MfCheckpoint = parse(text, Self::KIND)?;
        ckpt.params.validate()?;
        if ckpt.backbone != ckpt.params.backbone {
            return Err(CheckpointError::Malformed(format!("header says {}, parameters are {}", ckpt.backbone, ckpt.params.backbone)).into());
        }
        check_shapes(&ckpt.params, &ckpt.shapes)?;
        let checksum = ckpt.params.embedding_checksum();
        if checksum != ckpt.embedding_checksum {
            return Err(CheckpointError::FactorChecksum { found: ckpt.embedding_checksum, expected: checksum }.into());
        }
        ckpt.params.visit_params_mut(&mut |p| p.ensure_buffers());
        Ok(ckpt)
    }

    /// Rejects factors pretrained under a different configuration.
    pub fn check_config(&self, live: &TrainConfig) -> Result<(), CheckpointError> {
        let expected = live.pretrain_hash();
        if self.config_hash != expected {
            return Err(CheckpointError::ConfigHash { found: self.config_hash.clone(), expected });
        }
        Ok(())
    }
}

/// Stage-two relation model; refers to its factors by checksum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelCheckpoint {
    pub format_version: u32,
    pub kind: String,
    pub mode: AdaptMode,
    pub backbone: Backbone,
    pub mf_checksum: u64,
    pub mf_config_hash: String,
    pub seeds: Seeds,
    pub shapes: Vec<TensorShape>,
    pub config: TrainConfig,
    pub report: AdaptReport,
    pub relation: RelationParams,
    /// Predictor weights after adaptation (finetuned or copied).
    pub predictor: Predictor,
    pub fallback_size: usize,
    pub neighbor_cap: usize,
    pub context_seed: u64,
}

struct RelTensors<'a> {
    relation: &'a RelationParams,
    predictor: &'a Predictor,
}

impl Parameterized for RelTensors<'_> {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        self.relation.visit_params(f);
        self.predictor.visit_params(f);
    }

    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&mut ParamTensor)) {
        unreachable!("read-only view")
    }
}

impl RelCheckpoint {
    pub const KIND: &'static str = "rel";

    pub fn new(model: &InductiveModel, mode: AdaptMode, config: &TrainConfig, mf_config_hash: &str, report: AdaptReport) -> Self {
        RelCheckpoint {
            format_version: FORMAT_VERSION,
            kind: Self::KIND.into(),
            mode,
            backbone: model.mf.backbone,
            mf_checksum: model.mf.embedding_checksum(),
            mf_config_hash: mf_config_hash.to_string(),
            seeds: config.seeds,
            shapes: shapes(&RelTensors { relation: &model.rel, predictor: &model.mf.predictor }),
            config: config.clone(),
            report,
            relation: model.rel.clone(),
            predictor: model.mf.predictor.clone(),
            fallback_size: model.fallback_size,
            neighbor_cap: model.neighbor_cap,
            context_seed: model.context_seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: RelCheckpoint = parse(text, Self::KIND)?;
        check_shapes(&RelTensors { relation: &ckpt.relation, predictor: &ckpt.predictor }, &ckpt.shapes)?;
        Ok(ckpt)
    }

    /// Reassembles the inductive model on top of the factors it was trained on.
    pub fn into_model(self, mf: &MfCheckpoint) -> Result<InductiveModel> {
        if mf.embedding_checksum != self.mf_checksum {
            return Err(CheckpointError::FactorChecksum { found: self.mf_checksum, expected: mf.embedding_checksum }.into());
        }
        if mf.config_hash != self.mf_config_hash {
            return Err(CheckpointError::ConfigHash { found: self.mf_config_hash, expected: mf.config_hash.clone() }.into());
        }
        let mut params = mf.params.clone();
        params.predictor = self.predictor;
        params.validate()?;
        let mut model = InductiveModel::new(params, self.relation, self.fallback_size, self.neighbor_cap, self.context_seed);
        model.rel.visit_params_mut(&mut |p| p.ensure_buffers());
        model.mf.visit_params_mut(&mut |p| p.ensure_buffers());
        Ok(model)
    }
}
