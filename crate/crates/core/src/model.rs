//! Model hyperparameters, parameter initialisation and checkpoints.

use std::fs;
use std::path::Path;

use numcore::{uniform_init, BatchNorm, ParamStore, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::CONTEXT_WIDTH;
use crate::error::{CapamError, Result};
use crate::seed::rng_for;
use crate::taskgraph::FeatureSet;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Highest Laplacian power in the capsule filters.
    pub k: usize,
    /// Highest statistical moment.
    pub p: usize,
    /// Number of capsule layers.
    pub layers: usize,
    /// Width of the initial lift.
    pub h0: usize,
    /// Embedding width.
    pub hl: usize,
    /// Attention heads in the decoder.
    pub heads: usize,
    pub features: FeatureSet,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 2,
            p: 3,
            layers: 1,
            h0: 128,
            hl: 128,
            heads: 8,
            features: FeatureSet::default(),
            activation: Activation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.layers == 0 || self.h0 == 0 || self.hl == 0 || self.heads == 0 {
            return Err(CapamError::Config(format!(
                "p, layers, h0, hl and heads must be positive: {self:?}"
            )));
        }
        if !self.hl.is_multiple_of(self.heads) {
            return Err(CapamError::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.hl, self.heads
            )));
        }
        Ok(())
    }

    /// Input width of capsule layer `layer` (0-based).
    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.h0
        } else {
            self.hl * self.p
        }
    }

    pub fn head_width(&self) -> usize {
        self.hl / self.heads
    }
}

pub fn capsule_weight_name(layer: usize, p: usize, k: usize) -> String {
    format!("enc.layer{layer}.p{p}.k{k}.w")
}

/// Names, shapes and fan-in of every trainable tensor. Biases have a fan-in
/// equal to their layer's input width.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, [usize; 2], usize)> {
    let fw = cfg.features.width();
    let hl = cfg.hl;
    let mut out = vec![
        ("enc.lift.w".to_string(), [fw, cfg.h0], fw),
        ("enc.lift.b".to_string(), [1, cfg.h0], fw),
    ];
    for l in 0..cfg.layers {
        let inp = cfg.layer_input(l);
        for p in 1..=cfg.p {
            for k in 0..=cfg.k {
                out.push((capsule_weight_name(l, p, k), [inp, hl], inp));
            }
        }
    }
    out.push(("enc.out.w".into(), [hl * cfg.p, hl], hl * cfg.p));
    out.push(("enc.out.b".into(), [1, hl], hl * cfg.p));
    for name in ["dec.key.w", "dec.value.w", "dec.logit_key.w"] {
        out.push((name.into(), [hl, hl], hl));
    }
    out.push(("dec.query.w".into(), [CONTEXT_WIDTH, hl], CONTEXT_WIDTH));
    out.push(("dec.query.b".into(), [1, hl], CONTEXT_WIDTH));
    for name in ["dec.mha_out", "dec.ff"] {
        out.push((format!("{name}.w"), [hl, hl], hl));
        out.push((format!("{name}.b"), [1, hl], hl));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapamModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Running statistics of the decoder batch-norm.
    pub bn: BatchNorm,
    pub seed: u64,
}

impl CapamModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0x1417]);
        let params = init_params(&config, &mut rng);
        Ok(CapamModel {
            bn: BatchNorm::new(config.hl),
            config,
            params,
            seed,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            header: CheckpointHeader {
                model: self.config.clone(),
                rng_seed: self.seed,
            },
            params: self.params.clone(),
            buffers: Buffers {
                bn: self.bn.clone(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serialises");
        fs::write(path, text).map_err(|source| CapamError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CapamError::Io {
            path: path.to_owned(),
            source,
        })?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CapamError::Parse {
            path: path.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        CapamModel::from_checkpoint(ck)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(CapamError::Version {
                found: ck.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let cfg = ck.header.model;
        cfg.validate()?;
        let layout = parameter_layout(&cfg);
        let mut expected: Vec<(String, [usize; 2])> =
            layout.into_iter().map(|(n, s, _)| (n, s)).collect();
        expected.push(("dec.bn.gamma".into(), [1, cfg.hl]));
        expected.push(("dec.bn.beta".into(), [1, cfg.hl]));
        if expected.len() != ck.params.len() {
            return Err(CapamError::Config(format!(
                "checkpoint has {} tensors, configuration needs {}",
                ck.params.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let t = ck
                .params
                .get(name)
                .map_err(|_| CapamError::Config(format!("checkpoint is missing `{name}`")))?;
            if t.shape() != *shape {
                return Err(CapamError::Config(format!(
                    "`{name}` has shape {:?}, configuration needs {shape:?}",
                    t.shape()
                )));
            }
        }
        let bn = ck.buffers.bn;
        if bn.running_mean.len() != cfg.hl || bn.running_var.len() != cfg.hl {
            return Err(CapamError::Config(
                "batch-norm buffers have the wrong width".into(),
            ));
        }
        Ok(CapamModel {
            config: cfg,
            params: ck.params,
            bn,
            seed: ck.header.rng_seed,
        })
    }
}

pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, [r, c], fan_in) in parameter_layout(cfg) {
        store.insert(&name, uniform_init(r, c, fan_in, rng));
    }
    store.insert("dec.bn.gamma", Tensor::full(1, cfg.hl, 1.0));
    store.insert("dec.bn.beta", Tensor::zeros(1, cfg.hl));
    store
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Buffers {
    pub bn: BatchNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub header: CheckpointHeader,
    pub params: ParamStore,
    pub buffers: Buffers,
}
