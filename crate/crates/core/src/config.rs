//! Experiment configuration documents and the ablation presets.

use callstack_tensor::AdamConfig;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::graph::DatasetSpec;
use crate::hints::default_hints;
use crate::model::{ModelConfig, Readout};
use crate::oracle::Scheme;
use crate::processor::ProcessorConfig;
use crate::runner::TrainSettings;
use crate::stack::{StackMode, ValueKind, ValueNetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub teacher_forcing: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub randomize_pos: bool,
    pub grad_clip: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            teacher_forcing: 0.5,
            train_steps: 20_000,
            batch_size: 32,
            eval_every: 500,
            learning_rate: 1e-3,
            seed: 0,
            randomize_pos: false,
            grad_clip: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(CoreError::Config(format!(
                "teacher_forcing {} outside [0, 1]",
                self.teacher_forcing
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(CoreError::Config("batch_size and eval_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            steps: self.train_steps,
            batch_size: self.batch_size,
            teacher_forcing: self.teacher_forcing,
            eval_every: self.eval_every,
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            seed: self.seed,
            randomize_pos: self.randomize_pos,
            grad_clip: self.grad_clip,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub name: String,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.run.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Toml(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: Config = parse_toml(s)?;
        c.validate()?;
        Ok(c)
    }

    /// SHA-256 of the canonical JSON form of the model configuration; two
    /// checkpoints are interchangeable iff their hashes agree.
    pub fn model_hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(&self.model).expect("model config serialises");
        Sha256::digest(json).into()
    }
}

pub fn parse_toml<T: DeserializeOwned>(s: &str) -> Result<T> {
    toml::from_str(s).map_err(|e| CoreError::Toml(e.to_string()))
}

pub fn config_from_file(path: &Path) -> Result<Config> {
    Config::from_toml(&std::fs::read_to_string(path)?)
}

pub const PRESETS: [&str; 11] = [
    "t3-row1-baseline",
    "t3-row2-graph-stack",
    "t3-row3-no-stack",
    "t3-row4-graph-stack-hidden",
    "t3-row5-hidden-no-stack",
    "t3-row6-no-collection",
    "t3-row7-no-teacher-forcing",
    "t3-row8-sliced-value",
    "t3-row9-attention",
    "t3-row10-nodewise",
    "t3-row11-nodewise-hidden",
];

fn base_model(scheme: Scheme) -> ModelConfig {
    ModelConfig {
        scheme,
        hints: default_hints(scheme),
        processor: ProcessorConfig::default(),
        value: ValueNetConfig::default(),
        stack_mode: StackMode::GraphLevel,
        readout: Readout::Sum,
        use_output_collection: true,
    }
}

/// Full-budget configuration of one ablation row.
pub fn preset(name: &str) -> Result<Config> {
    let mut model = base_model(Scheme::Recursive);
    let mut run = RunConfig::default();
    match name {
        "t3-row1-baseline" => {
            model = base_model(Scheme::Baseline);
            model.stack_mode = StackMode::None;
            model.processor.use_hidden_state = true;
            model.use_output_collection = false;
        }
        "t3-row2-graph-stack" => {}
        "t3-row3-no-stack" => model.stack_mode = StackMode::None,
        "t3-row4-graph-stack-hidden" => model.processor.use_hidden_state = true,
        "t3-row5-hidden-no-stack" => {
            model.stack_mode = StackMode::None;
            model.processor.use_hidden_state = true;
        }
        "t3-row6-no-collection" => model.use_output_collection = false,
        "t3-row7-no-teacher-forcing" => run.teacher_forcing = 0.0,
        "t3-row8-sliced-value" => model.value.kind = ValueKind::Slice,
        "t3-row9-attention" => model.value.kind = ValueKind::Attention,
        "t3-row10-nodewise" => model.stack_mode = StackMode::NodeWise,
        "t3-row11-nodewise-hidden" => {
            model.stack_mode = StackMode::NodeWise;
            model.processor.use_hidden_state = true;
        }
        other => {
            return Err(CoreError::Config(format!(
                "unknown preset `{other}`; known: {}",
                PRESETS.join(", ")
            )))
        }
    }
    let cfg = Config {
        name: name.into(),
        dataset: DatasetSpec::default(),
        model,
        run,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reduced sizes for single-CPU runs: smaller widths and budget, train
/// graphs of at most 16 nodes, test graphs of 32.
///
/// With so little training, sum-pooled graph decoders and evenly spaced
/// positions both overfit to the training sizes, so this also switches to
/// max pooling and random training positions. Gradient clipping keeps the
/// free-running rows from diverging.
pub fn desk_scale(mut cfg: Config) -> Config {
    cfg.model.readout = Readout::Max;
    cfg.model.processor.d_h = 64;
    cfg.model.value.d_stack = 32;
    cfg.model.value.hidden = 64;
    cfg.dataset.sizes = vec![4, 8, 12, 16];
    cfg.dataset.test_sizes = vec![32];
    cfg.dataset.train_count = 2000;
    cfg.dataset.validation_count = 32;
    cfg.dataset.test_count = 32;
    cfg.run.train_steps = 5000;
    cfg.run.batch_size = 4;
    cfg.run.eval_every = 250;
    cfg.run.randomize_pos = true;
    cfg.run.grad_clip = Some(1.0);
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_roundtrips() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(Config::from_toml(&text).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn nodewise_preset_flags() {
        let c = preset("t3-row10-nodewise").unwrap();
        assert_eq!(c.model.stack_mode, StackMode::NodeWise);
        assert!(!c.model.processor.use_hidden_state);
        assert!(c.model.use_output_collection);
        assert_eq!(c.run.teacher_forcing, 0.5);
        assert_eq!(c.run.train_steps, 20_000);
    }

    #[test]
    fn hash_tracks_model_only() {
        let a = preset("t3-row2-graph-stack").unwrap();
        let mut b = a.clone();
        b.run.train_steps = 10;
        assert_eq!(a.model_hash(), b.model_hash());
        b.model.processor.d_h = 32;
        assert_ne!(a.model_hash(), b.model_hash());
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(preset("nope"), Err(CoreError::Config(_))));
    }
}
