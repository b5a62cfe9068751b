//! The full network: encoders, processor, decoders and stack value network.

use callstack_tensor::{ParamStore, ReduceKind, Scalar, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encdec::{hint_loss, predict, sum_vars, Channels, Decoded, Decoder, Encoder, GraphInputs};
use crate::error::{CoreError, Result};
use crate::hints::{validate_table, HintSpec, HintValue};
use crate::oracle::Scheme;
use crate::processor::{Processor, ProcessorConfig};
use crate::stack::{StackMode, ValueNet, ValueNetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Sum,
    Max,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scheme: Scheme,
    pub hints: Vec<HintSpec>,
    pub processor: ProcessorConfig,
    pub value: ValueNetConfig,
    pub stack_mode: StackMode,
    /// Pooling of processed node features for graph-level decoders.
    pub readout: Readout,
    pub use_output_collection: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        validate_table(&self.hints, self.scheme)?;
        self.processor.validate()?;
        self.value.validate(self.processor.d_h, self.stack_mode)?;
        let has = |name: &str| self.hints.iter().any(|h| h.name == name);
        if self.use_output_collection && !(has("u") && has("u_pi") && self.scheme == Scheme::Recursive) {
            return Err(CoreError::Config(
                "output collection needs the recursive scheme with hints u and u_pi".into(),
            ));
        }
        if self.stack_mode != StackMode::None && !has("stack_op") {
            return Err(CoreError::Config("a stack needs the stack_op hint".into()));
        }
        Ok(())
    }
}

/// Outputs of one processor step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub p: Var,
    pub h_g: Var,
    pub pooled: Var,
    pub decoded: Vec<Decoded>,
}

#[derive(Clone, Debug)]
pub struct Model<F: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    pub processor: Processor,
    pub decoder: Decoder,
    pub value: Option<ValueNet>,
}

impl<F: Scalar> Model<F> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.processor.d_h;
        let encoder = Encoder::new(&mut store, &mut rng, &cfg.hints, d);
        let value = match cfg.stack_mode {
            StackMode::None => None,
            mode => Some(ValueNet::new(&mut store, &mut rng, &cfg.value, mode, d)?),
        };
        let d_stack = cfg.value.d_stack;
        let d_x = d
            + if cfg.stack_mode == StackMode::NodeWise { d_stack } else { 0 }
            + if cfg.processor.use_hidden_state { d } else { 0 };
        let d_g = d + if cfg.stack_mode == StackMode::GraphLevel { d_stack } else { 0 };
        let processor = Processor::new(&mut store, &mut rng, &cfg.processor, d_x, d_g)?;
        let decoder = Decoder::new(&mut store, &mut rng, &cfg.hints, d, !cfg.use_output_collection)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            encoder,
            processor,
            decoder,
            value,
        })
    }

    pub fn hint_specs(&self) -> &[HintSpec] {
        self.decoder.specs()
    }

    pub fn hint_index(&self, name: &str) -> Option<usize> {
        self.hint_specs().iter().position(|h| h.name == name)
    }

    pub fn channels(&self, inputs: &GraphInputs, hints: &[HintValue]) -> Result<Channels> {
        self.encoder.channels(inputs, Some(hints))
    }

    /// Edge features that do not depend on hints; callers may reuse them
    /// across steps when [`Encoder::dynamic_edges`] is false.
    pub fn static_edges(&self, tape: &mut Tape<F>, inputs: &GraphInputs) -> Result<Var> {
        let ch = self.encoder.channels(inputs, None)?;
        self.encoder.encode_edges(tape, &self.store, &ch, inputs.n)
    }

    /// Zero stack top for this model's stack mode.
    pub fn zero_top(&self, n: usize) -> Option<callstack_tensor::Tensor<F>> {
        let d = self.cfg.value.d_stack;
        match self.cfg.stack_mode {
            StackMode::None => None,
            StackMode::NodeWise => Some(callstack_tensor::Tensor::zeros(&[n, d])),
            StackMode::GraphLevel => Some(callstack_tensor::Tensor::zeros(&[d])),
        }
    }

    /// One encode -> process -> decode step. `edges` overrides the edge
    /// embedding (see [`Model::static_edges`]).
    pub fn step(
        &self,
        tape: &mut Tape<F>,
        inputs: &GraphInputs,
        hints: &[HintValue],
        edges: Option<Var>,
        top: Option<Var>,
        p_prev: Option<Var>,
    ) -> Result<StepOutput> {
        let n = inputs.n;
        if p_prev.is_some() != self.cfg.processor.use_hidden_state {
            return Err(CoreError::InvalidInput(
                "hidden state must be passed exactly when use_hidden_state is set".into(),
            ));
        }
        if top.is_some() != (self.cfg.stack_mode != StackMode::None) {
            return Err(CoreError::InvalidInput(
                "stack top must be passed exactly when a stack is configured".into(),
            ));
        }
        let ch = self.channels(inputs, hints)?;
        let (h_i, h_g) = self.encoder.encode_nodes_graph(tape, &self.store, &ch, n)?;
        let h_ij = match edges {
            Some(e) if !self.encoder.dynamic_edges() => e,
            _ => self.encoder.encode_edges(tape, &self.store, &ch, n)?,
        };
        let mut x_parts = vec![h_i];
        let mut g = h_g;
        match (self.cfg.stack_mode, top) {
            (StackMode::NodeWise, Some(z)) => x_parts.push(z),
            (StackMode::GraphLevel, Some(z)) => g = tape.concat(&[h_g, z], 0)?,
            _ => {}
        }
        if let Some(prev) = p_prev {
            x_parts.push(prev);
        }
        let x = if x_parts.len() == 1 {
            x_parts[0]
        } else {
            tape.concat(&x_parts, 1)?
        };
        let (p, _) = self.processor.process(tape, &self.store, x, h_ij, g, &inputs.adj)?;
        let kind = match self.cfg.readout {
            Readout::Sum => ReduceKind::Sum,
            Readout::Max => ReduceKind::Max,
            Readout::Mean => ReduceKind::Mean,
        };
        let pooled = tape.reduce(p, 0, kind)?;
        let decoded = self.decoder.decode_hints(tape, &self.store, p, pooled)?;
        Ok(StepOutput {
            p,
            h_g,
            pooled,
            decoded,
        })
    }

    /// Frame to push after a step.
    pub fn frame(&self, tape: &mut Tape<F>, out: &StepOutput) -> Result<Var> {
        match &self.value {
            Some(v) => v.frame(tape, &self.store, out.p, out.h_g),
            None => Err(CoreError::Config("no stack configured".into())),
        }
    }

    /// Per-hint losses against `truth`, in hint order.
    pub fn hint_losses(&self, tape: &mut Tape<F>, out: &StepOutput, truth: &[HintValue]) -> Result<Vec<Var>> {
        self.hint_specs()
            .iter()
            .zip(&out.decoded)
            .zip(truth)
            .map(|((spec, &d), t)| hint_loss(tape, spec, d, t))
            .collect()
    }

    pub fn step_loss(&self, tape: &mut Tape<F>, out: &StepOutput, truth: &[HintValue]) -> Result<(Var, Vec<Var>)> {
        let parts = self.hint_losses(tape, out, truth)?;
        Ok((sum_vars(tape, &parts)?, parts))
    }

    pub fn predictions(&self, tape: &Tape<F>, out: &StepOutput) -> Vec<HintValue> {
        self.hint_specs()
            .iter()
            .zip(&out.decoded)
            .map(|(spec, &d)| predict(tape, spec, d))
            .collect()
    }

    pub fn output_logits(&self, tape: &mut Tape<F>, out: &StepOutput) -> Result<Var> {
        self.decoder.decode_output(tape, &self.store, out.p, out.pooled)
    }
}
