//! Latent call stacks and the networks that produce their frames.

use callstack_tensor::{ParamStore, ReduceKind, Scalar, Tape, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::Mlp;
use crate::oracle::StackOp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    None,
    GraphLevel,
    NodeWise,
}

/// Frames with a depth pointer. Frame 0 is the zero frame and is never
/// popped, so `top` is always defined.
#[derive(Clone, Debug)]
pub struct Stack<T> {
    frames: Vec<T>,
    max_depth: usize,
}

impl<T> Stack<T> {
    pub fn new(zero: T) -> Self {
        Self {
            frames: vec![zero],
            max_depth: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.frames.len() - 1
    }

    /// Deepest depth reached so far.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn top(&self) -> &T {
        self.frames.last().unwrap()
    }

    pub fn push(&mut self, frame: T) {
        self.frames.push(frame);
        self.max_depth = self.max_depth.max(self.depth());
    }

    /// Discards the top frame; a no-op at depth 0.
    pub fn pop(&mut self) {
        if self.frames.len() > 1 {
            self.frames.pop();
        }
    }

    /// Executes `op`; `frame` is only evaluated for a push.
    pub fn apply<E>(&mut self, op: StackOp, frame: impl FnOnce() -> std::result::Result<T, E>) -> std::result::Result<(), E> {
        match op {
            StackOp::Push => self.push(frame()?),
            StackOp::Pop => self.pop(),
            StackOp::Noop => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Learned MLP.
    Mlp,
    /// First `d_stack` channels of the processed features.
    Slice,
    /// Learned MLP values weighted by a learned per-node score before
    /// pooling (graph-level stacks only).
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPooling {
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueNetConfig {
    pub kind: ValueKind,
    pub d_stack: usize,
    pub layers: usize,
    pub hidden: usize,
    pub attention_pooling: AttentionPooling,
}

impl Default for ValueNetConfig {
    fn default() -> Self {
        Self {
            kind: ValueKind::Mlp,
            d_stack: 64,
            layers: 2,
            hidden: 128,
            attention_pooling: AttentionPooling::Sum,
        }
    }
}

impl ValueNetConfig {
    pub fn validate(&self, d_h: usize, mode: StackMode) -> Result<()> {
        if mode == StackMode::None {
            return Ok(());
        }
        if self.d_stack == 0 {
            return Err(CoreError::Config("d_stack must be positive".into()));
        }
        if self.kind == ValueKind::Slice && d_h < self.d_stack {
            return Err(CoreError::Config(format!(
                "sliced value function needs d_h >= d_stack ({d_h} < {})",
                self.d_stack
            )));
        }
        if self.kind == ValueKind::Attention && mode != StackMode::GraphLevel {
            return Err(CoreError::Config(
                "attention pooling applies to graph-level stacks only".into(),
            ));
        }
        if self.kind != ValueKind::Slice && self.layers == 0 {
            return Err(CoreError::Config("value network needs at least one layer".into()));
        }
        Ok(())
    }
}

fn widths(d_in: usize, hidden: usize, layers: usize, d_out: usize) -> Vec<usize> {
    let mut w = vec![d_in];
    w.extend(std::iter::repeat(hidden).take(layers.saturating_sub(1)));
    w.push(d_out);
    w
}

/// Builds stack frames from processed node features.
#[derive(Clone, Debug)]
pub struct ValueNet {
    pub cfg: ValueNetConfig,
    pub mode: StackMode,
    value: Option<Mlp>,
    attention: Option<Mlp>,
}

impl ValueNet {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        cfg: &ValueNetConfig,
        mode: StackMode,
        d_h: usize,
    ) -> Result<Self> {
        cfg.validate(d_h, mode)?;
        let value = (cfg.kind != ValueKind::Slice).then(|| {
            Mlp::new(store, rng, "stack.value", &widths(d_h, cfg.hidden, cfg.layers, cfg.d_stack))
        });
        let attention = (cfg.kind == ValueKind::Attention).then(|| {
            Mlp::new(store, rng, "stack.attention", &widths(2 * d_h, cfg.hidden, cfg.layers, 1))
        });
        Ok(Self {
            cfg: cfg.clone(),
            mode,
            value,
            attention,
        })
    }

    pub fn d_stack(&self) -> usize {
        self.cfg.d_stack
    }

    /// Per-node values `[n×d_stack]`.
    pub fn phi_value<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, p: Var) -> Result<Var> {
        match &self.value {
            Some(mlp) => mlp.forward(tape, store, p),
            None => Ok(tape.slice(p, 1, 0, self.cfg.d_stack)?),
        }
    }

    /// Frame to push: `[n×d_stack]` node-wise, `[d_stack]` graph-level.
    pub fn frame<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        p: Var,
        h_g: Var,
    ) -> Result<Var> {
        let values = self.phi_value(tape, store, p)?;
        match self.mode {
            StackMode::NodeWise => Ok(values),
            StackMode::GraphLevel => {
                let weighted = match &self.attention {
                    Some(att) => {
                        let n = tape.shape(p)[0];
                        let g = tape.broadcast(h_g, n);
                        let x = tape.concat(&[p, g], 1)?;
                        let w = att.forward(tape, store, x)?;
                        tape.scale_rows(values, w)?
                    }
                    None => values,
                };
                let kind = match (self.cfg.kind, self.cfg.attention_pooling) {
                    (ValueKind::Attention, AttentionPooling::Mean) => ReduceKind::Mean,
                    _ => ReduceKind::Sum,
                };
                Ok(tape.reduce(weighted, 0, kind)?)
            }
            StackMode::None => Err(CoreError::Config("no stack configured".into())),
        }
    }
}
