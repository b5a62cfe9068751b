//! Message-passing processor.

use callstack_tensor::{ParamStore, ReduceKind, Scalar, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::nn::{Linear, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Max,
    Sum,
}

/// Which senders a node hears from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Every node, with adjacency carried by the edge features.
    Full,
    /// In-neighbours plus the node itself.
    Adjacency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessorConfig {
    pub d_h: usize,
    pub use_hidden_state: bool,
    pub aggregation: Aggregation,
    pub connectivity: Connectivity,
    /// Linear layers in the message function (ReLU between and after).
    pub message_layers: usize,
    /// Hidden layers in the update function.
    pub update_layers: usize,
}

impl Default for ProcessorConfig {
    fn default() -> Self {
        Self {
            d_h: 128,
            use_hidden_state: false,
            aggregation: Aggregation::Max,
            connectivity: Connectivity::Full,
            message_layers: 2,
            update_layers: 1,
        }
    }
}

impl ProcessorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 {
            return Err(CoreError::Config("d_h must be positive".into()));
        }
        if self.message_layers == 0 {
            return Err(CoreError::Config("message_layers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Large negative offset that removes non-neighbours from a max.
const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Processor {
    pub cfg: ProcessorConfig,
    recv: Linear,
    send: Linear,
    glob: Linear,
    extra: Vec<Linear>,
    update: Mlp,
    d_x: usize,
    d_g: usize,
}

impl Processor {
    /// `d_x`: width of node inputs `x_i`; `d_g`: width of graph inputs.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        cfg: &ProcessorConfig,
        d_x: usize,
        d_g: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_h;
        let recv = Linear::new(store, rng, "proc.msg.recv", d_x, d, true);
        let send = Linear::new(store, rng, "proc.msg.send", d_x, d, false);
        let glob = Linear::new(store, rng, "proc.msg.graph", d_g, d, false);
        let extra = (1..cfg.message_layers)
            .map(|k| Linear::new(store, rng, &format!("proc.msg.{k}"), d, d, true))
            .collect();
        let mut widths = vec![d_x + d];
        widths.extend(std::iter::repeat(d).take(cfg.update_layers));
        widths.push(d);
        let update = Mlp::new(store, rng, "proc.update", &widths);
        Ok(Self {
            cfg: cfg.clone(),
            recv,
            send,
            glob,
            extra,
            update,
            d_x,
            d_g,
        })
    }

    /// `x[n×d_x]`, `h_ij[n×n×d_h]`, `g[d_g]` -> (`p[n×d_h]`, messages
    /// `[n×n×d_h]` indexed receiver, sender). `adj` is the row-major
    /// adjacency (`adj[j*n+i]` is the edge `j -> i`) and is only consulted
    /// for [`Connectivity::Adjacency`].
    pub fn process<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        h_ij: Var,
        g: Var,
        adj: &[bool],
    ) -> Result<(Var, Var)> {
        let n = tape.shape(x)[0];
        if tape.shape(x) != [n, self.d_x] {
            return invalid(format!("processor node input {:?}, expected [{n}, {}]", tape.shape(x), self.d_x));
        }
        if tape.shape(h_ij) != [n, n, self.cfg.d_h] || tape.value(g).numel() != self.d_g {
            return invalid("processor edge or graph input has the wrong shape");
        }
        let r = self.recv.forward(tape, store, x)?;
        let s = self.send.forward(tape, store, x)?;
        let g2 = tape.reshape(g, &[1, self.d_g])?;
        let gm = self.glob.forward(tape, store, g2)?;
        let gm = tape.reshape(gm, &[self.cfg.d_h])?;
        let m = tape.pair_sum(r, s)?;
        let m = tape.add(m, h_ij)?;
        let m = tape.add_bias(m, gm)?;
        let mut m = tape.relu(m);
        for layer in &self.extra {
            let flat = tape.reshape(m, &[n * n, self.cfg.d_h])?;
            let y = layer.forward(tape, store, flat)?;
            let y = tape.relu(y);
            m = tape.reshape(y, &[n, n, self.cfg.d_h])?;
        }
        let gathered = match self.cfg.connectivity {
            Connectivity::Full => m,
            Connectivity::Adjacency => {
                let d = self.cfg.d_h;
                let keep = |i: usize, j: usize| i == j || adj[j * n + i];
                let mut mask = Vec::with_capacity(n * n * d);
                for i in 0..n {
                    for j in 0..n {
                        let v = match (self.cfg.aggregation, keep(i, j)) {
                            (Aggregation::Max, true) => 0.0,
                            (Aggregation::Max, false) => MASKED,
                            (Aggregation::Sum, k) => k as u8 as f64,
                        };
                        mask.extend(std::iter::repeat(v).take(d));
                    }
                }
                let mask = tape.constant(Tensor::from_f64(&[n, n, d], &mask)?);
                match self.cfg.aggregation {
                    Aggregation::Max => tape.add(m, mask)?,
                    Aggregation::Sum => tape.mul(m, mask)?,
                }
            }
        };
        let kind = match self.cfg.aggregation {
            Aggregation::Max => ReduceKind::Max,
            Aggregation::Sum => ReduceKind::Sum,
        };
        let agg = tape.reduce(gathered, 1, kind)?;
        let u = tape.concat(&[x, agg], 1)?;
        let p = self.update.forward(tape, store, u)?;
        Ok((p, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = ProcessorConfig { d_h: 4, ..Default::default() };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let proc = Processor::new(&mut store, &mut rng, &cfg, 4, 4).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[3, 4]));
        let e = tape.constant(random(&mut rng, &[3, 3, 4]));
        let g = tape.constant(random(&mut rng, &[4]));
        let (p, _) = proc.process(&mut tape, &store, x, e, g, &[false; 9]).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_node_hears_only_itself() {
        let cfg = ProcessorConfig {
            d_h: 4,
            connectivity: Connectivity::Adjacency,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let proc = Processor::new(&mut store, &mut rng, &cfg, 4, 4).unwrap();
        // edge 0 -> 1 only; node 2 is isolated
        let mut adj = vec![false; 9];
        adj[1] = true;
        let xs = random(&mut rng, &[3, 4]);
        let e = random(&mut rng, &[3, 3, 4]);
        let g = random(&mut rng, &[4]);
        let run = |xs: Tensor<f64>| {
            let mut tape = Tape::new();
            let x = tape.constant(xs);
            let ev = tape.constant(e.clone());
            let gv = tape.constant(g.clone());
            let (p, _) = proc.process(&mut tape, &store, x, ev, gv, &adj).unwrap();
            tape.value(p).row(2).to_vec()
        };
        let base = run(xs.clone());
        let mut other = xs;
        other.data_mut()[..8].iter_mut().for_each(|v| *v += 0.5);
        assert_eq!(base, run(other));
    }
}
