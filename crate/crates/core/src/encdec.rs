//! Encoders from hint values to latent features and decoders back to hint
//! predictions, with the per-type losses.

use callstack_tensor::{argmax, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::graph::Graph;
use crate::hints::{HintSpec, HintType, HintValue, Location, Role};
use crate::nn::{init_weight, Linear};

/// Step-invariant inputs of one graph.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub n: usize,
    pub pos: Vec<f64>,
    pub adj: Vec<bool>,
}

impl GraphInputs {
    /// Positions `i / n`.
    pub fn new(g: &Graph) -> Self {
        let n = g.n();
        Self::with_positions(g, (0..n).map(|i| i as f64 / n as f64).collect())
    }

    pub fn with_positions(g: &Graph, pos: Vec<f64>) -> Self {
        Self {
            n: g.n(),
            pos,
            adj: g.adjacency().to_vec(),
        }
    }
}

/// Channel widths a hint contributes at (node, graph, edge) locations.
fn widths(h: &HintSpec) -> (usize, usize, usize) {
    use HintType::*;
    use Location::*;
    match (h.location, h.kind) {
        (Edge, _) => (0, 0, 3),
        (Graph, Categorical { classes }) => (0, classes, 0),
        (Graph, Pointer { nullable }) => (1, nullable as usize, 0),
        (Graph, Scalar { nullable }) => (0, 1 + nullable as usize, 0),
        (Graph, Mask) => (0, 1, 0),
        (Node, Categorical { classes }) => (classes, 0, 0),
        (Node, Pointer { .. }) => (0, 0, 2),
        (Node, Scalar { nullable }) => (1 + nullable as usize, 0, 0),
        (Node, Mask) => (1, 0, 0),
    }
}

fn encoded(h: &HintSpec) -> bool {
    h.role != Role::Output
}

/// Dense per-location channel tensors for one step.
pub struct Channels {
    pub node: Vec<f64>,
    pub graph: Vec<f64>,
    pub edge: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    specs: Vec<HintSpec>,
    d_h: usize,
    node_w: Vec<ParamId>,
    graph_w: Vec<ParamId>,
    edge_w: Vec<ParamId>,
    node_b: ParamId,
    graph_b: ParamId,
    edge_b: ParamId,
    widths: (usize, usize, usize),
    dynamic_edges: bool,
}

impl Encoder {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        table: &[HintSpec],
        d_h: usize,
    ) -> Self {
        let specs: Vec<HintSpec> = table.iter().filter(|h| encoded(h)).cloned().collect();
        let (mut node_w, mut graph_w, mut edge_w) = (vec![], vec![], vec![]);
        let mut total = (0, 0, 0);
        for h in &specs {
            let (wn, wg, we) = widths(h);
            for (w, loc, list, acc) in [
                (wn, "node", &mut node_w, &mut total.0),
                (wg, "graph", &mut graph_w, &mut total.1),
                (we, "edge", &mut edge_w, &mut total.2),
            ] {
                if w > 0 {
                    let id = store.add(format!("enc.{}.{loc}.w", h.name), init_weight(rng, w, d_h));
                    list.push(id);
                    *acc += w;
                }
            }
        }
        let node_b = store.add("enc.node.b", Tensor::zeros(&[d_h]));
        let graph_b = store.add("enc.graph.b", Tensor::zeros(&[d_h]));
        let edge_b = store.add("enc.edge.b", Tensor::zeros(&[d_h]));
        let dynamic_edges = specs
            .iter()
            .any(|h| h.location == Location::Node && matches!(h.kind, HintType::Pointer { .. }));
        Self {
            specs,
            d_h,
            node_w,
            graph_w,
            edge_w,
            node_b,
            graph_b,
            edge_b,
            widths: total,
            dynamic_edges,
        }
    }

    /// Whether edge features depend on hints (and so change every step).
    pub fn dynamic_edges(&self) -> bool {
        self.dynamic_edges
    }

    /// Channel values. `hints` aligns with the `Role::Hint` entries of the
    /// table; when `None` only inputs are filled (hint channels stay zero).
    pub fn channels(&self, inputs: &GraphInputs, hints: Option<&[HintValue]>) -> Result<Channels> {
        let n = inputs.n;
        let (cn, cg, ce) = self.widths;
        let mut ch = Channels {
            node: vec![0.0; n * cn],
            graph: vec![0.0; cg],
            edge: vec![0.0; n * n * ce],
        };
        let (mut on, mut og, mut oe) = (0, 0, 0);
        let mut hint_iter = hints.map(|h| h.iter());
        for h in &self.specs {
            let (wn, wg, we) = widths(h);
            let value = if h.role == Role::Hint {
                match hint_iter.as_mut() {
                    Some(it) => match it.next() {
                        Some(v) => Some(v),
                        None => return invalid(format!("missing value for hint `{}`", h.name)),
                    },
                    None => None,
                }
            } else {
                None
            };
            let node = |ch: &mut Channels, i: usize, k: usize, x: f64| ch.node[i * cn + on + k] = x;
            match (h.role, h.name.as_str()) {
                (Role::Input, "pos") => {
                    for i in 0..n {
                        node(&mut ch, i, 0, inputs.pos[i]);
                    }
                }
                (Role::Input, "adj") => {
                    for i in 0..n {
                        for j in 0..n {
                            let e = &mut ch.edge[(i * n + j) * ce + oe..];
                            e[0] = inputs.adj[j * n + i] as u8 as f64;
                            e[1] = inputs.adj[i * n + j] as u8 as f64;
                            e[2] = (i == j) as u8 as f64;
                        }
                    }
                }
                (Role::Input, other) => return invalid(format!("unknown input `{other}`")),
                _ => {
                    if let Some(v) = value {
                        self.fill_hint(h, v, n, &mut ch, (on, og, oe))?;
                    }
                }
            }
            on += wn;
            og += wg;
            oe += we;
        }
        Ok(ch)
    }

    fn fill_hint(
        &self,
        h: &HintSpec,
        v: &HintValue,
        n: usize,
        ch: &mut Channels,
        (on, og, oe): (usize, usize, usize),
    ) -> Result<()> {
        let (cn, _, ce) = self.widths;
        let expect = if h.location == Location::Graph { 1 } else { n };
        if v.len() != expect {
            return invalid(format!(
                "hint `{}` has {} values, expected {expect}",
                h.name,
                v.len()
            ));
        }
        let bad = || invalid(format!("hint `{}` value out of range", h.name));
        match (h.location, h.kind, v) {
            (Location::Graph, HintType::Categorical { classes }, HintValue::Cat(c)) => {
                if c[0] >= classes {
                    return bad();
                }
                ch.graph[og + c[0]] = 1.0;
            }
            (Location::Graph, HintType::Pointer { nullable }, HintValue::Ptr(p)) => match p[0] {
                Some(k) if k < n => ch.node[k * cn + on] = 1.0,
                None if nullable => ch.graph[og] = 1.0,
                _ => return bad(),
            },
            (Location::Graph, HintType::Scalar { nullable }, HintValue::Scalar(s)) => match s[0] {
                Some(x) => ch.graph[og] = x,
                None if nullable => ch.graph[og + 1] = 1.0,
                None => return bad(),
            },
            (Location::Graph, HintType::Mask, HintValue::Mask(m)) => {
                ch.graph[og] = m[0] as u8 as f64;
            }
            (Location::Node, HintType::Categorical { classes }, HintValue::Cat(c)) => {
                for (i, &k) in c.iter().enumerate() {
                    if k >= classes {
                        return bad();
                    }
                    ch.node[i * cn + on + k] = 1.0;
                }
            }
            (Location::Node, HintType::Pointer { .. }, HintValue::Ptr(p)) => {
                let p: Vec<usize> = match p.iter().copied().collect::<Option<Vec<_>>>() {
                    Some(p) if p.iter().all(|&k| k < n) => p,
                    _ => return bad(),
                };
                for i in 0..n {
                    for j in 0..n {
                        let e = &mut ch.edge[(i * n + j) * ce + oe..];
                        e[0] = (p[i] == j) as u8 as f64;
                        e[1] = (p[j] == i) as u8 as f64;
                    }
                }
            }
            (Location::Node, HintType::Scalar { nullable }, HintValue::Scalar(s)) => {
                for (i, x) in s.iter().enumerate() {
                    match x {
                        Some(x) => ch.node[i * cn + on] = *x,
                        None if nullable => ch.node[i * cn + on + 1] = 1.0,
                        None => return bad(),
                    }
                }
            }
            (Location::Node, HintType::Mask, HintValue::Mask(m)) => {
                for (i, &b) in m.iter().enumerate() {
                    ch.node[i * cn + on] = b as u8 as f64;
                }
            }
            _ => return invalid(format!("hint `{}` has a value of the wrong type", h.name)),
        }
        Ok(())
    }

    fn embed<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        data: &[f64],
        rows: usize,
        ws: &[ParamId],
        b: ParamId,
    ) -> Result<Var> {
        let b = tape.param(store, b);
        if ws.is_empty() {
            let zero = tape.constant(Tensor::zeros(&[rows, self.d_h]));
            return Ok(tape.add_bias(zero, b)?);
        }
        let parts: Vec<Var> = ws.iter().map(|&w| tape.param(store, w)).collect();
        let w = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts, 0)?
        };
        let width = data.len() / rows.max(1);
        let x = tape.constant(Tensor::from_f64(&[rows, width], data)?);
        let y = tape.matmul(x, w)?;
        Ok(tape.add_bias(y, b)?)
    }

    /// Node features `[n×d_h]` and graph features `[d_h]`.
    pub fn encode_nodes_graph<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        ch: &Channels,
        n: usize,
    ) -> Result<(Var, Var)> {
        let h_i = self.embed(tape, store, &ch.node, n, &self.node_w, self.node_b)?;
        let h_g = self.embed(tape, store, &ch.graph, 1, &self.graph_w, self.graph_b)?;
        let h_g = tape.reshape(h_g, &[self.d_h])?;
        Ok((h_i, h_g))
    }

    /// Edge features `[n×n×d_h]`; entry `(i, j)` describes sender `j` as
    /// seen by receiver `i`.
    pub fn encode_edges<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        ch: &Channels,
        n: usize,
    ) -> Result<Var> {
        let e = self.embed(tape, store, &ch.edge, n * n, &self.edge_w, self.edge_b)?;
        Ok(tape.reshape(e, &[n, n, self.d_h])?)
    }
}

/// Raw decoder outputs for one hint.
#[derive(Clone, Copy, Debug)]
pub enum Decoded {
    /// Categorical `[k]` / `[n×k]`, graph pointer `[n]` (`[n+1]` with a
    /// trailing "none" slot), node pointer `[n×n]`.
    Logits(Var),
    /// Values `[1]` / `[n]`, with optional none-vs-value logits `[2]` / `[n×2]`
    /// (class 1 = none).
    Scalar { value: Var, none: Option<Var> },
    /// Mask logits `[n]`.
    Mask(Var),
}

#[derive(Clone, Debug)]
enum Head {
    /// Columns of the graph head.
    Graph { col: usize, width: usize },
    /// Columns of the node head.
    Node { col: usize, width: usize },
    /// Graph pointer: node score column, optional none column in the graph head.
    GraphPtr { col: usize, none_col: Option<usize> },
    /// Graph scalar: value column and optional none columns in the graph head.
    GraphScalar { col: usize, none_col: Option<usize> },
    NodeScalar { col: usize, none_col: Option<usize> },
    NodeMask { col: usize },
    Pairwise { a: Linear, b: Linear },
}

#[derive(Clone, Debug)]
pub struct Decoder {
    specs: Vec<HintSpec>,
    heads: Vec<Head>,
    graph_head: Option<Linear>,
    node_head: Option<Linear>,
    output: Option<(HintSpec, Head)>,
    d_h: usize,
}

impl Decoder {
    /// Heads for every `Role::Hint` entry, plus the output head when
    /// `with_output` is set.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        table: &[HintSpec],
        d_h: usize,
        with_output: bool,
    ) -> Result<Self> {
        let specs: Vec<HintSpec> = table.iter().filter(|h| h.role == Role::Hint).cloned().collect();
        let (mut gw, mut nw) = (0usize, 0usize);
        let take = |acc: &mut usize, w: usize| {
            let c = *acc;
            *acc += w;
            c
        };
        let mut heads = Vec::new();
        for h in &specs {
            use HintType::*;
            let head = match (h.location, h.kind) {
                (Location::Graph, Categorical { classes }) => Head::Graph {
                    col: take(&mut gw, classes),
                    width: classes,
                },
                (Location::Graph, Pointer { nullable }) => Head::GraphPtr {
                    col: take(&mut nw, 1),
                    none_col: nullable.then(|| take(&mut gw, 1)),
                },
                (Location::Graph, Scalar { nullable }) => Head::GraphScalar {
                    col: take(&mut gw, 1),
                    none_col: nullable.then(|| take(&mut gw, 2)),
                },
                (Location::Node, Categorical { classes }) => Head::Node {
                    col: take(&mut nw, classes),
                    width: classes,
                },
                (Location::Node, Scalar { nullable }) => Head::NodeScalar {
                    col: take(&mut nw, 1),
                    none_col: nullable.then(|| take(&mut nw, 2)),
                },
                (Location::Node, Mask) => Head::NodeMask {
                    col: take(&mut nw, 1),
                },
                (Location::Node, Pointer { .. }) => Head::Pairwise {
                    a: Linear::new(store, rng, &format!("dec.{}.a", h.name), 2 * d_h, d_h, true),
                    b: Linear::new(store, rng, &format!("dec.{}.b", h.name), 2 * d_h, d_h, true),
                },
                _ => return invalid(format!("hint `{}` cannot be decoded", h.name)),
            };
            heads.push(head);
        }
        let output = if with_output {
            let Some(spec) = table.iter().find(|h| h.role == Role::Output) else {
                return invalid("hint table has no output");
            };
            if spec.location != Location::Node || !matches!(spec.kind, HintType::Pointer { .. }) {
                return invalid("output must be a node pointer");
            }
            let head = Head::Pairwise {
                a: Linear::new(store, rng, "dec.out.a", 2 * d_h, d_h, true),
                b: Linear::new(store, rng, "dec.out.b", 2 * d_h, d_h, true),
            };
            Some((spec.clone(), head))
        } else {
            None
        };
        // Zero heads start every prediction at zero (uniform logits, zero
        // scalars), which keeps fed-back predictions bounded early on.
        let graph_head = (gw > 0).then(|| Linear::zeroed(store, "dec.graph", d_h, gw));
        let node_head = (nw > 0).then(|| Linear::zeroed(store, "dec.node", 2 * d_h, nw));
        Ok(Self {
            specs,
            heads,
            graph_head,
            node_head,
            output,
            d_h,
        })
    }

    pub fn specs(&self) -> &[HintSpec] {
        &self.specs
    }

    pub fn has_output(&self) -> bool {
        self.output.is_some()
    }

    /// `q_i = [p_i, pooled]`.
    fn node_inputs<F: Scalar>(&self, tape: &mut Tape<F>, p: Var, pooled: Var) -> Result<Var> {
        let n = tape.shape(p)[0];
        let g = tape.broadcast(pooled, n);
        Ok(tape.concat(&[p, g], 1)?)
    }

    fn pairwise<F: Scalar>(
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        q: Var,
        a: &Linear,
        b: &Linear,
    ) -> Result<Var> {
        let za = a.forward(tape, store, q)?;
        let zb = b.forward(tape, store, q)?;
        let zb = tape.transpose(zb)?;
        Ok(tape.matmul(za, zb)?)
    }

    /// Hint predictions from processed node features `p[n×d_h]` and the
    /// pooled readout `[d_h]`.
    pub fn decode_hints<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        p: Var,
        pooled: Var,
    ) -> Result<Vec<Decoded>> {
        let n = tape.shape(p)[0];
        let q = self.node_inputs(tape, p, pooled)?;
        let graph_out = match &self.graph_head {
            Some(l) => {
                let x = tape.reshape(pooled, &[1, self.d_h])?;
                let y = l.forward(tape, store, x)?;
                let w = tape.shape(y)[1];
                Some(tape.reshape(y, &[w])?)
            }
            None => None,
        };
        let node_out = match &self.node_head {
            Some(l) => Some(l.forward(tape, store, q)?),
            None => None,
        };
        let gslice = |tape: &mut Tape<F>, col: usize, w: usize| -> Result<Var> {
            Ok(tape.slice(graph_out.unwrap(), 0, col, col + w)?)
        };
        let nslice = |tape: &mut Tape<F>, col: usize, w: usize| -> Result<Var> {
            Ok(tape.slice(node_out.unwrap(), 1, col, col + w)?)
        };
        let column = |tape: &mut Tape<F>, col: usize| -> Result<Var> {
            let c = nslice(tape, col, 1)?;
            Ok(tape.reshape(c, &[n])?)
        };
        let mut out = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let d = match head {
                Head::Graph { col, width } => Decoded::Logits(gslice(tape, *col, *width)?),
                Head::Node { col, width } => Decoded::Logits(nslice(tape, *col, *width)?),
                Head::GraphPtr { col, none_col } => {
                    let scores = column(tape, *col)?;
                    match none_col {
                        Some(c) => {
                            let none = gslice(tape, *c, 1)?;
                            Decoded::Logits(tape.concat(&[scores, none], 0)?)
                        }
                        None => Decoded::Logits(scores),
                    }
                }
                Head::GraphScalar { col, none_col } => Decoded::Scalar {
                    value: gslice(tape, *col, 1)?,
                    none: match none_col {
                        Some(c) => Some(gslice(tape, *c, 2)?),
                        None => None,
                    },
                },
                Head::NodeScalar { col, none_col } => Decoded::Scalar {
                    value: column(tape, *col)?,
                    none: match none_col {
                        Some(c) => Some(nslice(tape, *c, 2)?),
                        None => None,
                    },
                },
                Head::NodeMask { col } => Decoded::Mask(column(tape, *col)?),
                Head::Pairwise { a, b } => Decoded::Logits(Self::pairwise(tape, store, q, a, b)?),
            };
            out.push(d);
        }
        Ok(out)
    }

    /// Per-node predecessor logits `[n×n]`; row `i` scores candidates for `π[i]`.
    pub fn decode_output<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        p: Var,
        pooled: Var,
    ) -> Result<Var> {
        let Some((_, Head::Pairwise { a, b })) = &self.output else {
            return invalid("model has no output decoder");
        };
        let q = self.node_inputs(tape, p, pooled)?;
        Self::pairwise(tape, store, q, a, b)
    }
}

/// Loss of one decoded hint against its ground truth.
pub fn hint_loss<F: Scalar>(
    tape: &mut Tape<F>,
    spec: &HintSpec,
    decoded: Decoded,
    truth: &HintValue,
) -> Result<Var> {
    match (decoded, truth) {
        (Decoded::Logits(z), HintValue::Cat(c)) => Ok(tape.softmax_cross_entropy(z, c, None)?),
        (Decoded::Logits(z), HintValue::Ptr(p)) => {
            let none_slot = tape.shape(z).last().copied().unwrap_or(0) - 1;
            let targets: Vec<usize> = p.iter().map(|x| x.unwrap_or(none_slot)).collect();
            if spec.location == Location::Graph
                && p[0].is_none()
                && !matches!(spec.kind, HintType::Pointer { nullable: true })
            {
                return invalid(format!("hint `{}` is not nullable", spec.name));
            }
            Ok(tape.softmax_cross_entropy(z, &targets, None)?)
        }
        (Decoded::Scalar { value, none }, HintValue::Scalar(s)) => {
            let present: Vec<bool> = s.iter().map(|x| x.is_some()).collect();
            let mut parts = Vec::new();
            if present.iter().any(|&b| b) {
                let v = if present.iter().all(|&b| b) {
                    value
                } else {
                    tape.mask_select(value, &present)?
                };
                let target: Vec<f64> = s.iter().flatten().copied().collect();
                let t = Tensor::from_f64(&[target.len()], &target)?;
                let v = tape.reshape(v, &[target.len()])?;
                parts.push(tape.mse_loss(v, &t)?);
            }
            if let Some(z) = none {
                let targets: Vec<usize> = present.iter().map(|&b| (!b) as usize).collect();
                parts.push(tape.softmax_cross_entropy(z, &targets, None)?);
            } else if parts.is_empty() {
                return invalid(format!("hint `{}` has no value", spec.name));
            }
            sum_vars(tape, &parts)
        }
        (Decoded::Mask(z), HintValue::Mask(m)) => {
            let t: Vec<F> = m.iter().map(|&b| if b { F::one() } else { F::zero() }).collect();
            Ok(tape.bce_with_logits(z, &t)?)
        }
        _ => invalid(format!("hint `{}` decoded with the wrong head", spec.name)),
    }
}

pub fn sum_vars<F: Scalar>(tape: &mut Tape<F>, parts: &[Var]) -> Result<Var> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

/// Hard prediction for one decoded hint; argmax ties go to the lowest index.
/// Scalars are clamped to [0, 1], the range of every normalised scalar hint,
/// so free-running feedback cannot grow without bound.
pub fn predict<F: Scalar>(tape: &Tape<F>, spec: &HintSpec, decoded: Decoded) -> HintValue {
    match decoded {
        Decoded::Logits(z) => {
            let t = tape.value(z);
            match (spec.location, spec.kind) {
                (Location::Graph, HintType::Pointer { nullable }) => {
                    let k = argmax(t.data());
                    let n = if nullable { t.numel() - 1 } else { t.numel() };
                    HintValue::Ptr(vec![(k < n).then_some(k)])
                }
                (Location::Graph, _) => HintValue::Cat(vec![argmax(t.data())]),
                (Location::Node, HintType::Pointer { .. }) => {
                    HintValue::Ptr(t.argmax_rows().into_iter().map(Some).collect())
                }
                _ => HintValue::Cat(t.argmax_rows()),
            }
        }
        Decoded::Scalar { value, none } => {
            let v = tape.value(value).to_f64_vec();
            let is_none = match none {
                Some(z) => tape.value(z).argmax_rows().into_iter().map(|k| k == 1).collect(),
                None => vec![false; v.len()],
            };
            HintValue::Scalar(
                v.into_iter()
                    .zip(is_none)
                    .map(|(x, none)| (!none).then_some(x.clamp(0.0, 1.0)))
                    .collect(),
            )
        }
        Decoded::Mask(z) => HintValue::Mask(
            tape.value(z).data().iter().map(|&x| x > F::zero()).collect(),
        ),
    }
}
