//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns
//! the gradient of that scalar with respect to every node that depends on
//! a bound parameter. Tapes are rebuilt for every forward pass.

use std::collections::HashMap;

use crate::error::{dim_err, input_err, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{argmax, gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    /// Sum whose accumulation order is the sorted order of the values, so
    /// any permutation of the reduced axis gives bit-identical output.
    SumCanonical,
    Max,
    Mean,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Relu(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reduce {
        x: Var,
        axis: usize,
        kind: ReduceKind,
        argmax: Vec<usize>,
    },
    Broadcast(Var),
    PairSum(Var, Var),
    Reshape(Var),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
    Mse {
        pred: Var,
        target: Vec<F>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    tracked: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Parameters bound on this tape with the variable they were bound to.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Untracked input value.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter; repeated calls return the same variable.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err("matmul", format!("{:?} x {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return dim_err("transpose", format!("expected rank 2, got {:?}", s));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let tracked = self.any_tracked(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Var {
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.any_tracked(&[a, b]);
        self.push(Tensor::new(shape, out).unwrap(), op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = F::from_f64_lossy(c);
        let value = self.value(a);
        let out = value.data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(value.shape().to_vec(), out).unwrap();
        let tracked = self.any_tracked(&[a]);
        self.push(t, Op::Scale(a, c), tracked)
    }

    /// Adds a vector of length `d` to every length-`d` row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.value(b).numel() != d {
            return dim_err(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(b)),
            );
        }
        let bias = self.value(b).data();
        let out = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(bias).map(|(&u, &v)| u + v))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let tracked = self.any_tracked(&[x, b]);
        Ok(self.push(t, Op::AddBias(x, b), tracked))
    }

    /// Multiplies row `i` of `x[r×d]` by the scalar `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (r, d) = self.value(x).as_matrix_dims();
        if self.value(w).numel() != r {
            return dim_err(
                "scale_rows",
                format!("{:?} by {:?}", self.shape(x), self.shape(w)),
            );
        }
        let weights = self.value(w).data();
        let out = self
            .value(x)
            .data()
            .chunks(d.max(1))
            .zip(weights)
            .flat_map(|(row, &s)| row.iter().map(move |&u| u * s))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let tracked = self.any_tracked(&[x, w]);
        Ok(self.push(t, Op::ScaleRows(x, w), tracked))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let out = value
            .data()
            .iter()
            .map(|&u| if u > F::zero() { u } else { F::zero() })
            .collect();
        let t = Tensor::new(value.shape().to_vec(), out).unwrap();
        let tracked = self.any_tracked(&[x]);
        self.push(t, Op::Relu(x), tracked)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return input_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return dim_err("concat", format!("axis {} for rank {}", axis, base.len()));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return dim_err("concat", format!("{:?} vs {:?}", s, base));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let tracked = self.any_tracked(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return dim_err("slice", format!("{:?} axis {} [{}, {})", s, axis, start, end));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let width = (end - start) * inner;
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            out.extend_from_slice(&data[base..base + width]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Slice { x, axis, start },
            tracked,
        ))
    }

    /// Reduces along `axis`, removing it from the shape. Max routes the
    /// gradient to the first maximal element.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return dim_err("reduce", format!("axis {} for shape {:?}", axis, s));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        if len == 0 && kind != ReduceKind::Sum && kind != ReduceKind::SumCanonical {
            return input_err("reduce", "empty axis");
        }
        let data = self.value(x).data();
        let mut out = vec![F::zero(); outer * inner];
        let mut arg = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let src = &data[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = F::one() / F::from_usize(len).unwrap();
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            }
            ReduceKind::SumCanonical => {
                let mut column = Vec::with_capacity(len);
                for o in 0..outer {
                    for i in 0..inner {
                        column.clear();
                        column.extend((0..len).map(|l| data[(o * len + l) * inner + i]));
                        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                        let mut acc = 0.0f64;
                        for &v in &column {
                            acc += v.as_f64();
                        }
                        out[o * inner + i] = F::from_f64_lossy(acc);
                    }
                }
            }
            ReduceKind::Max => {
                arg = vec![0usize; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0;
                        let mut best_v = data[o * len * inner + i];
                        for l in 1..len {
                            let v = data[(o * len + l) * inner + i];
                            if v > best_v {
                                best = l;
                                best_v = v;
                            }
                        }
                        out[o * inner + i] = best_v;
                        arg[o * inner + i] = best;
                    }
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Reduce {
                x,
                axis,
                kind,
                argmax: arg,
            },
            tracked,
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n])?;
        self.reduce(flat, 0, ReduceKind::Sum)
    }

    /// Repeats `x` along a new leading axis of length `reps`.
    pub fn broadcast(&mut self, x: Var, reps: usize) -> Var {
        let value = self.value(x);
        let mut shape = vec![reps];
        shape.extend_from_slice(value.shape());
        let mut out = Vec::with_capacity(reps * value.numel());
        for _ in 0..reps {
            out.extend_from_slice(value.data());
        }
        let t = Tensor::new(shape, out).unwrap();
        let tracked = self.any_tracked(&[x]);
        self.push(t, Op::Broadcast(x), tracked)
    }

    /// `out[i, j, :] = a[i, :] + b[j, :]` for `a[n×d]`, `b[m×d]`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return dim_err("pair_sum", format!("{:?} and {:?}", sa, sb));
        }
        let (n, m, d) = (sa[0], sb[0], sa[1]);
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * m * d);
        for i in 0..n {
            let ra = &xa[i * d..(i + 1) * d];
            for j in 0..m {
                let rb = &xb[j * d..(j + 1) * d];
                out.extend(ra.iter().zip(rb).map(|(&u, &v)| u + v));
            }
        }
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, m, d], out)?, Op::PairSum(a, b), tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(t, Op::Reshape(x), tracked))
    }

    /// Gathers rows (first axis) in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return dim_err("select_rows", "rank 0 input");
        }
        let width: usize = s[1..].iter().product();
        if let Some(&bad) = rows.iter().find(|&&r| r >= s[0]) {
            return dim_err("select_rows", format!("row {} of {}", bad, s[0]));
        }
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&data[r * width..(r + 1) * width]);
        }
        let mut shape = s;
        shape[0] = rows.len();
        let tracked = self.any_tracked(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            tracked,
        ))
    }

    /// Keeps the rows whose mask entry is set.
    pub fn mask_select(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        if self.shape(x).first() != Some(&mask.len()) {
            return dim_err(
                "mask_select",
                format!("mask of {} for {:?}", mask.len(), self.shape(x)),
            );
        }
        let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        self.select_rows(x, &rows)
    }

    /// Mean over rows of `-log softmax(row)[target]`. `logits` is `[k]` or
    /// `[r×k]`; masked-out classes (mask entry false) are excluded from the
    /// normalisation and receive no gradient.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (r, k) = self.value(logits).as_matrix_dims();
        if targets.len() != r {
            return dim_err(
                "softmax_cross_entropy",
                format!("{} targets for {} rows", targets.len(), r),
            );
        }
        if let Some(m) = mask {
            if m.len() != k {
                return dim_err("softmax_cross_entropy", format!("mask {} vs {} classes", m.len(), k));
            }
            if !m.iter().any(|&b| b) {
                return input_err("softmax_cross_entropy", "every class is masked");
            }
        }
        let allowed = |c: usize| mask.map_or(true, |m| m[c]);
        for &t in targets {
            if t >= k || !allowed(t) {
                return input_err("softmax_cross_entropy", format!("target {} not a valid class of {}", t, k));
            }
        }
        let x = self.value(logits).data();
        let mut probs = vec![F::zero(); r * k];
        let mut loss = 0.0f64;
        for (row, &target) in targets.iter().enumerate() {
            let xs = &x[row * k..(row + 1) * k];
            let mut mx = F::neg_infinity();
            for (c, &v) in xs.iter().enumerate() {
                if allowed(c) && v > mx {
                    mx = v;
                }
            }
            let mut z = F::zero();
            for (c, &v) in xs.iter().enumerate() {
                if allowed(c) {
                    let e = (v - mx).exp();
                    probs[row * k + c] = e;
                    z += e;
                }
            }
            for c in 0..k {
                probs[row * k + c] = probs[row * k + c] / z;
            }
            loss += (z.ln() - (xs[target] - mx)).as_f64();
        }
        loss /= r as f64;
        let tracked = self.any_tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(F::from_f64_lossy(loss)),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<F>) -> Result<Var> {
        if self.value(pred).numel() != target.numel() {
            return dim_err(
                "mse_loss",
                format!("{:?} vs {:?}", self.shape(pred), target.shape()),
            );
        }
        let n = target.numel().max(1);
        let mut acc = F::zero();
        for (&p, &t) in self.value(pred).data().iter().zip(target.data()) {
            acc += (p - t) * (p - t);
        }
        let loss = acc / F::from_usize(n).unwrap();
        let tracked = self.any_tracked(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            tracked,
        ))
    }

    /// Mean elementwise binary cross-entropy with logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[F]) -> Result<Var> {
        if self.value(logits).numel() != targets.len() {
            return dim_err(
                "bce_with_logits",
                format!("{:?} vs {} targets", self.shape(logits), targets.len()),
            );
        }
        let n = targets.len().max(1);
        let mut acc = F::zero();
        for (&x, &t) in self.value(logits).data().iter().zip(targets) {
            // max(x, 0) - x t + log(1 + exp(-|x|))
            acc += x.max(F::zero()) - x * t + (-x.abs()).exp().ln_1p();
        }
        let loss = acc / F::from_usize(n).unwrap();
        let tracked = self.any_tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return input_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            );
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let tracked = |v: Var| self.nodes[v.0].tracked;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !tracked(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![F::zero(); self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| gemm_nt(g, vb, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn(va, g, gb, m, k, n));
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((x, &y), &w) in ga.iter_mut().zip(g).zip(vb) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &y), &w) in gb.iter_mut().zip(g).zip(va) {
                        *x += y * w;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += c * y));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let d = self.value(*b).numel();
                acc(*b, &mut |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
            }
            Op::ScaleRows(x, w) => {
                let d = self.value(*x).as_matrix_dims().1.max(1);
                let (vx, vw) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &mut |gx| {
                    for ((gr, row), &s) in gx.chunks_mut(d).zip(g.chunks(d)).zip(vw) {
                        gr.iter_mut().zip(row).for_each(|(a, &b)| *a += b * s);
                    }
                });
                acc(*w, &mut |gw| {
                    for ((gi, row), xr) in gw.iter_mut().zip(g.chunks(d)).zip(vx.chunks(d)) {
                        let mut dot = F::zero();
                        for (&a, &b) in row.iter().zip(xr) {
                            dot += a * b;
                        }
                        *gi += dot;
                    }
                });
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, &b), &v) in gx.iter_mut().zip(g).zip(vx) {
                        if v > F::zero() {
                            *a += b;
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    acc(p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut gp[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let width = node.value.shape()[*axis] * inner;
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let base = o * len * inner + start * inner;
                        add_into(&mut gx[base..base + width], &g[o * width..(o + 1) * width]);
                    }
                });
            }
            Op::Reduce {
                x,
                axis,
                kind,
                argmax,
            } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                acc(*x, &mut |gx| match kind {
                    ReduceKind::Sum | ReduceKind::SumCanonical | ReduceKind::Mean => {
                        let scale = if *kind == ReduceKind::Mean {
                            F::one() / F::from_usize(len).unwrap()
                        } else {
                            F::one()
                        };
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for l in 0..len {
                                let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                                dst.iter_mut().zip(src).for_each(|(a, &b)| *a += scale * b);
                            }
                        }
                    }
                    ReduceKind::Max => {
                        for o in 0..outer {
                            for i in 0..inner {
                                let l = argmax[o * inner + i];
                                gx[(o * len + l) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Broadcast(x) => {
                let n = self.value(*x).numel();
                acc(*x, &mut |gx| {
                    for chunk in g.chunks(n.max(1)) {
                        add_into(gx, chunk);
                    }
                });
            }
            Op::PairSum(a, b) => {
                let s = node.value.shape();
                let (n, m, d) = (s[0], s[1], s[2]);
                acc(*a, &mut |ga| {
                    for i in 0..n {
                        let dst = &mut ga[i * d..(i + 1) * d];
                        for j in 0..m {
                            add_into(dst, &g[(i * m + j) * d..(i * m + j + 1) * d]);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..n {
                        for j in 0..m {
                            add_into(&mut gb[j * d..(j + 1) * d], &g[(i * m + j) * d..(i * m + j + 1) * d]);
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::SelectRows { x, rows } => {
                let width = node.value.numel() / rows.len().max(1);
                acc(*x, &mut |gx| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut gx[r * width..(r + 1) * width], &g[k * width..(k + 1) * width]);
                    }
                });
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let r = targets.len();
                let k = probs.len() / r.max(1);
                let scale = g[0] / F::from_usize(r).unwrap();
                acc(*logits, &mut |gl| {
                    for (row, &t) in targets.iter().enumerate() {
                        for c in 0..k {
                            let mut d = probs[row * k + c];
                            if c == t {
                                d -= F::one();
                            }
                            gl[row * k + c] += scale * d;
                        }
                    }
                });
            }
            Op::Mse { pred, target } => {
                let vp = self.value(*pred).data();
                let scale = g[0] * F::from_f64_lossy(2.0) / F::from_usize(target.len().max(1)).unwrap();
                acc(*pred, &mut |gp| {
                    for ((a, &p), &t) in gp.iter_mut().zip(vp).zip(target) {
                        *a += scale * (p - t);
                    }
                });
            }
            Op::BceLogits { logits, targets } => {
                let vx = self.value(*logits).data();
                let scale = g[0] / F::from_usize(targets.len().max(1)).unwrap();
                acc(*logits, &mut |gl| {
                    for ((a, &x), &t) in gl.iter_mut().zip(vx).zip(targets) {
                        let s = F::one() / (F::one() + (-x).exp());
                        *a += scale * (s - t);
                    }
                });
            }
        }
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Row-wise argmax of a recorded value (ties: lowest index).
pub fn argmax_rows<F: Scalar>(tape: &Tape<F>, v: Var) -> Vec<usize> {
    tape.value(v).argmax_rows()
}

/// Argmax over a flat recorded value.
pub fn argmax_flat<F: Scalar>(tape: &Tape<F>, v: Var) -> usize {
    argmax(tape.value(v).data())
}
