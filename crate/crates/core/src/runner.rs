//! Recurrent unrolls over a trajectory, output collection, training and
//! evaluation.

use std::time::Instant;

use callstack_tensor::{Adam, AdamConfig, ParamStore, Scalar, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encdec::{sum_vars, GraphInputs};
use crate::error::{invalid, CoreError, Result};
use crate::graph::{mix_seed, Graph};
use crate::hints::{step_hints, HintValue};
use crate::model::Model;
use crate::oracle::{sample_trajectory, Scheme, StackOp, Trajectory};
use crate::stack::Stack;

/// Per-node predecessors collected during an unroll.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputTable(pub Vec<usize>);

impl OutputTable {
    /// Every node its own predecessor.
    pub fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
}

/// `table[u] := u_pi`; out-of-range indices leave the table unchanged.
pub fn collect_output(table: &mut OutputTable, u: usize, u_pi: usize) {
    let n = table.0.len();
    if u < n && u_pi < n {
        table.0[u] = u_pi;
    }
}

/// Fraction of nodes whose predicted predecessor is correct.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnrollMode {
    /// Ground-truth inputs with the given per-step probability.
    Train { teacher_forcing: f64 },
    /// Predictions only, detached per step.
    Eval,
}

/// One step of an unroll, for debugging dumps.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub forced: bool,
    pub inputs: Vec<HintValue>,
    pub predicted: Vec<HintValue>,
    pub truth: Vec<HintValue>,
    pub executed_op: StackOp,
    pub depth: usize,
    pub table: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct UnrollStats {
    pub loss: f64,
    pub hint_losses: Vec<f64>,
    pub output_loss: Option<f64>,
    pub predicted_pi: Vec<usize>,
    pub accuracy: f64,
    pub stack_op_correct: usize,
    pub steps: usize,
    pub max_depth: usize,
    pub trace: Vec<StepRecord>,
}

fn stack_op_of(model_hints: &[crate::hints::HintSpec], values: &[HintValue]) -> Option<StackOp> {
    model_hints
        .iter()
        .position(|h| h.name == "stack_op")
        .map(|k| StackOp::from_index(values[k].cat()[0]))
}

fn graph_ptr(values: &[HintValue], k: Option<usize>) -> Option<usize> {
    k.and_then(|k| values[k].ptr()[0])
}

/// Ground-truth hint values for every step.
pub fn truth_hints<F: Scalar>(model: &Model<F>, traj: &Trajectory) -> Result<Vec<Vec<HintValue>>> {
    if traj.is_empty() {
        return invalid("empty trajectory");
    }
    (0..traj.len()).map(|t| step_hints(traj, t, &model.cfg.hints)).collect()
}

fn check_sizes(inputs: &GraphInputs, traj: &Trajectory) -> Result<()> {
    if inputs.n != traj.n {
        return invalid(format!(
            "graph has {} nodes but trajectory has {}",
            inputs.n, traj.n
        ));
    }
    Ok(())
}

/// Training unroll on a single tape, so gradients flow through pushed
/// frames and the hidden state. Returns the tape, the scalar loss and
/// statistics. The loss is the mean over steps of the summed hint losses,
/// plus the output loss when collection is off.
pub fn unroll_train<F: Scalar>(
    model: &Model<F>,
    inputs: &GraphInputs,
    traj: &Trajectory,
    teacher_forcing: f64,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<(Tape<F>, Var, UnrollStats)> {
    check_sizes(inputs, traj)?;
    let truth = truth_hints(model, traj)?;
    let specs = model.hint_specs().to_vec();
    let (iu, ipi) = (model.hint_index("u"), model.hint_index("u_pi"));
    let n = inputs.n;
    let steps = truth.len();
    let forced: Vec<bool> = (0..steps)
        .map(|t| t == 0 || rng.gen_bool(teacher_forcing.clamp(0.0, 1.0)))
        .collect();

    let mut tape = Tape::new();
    let edges = if model.encoder.dynamic_edges() {
        None
    } else {
        Some(model.static_edges(&mut tape, inputs)?)
    };
    let mut stack = model.zero_top(n).map(|z| Stack::new(tape.constant(z)));
    let mut p_prev = model
        .cfg
        .processor
        .use_hidden_state
        .then(|| tape.constant(Tensor::zeros(&[n, model.cfg.processor.d_h])));
    let mut table = OutputTable::new(n);
    let mut prev_pred: Option<Vec<HintValue>> = None;
    let mut step_losses = Vec::with_capacity(steps);
    let mut hint_sums = vec![0.0; specs.len()];
    let mut stack_ok = 0;
    let mut trace = Vec::new();
    let mut last = None;

    for t in 0..steps {
        let input = match (&prev_pred, forced[t]) {
            (Some(p), false) => p.clone(),
            _ => truth[t.saturating_sub(1)].clone(),
        };
        let top = stack.as_ref().map(|s| *s.top());
        let out = model.step(&mut tape, inputs, &input, edges, top, p_prev)?;
        let (loss_t, parts) = model.step_loss(&mut tape, &out, &truth[t])?;
        for (acc, v) in hint_sums.iter_mut().zip(&parts) {
            *acc += tape.value(*v).item().as_f64();
        }
        step_losses.push(loss_t);
        let pred = model.predictions(&tape, &out);
        if let (Some(u), Some(pi)) = (graph_ptr(&pred, iu), graph_ptr(&pred, ipi)) {
            collect_output(&mut table, u, pi);
        }
        let pred_op = stack_op_of(&specs, &pred);
        let true_op = stack_op_of(&specs, &truth[t]);
        if pred_op.is_some() && pred_op == true_op {
            stack_ok += 1;
        }
        let op = if t + 1 < steps && forced[t + 1] { true_op } else { pred_op };
        if let (Some(s), Some(op)) = (stack.as_mut(), op) {
            s.apply(op, || model.frame(&mut tape, &out))?;
        }
        if p_prev.is_some() {
            p_prev = Some(out.p);
        }
        if record {
            trace.push(StepRecord {
                step: t,
                forced: forced[t],
                inputs: input,
                predicted: pred.clone(),
                truth: truth[t].clone(),
                executed_op: op.unwrap_or(StackOp::Noop),
                depth: stack.as_ref().map_or(0, |s| s.depth()),
                table: table.0.clone(),
            });
        }
        prev_pred = Some(pred);
        last = Some(out);
    }

    let total = sum_vars(&mut tape, &step_losses)?;
    let mut loss = tape.scale(total, 1.0 / steps as f64);
    let mut output_loss = None;
    let predicted_pi = if model.cfg.use_output_collection {
        table.0.clone()
    } else {
        let out = last.unwrap();
        let logits = model.output_logits(&mut tape, &out)?;
        let l = tape.softmax_cross_entropy(logits, &traj.pi, None)?;
        output_loss = Some(tape.value(l).item().as_f64());
        loss = tape.add(loss, l)?;
        tape.value(logits).argmax_rows()
    };
    let stats = UnrollStats {
        loss: tape.value(loss).item().as_f64(),
        hint_losses: hint_sums.iter().map(|s| s / steps as f64).collect(),
        output_loss,
        accuracy: accuracy(&predicted_pi, &traj.pi),
        predicted_pi,
        stack_op_correct: stack_ok,
        steps,
        max_depth: stack.as_ref().map_or(0, |s| s.max_depth()),
        trace,
    };
    Ok((tape, loss, stats))
}

/// Evaluation unroll: predictions feed the next step, the executed stack
/// op is the predicted one, and every step uses a fresh tape with detached
/// frames. Runs exactly as many steps as the ground-truth trajectory.
pub fn unroll_eval<F: Scalar>(
    model: &Model<F>,
    inputs: &GraphInputs,
    traj: &Trajectory,
    record: bool,
) -> Result<UnrollStats> {
    check_sizes(inputs, traj)?;
    let truth = truth_hints(model, traj)?;
    let specs = model.hint_specs().to_vec();
    let (iu, ipi) = (model.hint_index("u"), model.hint_index("u_pi"));
    let n = inputs.n;
    let steps = truth.len();
    let edge_tensor = if model.encoder.dynamic_edges() {
        None
    } else {
        let mut tape = Tape::new();
        let e = model.static_edges(&mut tape, inputs)?;
        Some(tape.value(e).clone())
    };
    let mut stack = model.zero_top(n).map(Stack::new);
    let mut p_prev: Option<Tensor<F>> = model
        .cfg
        .processor
        .use_hidden_state
        .then(|| Tensor::zeros(&[n, model.cfg.processor.d_h]));
    let mut table = OutputTable::new(n);
    let mut input = truth[0].clone();
    let mut hint_sums = vec![0.0; specs.len()];
    let mut loss_sum = 0.0;
    let mut stack_ok = 0;
    let mut trace = Vec::new();
    let mut output = None;

    for t in 0..steps {
        let mut tape = Tape::new();
        let edges = edge_tensor.as_ref().map(|e| tape.constant(e.clone()));
        let top = stack.as_ref().map(|s: &Stack<Tensor<F>>| tape.constant(s.top().clone()));
        let prev = p_prev.as_ref().map(|p| tape.constant(p.clone()));
        let out = model.step(&mut tape, inputs, &input, edges, top, prev)?;
        let parts = model.hint_losses(&mut tape, &out, &truth[t])?;
        for (acc, v) in hint_sums.iter_mut().zip(&parts) {
            let x = tape.value(*v).item().as_f64();
            *acc += x;
            loss_sum += x;
        }
        let pred = model.predictions(&tape, &out);
        if let (Some(u), Some(pi)) = (graph_ptr(&pred, iu), graph_ptr(&pred, ipi)) {
            collect_output(&mut table, u, pi);
        }
        let op = stack_op_of(&specs, &pred);
        if op.is_some() && op == stack_op_of(&specs, &truth[t]) {
            stack_ok += 1;
        }
        if let (Some(s), Some(op)) = (stack.as_mut(), op) {
            s.apply(op, || -> Result<Tensor<F>> {
                let f = model.frame(&mut tape, &out)?;
                Ok(tape.value(f).clone())
            })?;
        }
        if p_prev.is_some() {
            p_prev = Some(tape.value(out.p).clone());
        }
        if t + 1 == steps && !model.cfg.use_output_collection {
            let logits = model.output_logits(&mut tape, &out)?;
            let l = tape.softmax_cross_entropy(logits, &traj.pi, None)?;
            output = Some((tape.value(logits).argmax_rows(), tape.value(l).item().as_f64()));
        }
        if record {
            trace.push(StepRecord {
                step: t,
                forced: t == 0,
                inputs: input.clone(),
                predicted: pred.clone(),
                truth: truth[t].clone(),
                executed_op: op.unwrap_or(StackOp::Noop),
                depth: stack.as_ref().map_or(0, |s| s.depth()),
                table: table.0.clone(),
            });
        }
        input = pred;
    }

    let (predicted_pi, output_loss) = match output {
        Some((pi, l)) => (pi, Some(l)),
        None => (table.0.clone(), None),
    };
    Ok(UnrollStats {
        loss: loss_sum / steps as f64 + output_loss.unwrap_or(0.0),
        hint_losses: hint_sums.iter().map(|s| s / steps as f64).collect(),
        output_loss,
        accuracy: accuracy(&predicted_pi, &traj.pi),
        predicted_pi,
        stack_op_correct: stack_ok,
        steps,
        max_depth: stack.as_ref().map_or(0, |s| s.max_depth()),
        trace,
    })
}

/// Result of replaying a trajectory with a perfect predictor: every
/// decoded hint replaced by its ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReplay {
    pub table: OutputTable,
    pub steps: usize,
    pub pushes: usize,
    pub pops: usize,
    pub max_depth: usize,
}

pub fn replay_ground_truth(traj: &Trajectory) -> OracleReplay {
    let mut table = OutputTable::new(traj.n);
    let mut stack = Stack::new(0usize);
    let (mut pushes, mut pops) = (0, 0);
    for (t, s) in traj.steps.iter().enumerate() {
        collect_output(&mut table, s.u, s.u_pi);
        match s.stack_op {
            StackOp::Push => pushes += 1,
            StackOp::Pop => pops += 1,
            StackOp::Noop => {}
        }
        stack.apply::<()>(s.stack_op, || Ok(t + 1)).unwrap();
    }
    OracleReplay {
        table,
        steps: traj.len(),
        pushes,
        pops,
        max_depth: stack.max_depth(),
    }
}

/// Accuracy summary over a set of graphs.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub graphs: usize,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub per_graph: Vec<f64>,
    pub loss: f64,
    pub hint_losses: Vec<f64>,
    pub stack_op_accuracy: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

pub fn evaluate<F: Scalar>(model: &Model<F>, data: &[(GraphInputs, Trajectory)]) -> Result<EvalReport> {
    let mut per_graph = Vec::with_capacity(data.len());
    let k = model.hint_specs().len();
    let mut hint = vec![0.0; k];
    let (mut loss, mut ok, mut total) = (0.0, 0usize, 0usize);
    for (inputs, traj) in data {
        let s = unroll_eval(model, inputs, traj, false)?;
        per_graph.push(s.accuracy);
        loss += s.loss;
        for (a, b) in hint.iter_mut().zip(&s.hint_losses) {
            *a += b;
        }
        ok += s.stack_op_correct;
        total += s.steps;
    }
    let count = data.len().max(1) as f64;
    let (accuracy, accuracy_std) = mean_std(&per_graph);
    Ok(EvalReport {
        graphs: data.len(),
        accuracy,
        accuracy_std,
        per_graph,
        loss: loss / count,
        hint_losses: hint.iter().map(|h| h / count).collect(),
        stack_op_accuracy: ok as f64 / total.max(1) as f64,
    })
}

/// Inputs and trajectories for a set of graphs.
pub fn prepare(graphs: &[Graph], scheme: Scheme) -> Vec<(GraphInputs, Trajectory)> {
    graphs
        .iter()
        .map(|g| (GraphInputs::new(g), sample_trajectory(g, scheme)))
        .collect()
}

/// Training schedule and optimisation settings.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub teacher_forcing: f64,
    pub eval_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Random sorted positions in [0, 1) instead of `i / n` for training graphs.
    pub randomize_pos: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
    pub hint_losses: Vec<f64>,
    pub stack_op_accuracy: f64,
}

/// Metrics CSV. Only deterministic quantities go here; wall time and
/// memory are written separately by [`TimingRow`].
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub hint_names: Vec<String>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,split,accuracy,loss");
        for h in &self.hint_names {
            s.push_str(&format!(",loss_{h}"));
        }
        s.push_str(",stack_op_accuracy\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.6},{:.6}", r.step, r.split, r.accuracy, r.loss));
            for l in &r.hint_losses {
                s.push_str(&format!(",{l:.6}"));
            }
            s.push_str(&format!(",{:.6}\n", r.stack_op_accuracy));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TimingRow {
    pub step: usize,
    pub wall_seconds: f64,
    pub peak_rss_kb: Option<u64>,
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("step,wall_seconds,peak_rss_kb\n");
    for r in rows {
        let rss = r.peak_rss_kb.map(|k| k.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{:.3},{}\n", r.step, r.wall_seconds, rss));
    }
    s
}

/// Peak resident set size of this process in kB (Linux only).
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

#[derive(Clone, Debug)]
pub struct TrainReport<F: Scalar> {
    pub best_step: usize,
    pub best_validation: f64,
    pub metrics: MetricsLog,
    pub timing: Vec<TimingRow>,
    /// Parameters at the best validation point.
    pub best_params: ParamStore<F>,
    pub adam: Adam,
}

fn clip_gradients<F: Scalar>(store: &mut ParamStore<F>, max_norm: f64) {
    let ids: Vec<_> = store.ids().collect();
    let norm: f64 = ids
        .iter()
        .flat_map(|&id| store.grad(id).data().iter().map(|g| g.as_f64().powi(2)).collect::<Vec<_>>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = F::from_f64_lossy(max_norm / norm);
        for id in ids {
            store.grad_mut(id).data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Trains with Adam, evaluating on `validation` every `eval_every` steps
/// and at the end. The model ends holding the best-validation parameters;
/// accuracy ties go to the lower validation loss.
/// `on_eval` sees each validation point (used for checkpointing).
pub fn train<F: Scalar>(
    model: &mut Model<F>,
    train_graphs: &[Graph],
    validation: &[(GraphInputs, Trajectory)],
    settings: &TrainSettings,
    mut on_eval: impl FnMut(&Model<F>, &Adam, usize, f64, bool) -> Result<()>,
) -> Result<TrainReport<F>> {
    if train_graphs.is_empty() || validation.is_empty() {
        return invalid("training needs non-empty train and validation splits");
    }
    if settings.batch_size == 0 || settings.eval_every == 0 {
        return invalid("batch_size and eval_every must be positive");
    }
    let scheme = model.cfg.scheme;
    let trajs: Vec<Trajectory> = train_graphs.iter().map(|g| sample_trajectory(g, scheme)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(settings.seed, 0x7472_6169_6e));
    let mut adam = Adam::new(&model.store, settings.adam);
    let mut metrics = MetricsLog {
        hint_names: model.hint_specs().iter().map(|h| h.name.clone()).collect(),
        rows: Vec::new(),
    };
    let mut timing = Vec::new();
    let start = Instant::now();
    let mut order: Vec<usize> = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, f64::INFINITY);
    let mut best_params = model.store.clone();
    let k = model.hint_specs().len();
    let mut window = (0.0, vec![0.0; k], 0.0, 0usize, 0usize, 0usize);

    for step in 1..=settings.steps {
        model.store.zero_grads();
        let scale = F::from_f64_lossy(1.0 / settings.batch_size as f64);
        for _ in 0..settings.batch_size {
            if order.is_empty() {
                order = (0..train_graphs.len()).collect();
                order.shuffle(&mut rng);
            }
            let i = order.pop().unwrap();
            let g = &train_graphs[i];
            let inputs = if settings.randomize_pos {
                let mut pos: Vec<f64> = (0..g.n()).map(|_| rng.gen::<f64>()).collect();
                pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
                GraphInputs::with_positions(g, pos)
            } else {
                GraphInputs::new(g)
            };
            let (tape, loss, stats) =
                unroll_train(model, &inputs, &trajs[i], settings.teacher_forcing, &mut rng, false)?;
            if !stats.loss.is_finite() {
                return Err(CoreError::Diverged {
                    step,
                    detail: format!("loss {}", stats.loss),
                });
            }
            let grads = tape.backward(loss)?;
            model.store.accumulate(&tape, &grads, scale);
            window.0 += stats.loss;
            for (a, b) in window.1.iter_mut().zip(&stats.hint_losses) {
                *a += b;
            }
            window.2 += stats.accuracy;
            window.3 += stats.stack_op_correct;
            window.4 += stats.steps;
            window.5 += 1;
        }
        if let Some(c) = settings.grad_clip {
            clip_gradients(&mut model.store, c);
        }
        adam.step(&mut model.store).map_err(|e| CoreError::Diverged {
            step,
            detail: e.to_string(),
        })?;

        if step % settings.eval_every == 0 || step == settings.steps {
            let m = window.5.max(1) as f64;
            metrics.rows.push(MetricsRow {
                step,
                split: "train".into(),
                accuracy: window.2 / m,
                loss: window.0 / m,
                hint_losses: window.1.iter().map(|x| x / m).collect(),
                stack_op_accuracy: window.3 as f64 / window.4.max(1) as f64,
            });
            window = (0.0, vec![0.0; k], 0.0, 0, 0, 0);
            let rep = evaluate(model, validation)?;
            metrics.rows.push(MetricsRow {
                step,
                split: "validation".into(),
                accuracy: rep.accuracy,
                loss: rep.loss,
                hint_losses: rep.hint_losses.clone(),
                stack_op_accuracy: rep.stack_op_accuracy,
            });
            timing.push(TimingRow {
                step,
                wall_seconds: start.elapsed().as_secs_f64(),
                peak_rss_kb: peak_rss_kb(),
            });
            let improved = rep.accuracy > best.1 || (rep.accuracy == best.1 && rep.loss < best.2);
            if improved {
                best = (step, rep.accuracy, rep.loss);
                best_params = model.store.clone();
            }
            on_eval(model, &adam, step, rep.accuracy, improved)?;
        }
    }
    model.store.copy_values_from(&best_params);
    Ok(TrainReport {
        best_step: best.0,
        best_validation: best.1,
        metrics,
        timing,
        best_params,
        adam,
    })
}
