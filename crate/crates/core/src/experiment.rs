//! End-to-end runs: dataset, training, checkpoints and test evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use callstack_tensor::checkpoint::peek_config_hash;
use callstack_tensor::Checkpoint;
use serde::Serialize;

use crate::config::Config;
use crate::error::{invalid, CoreError, Result};
use crate::graph::{gen_split, Dataset, Split};
use crate::model::Model;
use crate::runner::{evaluate, prepare, timing_csv, train, unroll_eval, EvalReport, StepRecord, TrainReport};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &Config) -> String {
    hex(&cfg.model_hash())
}

/// Accuracy on one test size.
#[derive(Clone, Debug, Serialize)]
pub struct SizeReport {
    pub nodes: usize,
    /// Whether `nodes` exceeds every training size.
    pub out_of_distribution: bool,
    pub report: EvalReport,
}

pub struct RunOutcome {
    pub model: Model<f32>,
    pub train: TrainReport<f32>,
    pub tests: Vec<SizeReport>,
}

/// Test graphs of `nodes` nodes: taken from `data` when it holds that split,
/// otherwise generated from the configuration's dataset spec.
pub fn test_graphs(cfg: &Config, data: Option<&Dataset>, nodes: usize) -> Result<Vec<crate::graph::Graph>> {
    if let Some(g) = data.and_then(|d| d.split(Split::Test(nodes))) {
        return Ok(g.to_vec());
    }
    gen_split(&cfg.dataset, Split::Test(nodes), cfg.dataset.test_count)
}

pub fn evaluate_sizes(model: &Model<f32>, cfg: &Config, data: Option<&Dataset>, sizes: &[usize]) -> Result<Vec<SizeReport>> {
    let max_train = cfg.dataset.sizes.iter().copied().max().unwrap_or(0);
    sizes
        .iter()
        .map(|&nodes| {
            let graphs = test_graphs(cfg, data, nodes)?;
            let report = evaluate(model, &prepare(&graphs, cfg.model.scheme))?;
            Ok(SizeReport {
                nodes,
                out_of_distribution: nodes > max_train,
                report,
            })
        })
        .collect()
}

/// Trains `cfg` on `data` and evaluates the best parameters on every test
/// size of the dataset spec. With `out`, writes the config, metrics,
/// timing and the best checkpoint into that directory. `progress` receives
/// one line per validation point.
pub fn run(cfg: &Config, data: &Dataset, out: Option<&Path>, mut progress: impl FnMut(&str)) -> Result<RunOutcome> {
    cfg.validate()?;
    let train_graphs = data
        .split(Split::Train)
        .ok_or_else(|| CoreError::InvalidInput("dataset has no train split".into()))?;
    let validation = prepare(
        data.split(Split::Validation)
            .ok_or_else(|| CoreError::InvalidInput("dataset has no validation split".into()))?,
        cfg.model.scheme,
    );
    let hash = config_hash(cfg);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    let mut model = Model::<f32>::new(&cfg.model, cfg.run.seed)?;
    let start = std::time::Instant::now();
    let report = train(&mut model, train_graphs, &validation, &cfg.run.settings(), |m, adam, step, acc, improved| {
        progress(&format!(
            "{} step {step}/{} validation {acc:.4}{} ({:.0}s)",
            cfg.name,
            cfg.run.train_steps,
            if improved { " *" } else { "" },
            start.elapsed().as_secs_f64()
        ));
        if let (Some(dir), true) = (out, improved) {
            Checkpoint::from_store(&hash, &m.store, Some(adam)).save(&dir.join("best.ckpt"))?;
        }
        Ok(())
    })?;
    let tests = evaluate_sizes(&model, cfg, Some(data), &cfg.dataset.test_sizes)?;
    if let Some(dir) = out {
        fs::write(dir.join("metrics.csv"), report.metrics.to_csv())?;
        fs::write(dir.join("timing.csv"), timing_csv(&report.timing))?;
    }
    Ok(RunOutcome {
        model,
        train: report,
        tests,
    })
}

/// Loads a checkpoint for `cfg`, refusing one written for a different model.
pub fn load_model(cfg: &Config, checkpoint: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(checkpoint)?;
    let saved = peek_config_hash(&bytes)?;
    let expected = config_hash(cfg);
    if saved != expected {
        return Err(CoreError::Mismatch(format!(
            "checkpoint {} was written for config hash {saved}, this config hashes to {expected}",
            checkpoint.display()
        )));
    }
    let ckpt = Checkpoint::<f32>::from_bytes(&bytes)?;
    let mut model = Model::new(&cfg.model, cfg.run.seed)?;
    ckpt.load_into(&mut model.store)
        .map_err(|e| CoreError::Mismatch(e.to_string()))?;
    Ok(model)
}

/// `config.toml` next to a checkpoint.
pub fn sibling_config(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("config.toml")
}

/// Per-step record of one evaluation unroll.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryDump {
    pub nodes: usize,
    pub graph: usize,
    pub truth_pi: Vec<usize>,
    pub predicted_pi: Vec<usize>,
    pub accuracy: f64,
    pub steps: Vec<StepRecord>,
}

pub fn dump_trajectories(model: &Model<f32>, cfg: &Config, data: Option<&Dataset>, sizes: &[usize]) -> Result<Vec<TrajectoryDump>> {
    let mut out = Vec::new();
    for &nodes in sizes {
        let graphs = test_graphs(cfg, data, nodes)?;
        let Some(g) = graphs.first() else {
            return invalid(format!("no test graphs of {nodes} nodes"));
        };
        let prepared = prepare(std::slice::from_ref(g), cfg.model.scheme);
        let (inputs, traj) = &prepared[0];
        let s = unroll_eval(model, inputs, traj, true)?;
        out.push(TrajectoryDump {
            nodes,
            graph: 0,
            truth_pi: traj.pi.clone(),
            predicted_pi: s.predicted_pi,
            accuracy: s.accuracy,
            steps: s.trace,
        });
    }
    Ok(out)
}
