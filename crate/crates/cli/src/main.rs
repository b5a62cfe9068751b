use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use callstack_core::config::{config_from_file, desk_scale, preset, Config, PRESETS};
use callstack_core::experiment::{self, config_hash, SizeReport};
use callstack_core::graph::{Dataset, DatasetSpec};
use callstack_core::runner::mean_std;
use callstack_core::CoreError;
use clap::{Args, Parser, Subcommand};

const OUT_ENV: &str = "CALLSTACK_OUT_DIR";

#[derive(Parser)]
#[command(name = "callstack", version, about = "Train and evaluate stack-augmented GNNs on recursive DFS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory (manifest.json plus one file per split).
    GenData(GenDataArgs),
    /// Train one configuration and write config, metrics and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on test graphs of the given sizes.
    Eval(EvalArgs),
    /// Train and evaluate a list of presets, writing a summary CSV.
    Ablate(AblateArgs),
    /// List the preset names.
    Presets,
}

#[derive(Args)]
struct GenDataArgs {
    /// TOML dataset spec; defaults are used for missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Take the dataset spec of a preset instead.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Single-CPU sizes (train graphs of at most 16 nodes, test on 32).
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tree_fraction: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Single-CPU sizes and budget.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    teacher_forcing: Option<f64>,
    /// Dataset directory from `gen-data`; generated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// TOML experiment config (as written to `config.toml` by `train`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `config.toml` next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated node counts; defaults to the config's test sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Graphs per size.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write per-step inputs, predictions and targets of one graph per size as JSON.
    #[arg(long)]
    dump_trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated preset names; all presets when absent.
    #[arg(long, value_delimiter = ',')]
    presets: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Core(CoreError),
    Usage(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(CoreError::Mismatch(_)) => 3,
            CliError::Core(CoreError::Diverged { .. }) => 4,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(s) => f.write_str(s),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Explicit `--out`, else `$CALLSTACK_OUT_DIR/<name>`, else `runs/<name>`.
fn out_dir(explicit: Option<&PathBuf>, name: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(name),
        _ => PathBuf::from("runs").join(name),
    }
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(Dataset::load(dir)?)
}

fn apply_overrides(mut cfg: Config, o: &Overrides) -> CliResult<Config> {
    if o.desk {
        cfg = desk_scale(cfg);
    }
    if let Some(s) = o.steps {
        cfg.run.train_steps = s;
        cfg.run.eval_every = cfg.run.eval_every.min(s.max(1));
    }
    if let Some(s) = o.seed {
        cfg.run.seed = s;
    }
    if let Some(b) = o.batch_size {
        cfg.run.batch_size = b;
    }
    if let Some(lr) = o.lr {
        cfg.run.learning_rate = lr;
    }
    if let Some(tf) = o.teacher_forcing {
        cfg.run.teacher_forcing = tf;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The dataset from `--data` (whose spec replaces the config's) or a
/// freshly generated one.
fn dataset_for(cfg: &mut Config, data: Option<&PathBuf>) -> CliResult<Dataset> {
    match data {
        Some(dir) => {
            let ds = load_dataset(dir)?;
            cfg.dataset = ds.spec.clone();
            Ok(ds)
        }
        None => Ok(Dataset::generate(&cfg.dataset)?),
    }
}

fn size_json(tests: &[SizeReport]) -> serde_json::Value {
    serde_json::Value::Array(
        tests
            .iter()
            .map(|t| {
                serde_json::json!({
                    "nodes": t.nodes,
                    "out_of_distribution": t.out_of_distribution,
                    "graphs": t.report.graphs,
                    "accuracy": t.report.accuracy,
                    "accuracy_std": t.report.accuracy_std,
                    "stack_op_accuracy": t.report.stack_op_accuracy,
                })
            })
            .collect(),
    )
}

fn cmd_gen_data(a: &GenDataArgs) -> CliResult<()> {
    let mut spec = match (&a.spec, &a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            callstack_core::config::parse_toml::<DatasetSpec>(&text)?
        }
        (None, Some(name)) => preset(name)?.dataset,
        (None, None) => DatasetSpec::default(),
    };
    if a.desk {
        let mut cfg = preset(PRESETS[1])?;
        cfg.dataset = spec;
        spec = desk_scale(cfg).dataset;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(f) = a.tree_fraction {
        spec.tree_fraction = f;
    }
    let ds = Dataset::generate(&spec)?;
    let dir = out_dir(a.out.as_ref(), "data");
    ds.save(&dir)?;
    for entry in ds.manifest().splits {
        println!("{:<12} {:>6} graphs ({} trees)", entry.name, entry.count, entry.trees);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let base = match (&a.preset, &a.config) {
        (Some(name), _) => preset(name)?,
        (None, Some(path)) => config_from_file(path)?,
        (None, None) => return Err(CliError::Usage("pass --preset or --config".into())),
    };
    let mut cfg = apply_overrides(base, &a.overrides)?;
    let ds = dataset_for(&mut cfg, a.overrides.data.as_ref())?;
    let dir = out_dir(a.out.as_ref(), &cfg.name);
    let outcome = experiment::run(&cfg, &ds, Some(&dir), |l| eprintln!("{l}"))?;
    let summary = serde_json::json!({
        "name": cfg.name,
        "config_hash": config_hash(&cfg),
        "best_step": outcome.train.best_step,
        "best_validation": outcome.train.best_validation,
        "tests": size_json(&outcome.tests),
        "out": dir.display().to_string(),
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    if !a.checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let config_path = a.config.clone().unwrap_or_else(|| experiment::sibling_config(&a.checkpoint));
    if !config_path.is_file() {
        return Err(CliError::Usage(format!(
            "config {} does not exist; pass --config",
            config_path.display()
        )));
    }
    let mut cfg = config_from_file(&config_path)?;
    let data = a.data.as_ref().map(|d| load_dataset(d)).transpose()?;
    if let Some(c) = a.count {
        cfg.dataset.test_count = c;
    }
    let model = experiment::load_model(&cfg, &a.checkpoint)?;
    let sizes = if a.sizes.is_empty() {
        cfg.dataset.test_sizes.clone()
    } else {
        a.sizes.clone()
    };
    if sizes.contains(&0) {
        return Err(CliError::Usage("sizes must be positive".into()));
    }
    let tests = experiment::evaluate_sizes(&model, &cfg, data.as_ref(), &sizes)?;
    if let Some(path) = &a.dump_trajectory {
        let dump = experiment::dump_trajectories(&model, &cfg, data.as_ref(), &sizes)?;
        fs::write(path, serde_json::to_string_pretty(&dump)? + "\n")?;
    }
    let report = serde_json::json!({
        "name": cfg.name,
        "config_hash": config_hash(&cfg),
        "tests": size_json(&tests),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Row number, stack, hidden state, output collection, teacher forcing, value network.
fn preset_columns(cfg: &Config) -> String {
    let row = PRESETS.iter().position(|p| *p == cfg.name).map_or(String::new(), |i| (i + 1).to_string());
    format!(
        "{row},{},{:?},{},{},{},{:?}",
        cfg.name,
        cfg.model.stack_mode,
        cfg.model.processor.use_hidden_state,
        cfg.model.use_output_collection,
        cfg.run.teacher_forcing,
        cfg.model.value.kind,
    )
}

fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let names: Vec<String> = if a.presets.is_empty() {
        PRESETS.iter().map(|s| s.to_string()).collect()
    } else {
        a.presets.clone()
    };
    for n in &names {
        preset(n)?;
    }
    if a.seeds.is_empty() {
        return Err(CliError::Usage("--seeds is empty".into()));
    }
    let root = out_dir(a.out.as_ref(), "ablation");
    fs::create_dir_all(&root)?;
    let mut shared = None;
    let mut sizes = Vec::new();
    let mut rows = Vec::new();
    let mut runs = String::from("preset,seed,best_step,validation");
    for name in &names {
        let mut cfg = apply_overrides(preset(name)?, &a.overrides)?;
        if shared.is_none() {
            shared = Some(dataset_for(&mut cfg, a.overrides.data.as_ref())?);
            sizes = cfg.dataset.test_sizes.clone();
            for s in &sizes {
                runs.push_str(&format!(",test{s}"));
            }
            runs.push('\n');
        }
        let ds = shared.as_ref().unwrap();
        cfg.dataset = ds.spec.clone();
        let mut val = Vec::new();
        let mut test = vec![Vec::new(); sizes.len()];
        for &seed in &a.seeds {
            cfg.run.seed = seed;
            eprintln!("{name} seed {seed}");
            let out = experiment::run(&cfg, ds, Some(&root.join(format!("{name}-seed{seed}"))), |l| eprintln!("  {l}"))?;
            val.push(out.train.best_validation);
            runs.push_str(&format!("{name},{seed},{},{:.6}", out.train.best_step, out.train.best_validation));
            for (k, t) in out.tests.iter().enumerate() {
                test[k].push(t.report.accuracy);
                runs.push_str(&format!(",{:.6}", t.report.accuracy));
            }
            runs.push('\n');
        }
        let (vm, vs) = mean_std(&val);
        let mut row = format!("{},{},{vm:.6},{vs:.6}", preset_columns(&cfg), a.seeds.len());
        for t in &test {
            let (m, s) = mean_std(t);
            row.push_str(&format!(",{m:.6},{s:.6}"));
        }
        rows.push(row);
    }
    let mut csv = String::from(
        "row,preset,stack,hidden_state,output_collection,teacher_forcing,value,seeds,validation_mean,validation_std",
    );
    for s in &sizes {
        csv.push_str(&format!(",test{s}_mean,test{s}_std"));
    }
    csv.push('\n');
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    fs::write(root.join("ablation.csv"), &csv)?;
    fs::write(root.join("runs.csv"), &runs)?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
