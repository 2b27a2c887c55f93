//! Command-line front end: argument parsing, run configuration and the
//! subcommands that tie datasets, training and the interpretation tools together.

mod config;

pub use config::{DataSection, ModelSection, RunConfig};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::agent::{ActMode, AgentModel, MessageKind};
use crate::env::{Dataset, EnvConfig, LoadedDataset, SceneStyle};
use crate::error::{Error, Result};
use crate::interpret::{
    action_symbol_table, build_table, fit_linear_probe, fit_random_forest, intervene, load_traces, log_traces,
    message_stats, partition_analysis, save_traces, signaling_mi, symbol_scatter, write_traces, ForestOptions,
    Intervention, ProbeOptions, TraceRow,
};
use crate::train::{run_episodes, Checkpoint, Controller, EvalOptions, Trainer};

#[derive(Debug, Parser)]
#[command(name = "comon", version, about = "Oracle/navigator multi-object navigation: datasets, training, evaluation and message analysis")]
pub struct Cli {
    /// Master seed recorded in every artifact.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset split of scenes and episodes.
    Gen(GenArgs),
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Log per-step traces of a checkpoint.
    Trace(TraceArgs),
    /// Fit a linear probe on traces.
    Probe(ProbeArgs),
    /// Fit a random forest on traces.
    Forest(ForestArgs),
    /// Compare metrics with and without an evaluation-time intervention.
    Intervene(InterveneArgs),
    /// Action/symbol table, signaling estimate and scatter plots for one message.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    /// Episodes in total, spread over the scenes.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Goals per episode.
    #[arg(long)]
    pub m: Option<usize>,
    /// Goal categories.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// open, pillars or rooms.
    #[arg(long)]
    pub style: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Accept a checkpoint whose configuration digest differs.
    #[arg(long)]
    pub force: bool,
    /// Stop after this many updates in this invocation.
    #[arg(long)]
    pub max_updates: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset file.
    #[arg(long)]
    pub episodes: PathBuf,
    /// Use only the first m goals of every episode.
    #[arg(long)]
    pub mon: Option<usize>,
    /// Use only the first N episodes.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Sample actions instead of taking the most likely one.
    #[arg(long)]
    pub sample: bool,
    /// Accept a checkpoint whose configuration digest differs from --config.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RolloutArgs,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub run: RolloutArgs,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Comma-separated input columns.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Comma-separated input columns (ignored with --partition).
    #[arg(long, default_value = "rel")]
    pub input: String,
    #[arg(long, default_value = "sym2_ON")]
    pub target: String,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    /// Split two-goal episodes by the inferred category partition.
    #[arg(long)]
    pub partition: bool,
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    /// Checkpoint to evaluate; omit with --scripted.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Use the scripted oracle-following navigator instead of a model.
    #[arg(long)]
    pub scripted: bool,
    #[arg(long)]
    pub episodes: PathBuf,
    /// random-when-visible, random-always or wrong-goal.
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub mon: Option<usize>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Zero the channel parameters before running.
    #[arg(long)]
    pub zero_comm: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Symbol column to report on.
    #[arg(long, default_value = "sym2_ON")]
    pub message: String,
    /// Field of view drawn on the plots, degrees.
    #[arg(long, default_value_t = 90.0)]
    pub fov: f64,
}

/// Exit status for an error: 2 configuration, 3 data, 4 runtime.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 3,
        _ => 4,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli)
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let seed = cli.seed.or(config.as_ref().and_then(|c| c.seed)).unwrap_or(0);
    let ctx = Ctx { seed, seed_flag: cli.seed, config, out: cli.out.clone() };
    match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, &a.run),
        Command::Trace(a) => cmd_trace(&ctx, &a.run),
        Command::Probe(a) => cmd_probe(&ctx, a),
        Command::Forest(a) => cmd_forest(&ctx, a),
        Command::Intervene(a) => cmd_intervene(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

struct Ctx {
    seed: u64,
    /// `--seed` as given; training falls back to the config's seeds without it.
    seed_flag: Option<u64>,
    config: Option<RunConfig>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn require_out(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Config(format!("{what} needs --out")))
    }

    /// Writes `text` to `--out`, or to stdout without it.
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => write_file(p, text.as_bytes()),
            None => {
                let mut so = std::io::stdout().lock();
                so.write_all(text.as_bytes()).and_then(|_| so.write_all(b"\n")).map_err(|e| Error::io("<stdout>", e))
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

/// File name only, so artifacts do not depend on where a run lives.
fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn parse_style(s: &str) -> Result<SceneStyle> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase()))
        .map_err(|_| Error::Config(format!("unknown scene style `{s}` (open, pillars, rooms)")))
}

fn cmd_gen(ctx: &Ctx, a: &GenArgs) -> Result<()> {
    let out = ctx.require_out("gen")?;
    let mut env = ctx.config.as_ref().map(|c| c.env.clone()).unwrap_or_default();
    if let Some(m) = a.m {
        env.goals = m;
    }
    if let Some(k) = a.k {
        env.categories = k;
    }
    if let Some(w) = a.width {
        env.width = w;
    }
    if let Some(h) = a.height {
        env.height = h;
    }
    if let Some(s) = &a.style {
        env.style = parse_style(s)?;
    }
    let data = Dataset::generate_total(&env, ctx.seed, &a.split, a.scenes, a.episodes)?;
    data.save(out)?;
    log::info!("wrote {} scenes and {} episodes to {}", data.scenes.len(), data.episodes.len(), out.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    Dataset::load(path)?.materialize()
}

/// Keeps the header and rows whose leading update number is at most `last`.
fn trim_log(path: &Path, last: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|u| u.parse::<u64>().ok()).is_some_and(|u| u <= last);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_file(path, kept.as_bytes())
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = ctx.config.as_ref().ok_or_else(|| Error::Config("train needs --config".into()))?;
    let out = ctx.out.clone().or_else(|| cfg.out.clone()).ok_or_else(|| Error::Config("train needs --out or `out` in the config".into()))?;
    let train_path = cfg.data.train.as_ref().ok_or_else(|| Error::Config("data.train is not set".into()))?;
    let model_cfg = cfg.model_config()?;
    let ppo = cfg.ppo_config(ctx.seed_flag);
    let data = Arc::new(load_dataset(train_path)?);
    let val = cfg.data.val.as_deref().map(load_dataset).transpose()?;

    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.check_config(&cfg.env, &model_cfg, a.force)?;
            let t = Trainer::from_checkpoint(&ckpt, data)?;
            trim_log(&out.join("metrics.csv"), t.updates)?;
            trim_log(&out.join("eval.csv"), t.updates)?;
            t
        }
        None => Trainer::new(&cfg.env, &model_cfg, &ppo, data)?,
    };
    let resolved = RunConfig { seed: Some(trainer.ppo.seed), out: None, ppo: trainer.ppo.clone(), ..cfg.clone() };
    write_file(&out.join("run.json"), serde_json::to_string_pretty(&resolved)?.as_bytes())?;
    trainer.run(Some(&out), val.as_ref(), a.max_updates)?;

    if let Some(val) = &val {
        let n = trainer.ppo.eval_episodes.min(val.episodes.len());
        let idx: Vec<usize> = (0..n).collect();
        let opts = EvalOptions { seed: trainer.ppo.seed, message_stats: trainer.message_stats.clone(), ..EvalOptions::default() };
        let report = run_episodes(Controller::Model { model: &trainer.model, store: &trainer.store }, &trainer.env, val, &idx, &opts)?;
        let v = json!({
            "seed": trainer.ppo.seed,
            "updates": trainer.updates,
            "env_steps": trainer.env_steps,
            "variant": trainer.model.variant().name(),
            "success": report.aggregate.success,
            "progress": report.aggregate.progress,
            "spl": report.aggregate.spl,
            "ppl": report.aggregate.ppl,
        });
        write_file(&out.join("final_eval.json"), to_json(&v)?.as_bytes())?;
    }
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    model: AgentModel,
    store: crate::tensor::ParamStore,
}

fn load_checkpoint(ctx: &Ctx, path: &Path, force: bool) -> Result<Loaded> {
    let ckpt = Checkpoint::load(path)?;
    if let Some(cfg) = &ctx.config {
        ckpt.check_config(&cfg.env, &cfg.model_config()?, force)?;
    }
    let (model, store) = ckpt.model()?;
    Ok(Loaded { ckpt, model, store })
}

fn indices(data: &LoadedDataset, limit: Option<usize>) -> Vec<usize> {
    (0..limit.map_or(data.episodes.len(), |l| l.min(data.episodes.len()))).collect()
}

fn rollout_options(ctx: &Ctx, a: &RolloutArgs, ckpt: &Checkpoint) -> EvalOptions {
    EvalOptions {
        mode: if a.sample { ActMode::Sample } else { ActMode::Argmax },
        seed: ctx.seed,
        goals: a.mon,
        message_stats: ckpt.header.message_stats.clone(),
        ..EvalOptions::default()
    }
}

fn cmd_eval(ctx: &Ctx, a: &RolloutArgs) -> Result<()> {
    let l = load_checkpoint(ctx, &a.ckpt, a.force)?;
    let data = load_dataset(&a.episodes)?;
    let idx = indices(&data, a.limit);
    let opts = rollout_options(ctx, a, &l.ckpt);
    let env = &l.ckpt.header.env;
    let report = run_episodes(Controller::Model { model: &l.model, store: &l.store }, env, &data, &idx, &opts)?;
    let mon = a.mon.unwrap_or_else(|| data.episodes.first().map_or(0, |(_, s)| s.goals.len()));
    let m = &report.aggregate;
    let v = json!({
        "command": "eval",
        "seed": ctx.seed,
        "checkpoint": file_name(&a.ckpt),
        "dataset": file_name(&a.episodes),
        "variant": l.model.variant().name(),
        "updates": l.ckpt.header.updates,
        "mon": mon,
        "mode": if a.sample { "sample" } else { "argmax" },
        "num_episodes": report.episodes.len(),
        "success": m.success,
        "progress": m.progress,
        "spl": m.spl,
        "ppl": m.ppl,
        "aggregate": m,
        "episodes": report.episodes,
    });
    ctx.emit(&to_json(&v)?)
}

fn cmd_trace(ctx: &Ctx, a: &RolloutArgs) -> Result<()> {
    let l = load_checkpoint(ctx, &a.ckpt, a.force)?;
    let data = load_dataset(&a.episodes)?;
    let idx = indices(&data, a.limit);
    let opts = rollout_options(ctx, a, &l.ckpt);
    let rows = log_traces(Controller::Model { model: &l.model, store: &l.store }, &l.ckpt.header.env, &data, &idx, &opts)?;
    match &ctx.out {
        Some(path) => {
            save_traces(&rows, path)?;
            let meta = json!({
                "command": "trace",
                "seed": ctx.seed,
                "checkpoint": file_name(&a.ckpt),
                "dataset": file_name(&a.episodes),
                "variant": l.model.variant().name(),
                "episodes": idx.len(),
                "rows": rows.len(),
            });
            let mut meta_path = path.clone().into_os_string();
            meta_path.push(".meta.json");
            write_file(Path::new(&meta_path), to_json(&meta)?.as_bytes())
        }
        None => write_traces(&rows, std::io::stdout().lock()),
    }
}

fn traces(path: &Path) -> Result<Vec<TraceRow>> {
    let rows = load_traces(path)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} holds no trace rows", path.display())));
    }
    Ok(rows)
}

fn cmd_probe(ctx: &Ctx, a: &ProbeArgs) -> Result<()> {
    let rows = traces(&a.traces)?;
    let table = build_table(&rows, &a.input, &a.target)?;
    let opts = ProbeOptions { seed: ctx.seed, iterations: a.iterations, lr: a.lr };
    let report = fit_linear_probe(&table, &a.input, &a.target, &opts)?;
    let mut v = serde_json::to_value(&report)?;
    v["command"] = json!("probe");
    v["traces"] = json!(file_name(&a.traces));
    ctx.emit(&to_json(&v)?)
}

fn cmd_forest(ctx: &Ctx, a: &ForestArgs) -> Result<()> {
    let rows = traces(&a.traces)?;
    let opts = ForestOptions { trees: a.trees, max_depth: a.max_depth, seed: ctx.seed };
    let mut v = if a.partition {
        let report = partition_analysis(&rows, &opts)?;
        json!({ "seed": ctx.seed, "partition_analysis": report })
    } else {
        let table = build_table(&rows, &a.input, &a.target)?;
        serde_json::to_value(fit_random_forest(&table, &a.input, &a.target, &opts)?)?
    };
    v["command"] = json!("forest");
    v["traces"] = json!(file_name(&a.traces));
    ctx.emit(&to_json(&v)?)
}

fn cmd_intervene(ctx: &Ctx, a: &InterveneArgs) -> Result<()> {
    let mode = Intervention::parse(&a.mode)?;
    if mode == Intervention::None {
        return Err(Error::Config("--mode must name an intervention".into()));
    }
    let data = load_dataset(&a.episodes)?;
    let idx = indices(&data, a.limit);
    let mut opts = EvalOptions { seed: ctx.seed, goals: a.mon, ..EvalOptions::default() };
    let (report, variant) = if a.scripted {
        let env = ctx.config.as_ref().map(|c| c.env.clone()).unwrap_or_else(|| scripted_env(&data));
        (intervene(Controller::Scripted, &env, &data, &idx, mode, &opts)?, "SCRIPTED".to_string())
    } else {
        let path = a.ckpt.as_ref().ok_or_else(|| Error::Config("intervene needs --ckpt or --scripted".into()))?;
        let mut l = load_checkpoint(ctx, path, a.force)?;
        if a.zero_comm {
            AgentModel::zero_comm(&mut l.store)?;
        }
        let env = l.ckpt.header.env.clone();
        opts.message_stats = l.ckpt.header.message_stats.clone();
        let ctrl = Controller::Model { model: &l.model, store: &l.store };
        if opts.message_stats.is_none() && l.model.variant().message_kind() == Some(MessageKind::UComm) {
            // random U-Comm payloads follow the statistics of the model's own messages
            let rows = log_traces(ctrl, &env, &data, &idx, &opts)?;
            opts.message_stats = Some(message_stats(&rows)?);
        }
        (intervene(ctrl, &env, &data, &idx, mode, &opts)?, l.model.variant().name().to_string())
    };
    let mut v = serde_json::to_value(&report)?;
    v["command"] = json!("intervene");
    v["variant"] = json!(variant);
    v["dataset"] = json!(file_name(&a.episodes));
    ctx.emit(&to_json(&v)?)
}

/// Environment settings for a scripted run without a config: defaults with
/// enough categories for the dataset.
fn scripted_env(data: &LoadedDataset) -> EnvConfig {
    let k = data.episodes.iter().flat_map(|(_, s)| s.goals.iter().map(|g| g.category as usize + 1)).max().unwrap_or(1);
    let env = EnvConfig::default();
    EnvConfig { categories: k.max(env.categories), ..env }
}

fn cmd_report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let out = ctx.require_out("report")?;
    let rows = traces(&a.traces)?;
    let plots = symbol_scatter(&rows, &a.message, a.fov)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    for (sym, svg) in &plots {
        let name = format!("{}_{sym}.svg", a.message);
        write_file(&out.join(&name), svg.as_bytes())?;
        files.push(name);
    }
    let table = action_symbol_table(&rows, &a.message)?;
    let v = json!({
        "command": "report",
        "seed": ctx.seed,
        "traces": file_name(&a.traces),
        "message": a.message,
        "rows": rows.len(),
        "signaling_mi_nats": signaling_mi(&rows, &a.message)?,
        "action_symbol_table": table,
        "plots": files,
    });
    write_file(&out.join("report.json"), to_json(&v)?.as_bytes())
}
