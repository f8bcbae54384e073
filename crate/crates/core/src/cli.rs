//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 configuration or usage
//! error, 3 I/O or file-format error, 4 numeric divergence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::bandit::{build_dataset, dataset_bytes, load_dataset, GenConfig};
use crate::config::RunConfig;
use crate::diagnostics::{loss_checks, primitive_checks};
use crate::error::{Error, Result};
use crate::eval::{load_report, run_sweep, save_report, ActionMode, Agent};
use crate::figures;
use crate::models::load_checkpoint;
use crate::training::{
    train, Algorithm, ContextMode, PredictorMode, POLICY_CHECKPOINT, PREDICTOR_CHECKPOINT,
};

pub const RESOLVED_CONFIG: &str = "config.json";
pub const TRAIN_SUMMARY: &str = "train_summary.json";

#[derive(Parser, Debug)]
#[command(name = "ppt-lab", version, about = "Pretrained transformers for in-context bandit learning")]
pub struct Cli {
    /// Worker threads (1 guarantees bit-reproducible runs).
    #[arg(long, global = true, env = "PPT_LAB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an offline pretraining dataset.
    GenData(GenDataArgs),
    /// Pretrain a policy (and predictor) on a dataset.
    Train(TrainArgs),
    /// Deploy trained models and baselines on a test-variance sweep.
    Eval(EvalArgs),
    /// Render figures and a summary table from evaluation reports.
    Report(ReportArgs),
    /// Print the fully resolved configuration.
    PrintConfig(ConfigArgs),
    /// Run finite-difference gradient checks.
    GradCheck,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Run configuration JSON; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset preset (ideal or tricky).
    #[arg(long)]
    pub preset: Option<String>,
    /// Seed for data generation, training and evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Number of episodes (one environment each).
    #[arg(long)]
    pub num_envs: Option<usize>,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AlgoArg {
    Dpt,
    Ppt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ContextArg {
    GroundTruth,
    Proxy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Sample,
    Greedy,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints and logs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub algo: Option<AlgoArg>,
    /// Curiosity weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Predictor target: true arm means or the per-trajectory estimate.
    #[arg(long, value_enum)]
    pub context: Option<ContextArg>,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Pretrained predictor checkpoint; it is kept frozen during training.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// `NAME=DIR` where DIR holds a trained policy (and predictor).
    #[arg(long = "model", value_name = "NAME=DIR")]
    pub models: Vec<String>,
    /// Comma-separated test variances.
    #[arg(long, value_delimiter = ',')]
    pub sigma2: Option<Vec<f64>>,
    /// Test environments per variance.
    #[arg(long)]
    pub num_envs: Option<usize>,
    /// Steps per rollout; defaults to the training horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Sample actions from the policy or take the most likely one.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Skip the UCB and uniform-random baselines.
    #[arg(long)]
    pub no_baselines: bool,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Evaluation report directory, optionally as `LABEL=DIR`.
    #[arg(long = "input", value_name = "[LABEL=]DIR", required = true)]
    pub inputs: Vec<String>,
    /// Directory for figures and the summary table.
    #[arg(long)]
    pub out: PathBuf,
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &args.preset {
        cfg.data = GenConfig::from_preset(name, cfg.data.num_envs, cfg.data.seed)?;
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if let Some(n) = args.num_envs {
        cfg.data.num_envs = n;
    }
    cfg.data.validate()?;
    let ds = build_dataset(&cfg.data)?;
    let bytes = dataset_bytes(&ds)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(&args.out, &bytes).map_err(|e| Error::io(&args.out, e))?;
    let g = &ds.gen_config;
    println!(
        "dataset {}: preset={} N={} K={} n={} expert_weight={} sigma2={} seed={} sha256={}",
        args.out.display(),
        g.preset,
        ds.len(),
        ds.num_arms(),
        ds.horizon(),
        g.expert_weight,
        serde_json::to_string(&g.sigma2).expect("serializes"),
        g.seed,
        hex::encode(Sha256::digest(&bytes))
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    let t = &mut cfg.train;
    if let Some(a) = args.algo {
        t.algorithm = match a {
            AlgoArg::Dpt => Algorithm::Dpt,
            AlgoArg::Ppt => Algorithm::Ppt,
        };
    }
    if let Some(l) = args.lambda {
        t.lambda = l;
    }
    if let Some(c) = args.context {
        t.context_mode = match c {
            ContextArg::GroundTruth => ContextMode::GroundTruth,
            ContextArg::Proxy => ContextMode::Proxy,
        };
    }
    if let Some(s) = args.steps {
        t.steps = s;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    let frozen = match &args.predictor {
        Some(p) => {
            t.predictor_mode = PredictorMode::PretrainedFrozen;
            Some(load_checkpoint(p)?)
        }
        None => None,
    };
    let dataset = load_dataset(&args.data)?;
    cfg.data = dataset.gen_config.clone();
    cfg.validate()?;
    create_dir(&args.out)?;
    cfg.save(args.out.join(RESOLVED_CONFIG))?;
    let label = cfg.train.label();
    let outcome = train(
        &dataset,
        &cfg.policy_model,
        &cfg.predictor_model,
        &cfg.train,
        frozen,
        Some(&args.out),
    )?;
    let summary = serde_json::json!({
        "label": label,
        "dataset_sha256": sha256_file(&args.data)?,
        "steps": outcome.log.rows.len(),
        "epoch_policy_loss": outcome.log.epoch_policy_loss,
        "epoch_predictor_loss": outcome.log.epoch_predictor_loss,
        "converged_at_epoch": outcome.log.converged_at_epoch,
    });
    let path = args.out.join(TRAIN_SUMMARY);
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("serializes") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    let last = outcome.log.rows.last();
    println!(
        "trained {label} for {} steps: nll={} curiosity={} predictor_loss={} -> {}",
        outcome.log.rows.len(),
        last.map_or(f64::NAN, |r| r.nll_term),
        last.map_or(f64::NAN, |r| r.curiosity_term),
        last.and_then(|r| r.predictor_loss).map_or("n/a".into(), |v| v.to_string()),
        args.out.display()
    );
    Ok(())
}

fn parse_pair(arg: &str) -> Result<(String, PathBuf)> {
    let (name, dir) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected NAME=DIR, got {arg:?}")))?;
    Ok((name.to_string(), PathBuf::from(dir)))
}

fn load_agent(name: String, dir: &Path) -> Result<Agent> {
    let policy = load_checkpoint(dir.join(POLICY_CHECKPOINT))?;
    let predictor = if policy.config().prediction_features {
        Some(load_checkpoint(dir.join(PREDICTOR_CHECKPOINT))?)
    } else {
        None
    };
    Ok(Agent::Learned {
        name,
        policy,
        predictor,
    })
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    let sweep = &mut cfg.eval;
    if let Some(s) = &args.sigma2 {
        sweep.sigma2 = s.clone();
    }
    if let Some(n) = args.num_envs {
        sweep.num_envs = n;
    }
    if args.horizon.is_some() {
        sweep.horizon = args.horizon;
    }
    if let Some(m) = args.mode {
        sweep.mode = match m {
            ModeArg::Sample => ActionMode::Sample,
            ModeArg::Greedy => ActionMode::Greedy,
        };
    }
    sweep.validate()?;
    let mut agents = Vec::new();
    let mut inputs = BTreeMap::new();
    for arg in &args.models {
        let (name, dir) = parse_pair(arg)?;
        inputs.insert(name.clone(), dir.display().to_string());
        agents.push(load_agent(name, &dir)?);
    }
    if !args.no_baselines {
        agents.push(Agent::Ucb { beta: sweep.ucb_beta });
        agents.push(Agent::Random);
    }
    let mut report = run_sweep(&agents, sweep)?;
    report.manifest.inputs = inputs;
    save_report(&report, &args.out)?;
    cfg.eval = report.manifest.sweep.clone();
    cfg.save(args.out.join(RESOLVED_CONFIG))?;
    for cell in &report.cells {
        println!(
            "{:<16} sigma2={:<5} final avg regret {:.4}",
            cell.algorithm,
            cell.sigma2,
            cell.final_regret()
        );
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for (i, arg) in args.inputs.iter().enumerate() {
        let (label, dir) = match arg.split_once('=') {
            Some((l, d)) => (l.to_string(), PathBuf::from(d)),
            None => (format!("report{}", i + 1), PathBuf::from(arg)),
        };
        reports.push((label, load_report(&dir)?));
    }
    let written = figures::render(&reports, &args.out)?;
    print!("{}", figures::summary_table(&reports)?);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn grad_check_cmd() -> Result<bool> {
    let mut ok = true;
    let checks = primitive_checks(0)?.into_iter().chain(loss_checks(0, 200.0)?);
    for c in checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        ok &= c.passed();
        println!(
            "{verdict} {:<28} max relative error {:.3e} (tolerance {:.0e})",
            c.name, c.max_rel_error, c.tolerance
        );
    }
    Ok(ok)
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return 2;
        }
    }
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Report(a) => report_cmd(a).map(|_| true),
        Command::PrintConfig(a) => resolve(a).map(|cfg| {
            print!("{}", cfg.to_canonical_json());
            true
        }),
        Command::GradCheck => grad_check_cmd(),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(Cli::parse())
}
