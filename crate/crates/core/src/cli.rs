//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    arrow_grid, arrows_csv, clouds_csv, coverage_json, mode_coverage, sample_clouds, score_field, score_field_csv,
    write_text, ModeCoverage, CLOUD_TIMES, DEFAULT_RADIUS,
};
use crate::envs::{GaussianMixture, RewardPerturbation};
use crate::error::{Error, Result};
use crate::meanflow::{sample_one_step, standard_normal};
use crate::net::{Checkpoint, MeanFlowPolicy};
use crate::schedules::SdeConfig;
use crate::score::ScoreConfig;
use crate::trainer::{evaluate_return, train, Config, MetricRecord, TrainOutput};

/// Caps worker threads for `--runs` fan-out and the robustness sweep.
pub const THREADS_ENV: &str = "SOMFLOW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "somflow", version, about = "Train and inspect one-step MeanFlow policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write config.resolved.toml, metrics.jsonl and checkpoint.json.
    Train(TrainArgs),
    /// Report coverage (bandit) or mean return (MDP) of a checkpoint.
    Eval(EvalArgs),
    /// Export the one-step arrow grid and its mode coverage.
    Arrows(ArrowArgs),
    /// Compare estimated and exact mixture scores on a grid.
    ScoreField(ScoreFieldArgs),
    /// Train under clean and noisy rewards and compare coverage.
    Robustness(RobustnessArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set score.w=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Independent runs with seeds `seed, seed+1, …` into `out/run-<i>`.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to config.resolved.toml beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
}

#[derive(Debug, Args)]
pub struct ArrowArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub grid: usize,
    #[arg(long, default_value_t = 2.0)]
    pub extent: f64,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreFieldArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long, default_value_t = 10_000)]
    pub k: usize,
    #[arg(long, default_value_t = 9)]
    pub grid: usize,
    #[arg(long, default_value_t = 2.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Reward-noise levels to compare against the clean run.
    #[arg(long = "sigma", default_values_t = [0.2, 0.3])]
    pub sigmas: Vec<f64>,
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingAborted(_) => 3,
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Arrows(a) => cmd_arrows(a),
        Command::ScoreField(a) => cmd_score_field(a),
        Command::Robustness(a) => cmd_robustness(a),
        Command::Selftest => Ok(if crate::selftest::run_all(&mut std::io::stdout()) { 0 } else { 1 }),
    }
}

/// Config from file (or defaults) with `--set` and `--steps` applied.
pub fn resolve_config(args: &ConfigArgs) -> Result<Config> {
    let base = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut value: toml::Table = toml::from_str(&base).map_err(|e| Error::Config(e.to_string()))?;
    for o in &args.overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg = Config::from_toml_str(&toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))?)?;
    if let Some(s) = args.steps {
        cfg.train.total_steps = s;
        cfg.train.warmup_steps = cfg.train.warmup_steps.min(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let parsed: toml::Table = toml::from_str(&format!("v = {raw}"))
        .or_else(|_| toml::from_str(&format!("v = {:?}", raw)))
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let val = parsed["v"].clone();
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), val);
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Write the standard artifacts of a finished run into `dir`.
pub fn write_run(dir: &Path, cfg: &Config, out: &TrainOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_text(&dir.join("config.resolved.toml"), &cfg.to_toml_string()?)?;
    write_text(&dir.join("metrics.jsonl"), &metrics_jsonl(&out.metrics)?)?;
    Checkpoint::from_net(&out.policy.net, Some(&out.policy_opt)).save(&dir.join("checkpoint.json"))?;
    Ok(())
}

pub fn metrics_jsonl(metrics: &[MetricRecord]) -> Result<String> {
    let mut s = String::new();
    for m in metrics {
        s.push_str(&serde_json::to_string(m)?);
        s.push('\n');
    }
    Ok(s)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let base = resolve_config(&a.cfg)?;
    if a.runs <= 1 {
        let mut cfg = base;
        cfg.train.seed = a.seed;
        let out = train(cfg.clone())?;
        write_run(&a.out, &cfg, &out)?;
        print_summary(&a.out, &out);
        return Ok(0);
    }
    let pool = thread_pool()?;
    let results: Vec<Result<()>> = pool.install(|| {
        (0..a.runs)
            .into_par_iter()
            .map(|i| {
                let mut cfg = base.clone();
                cfg.train.seed = a.seed + i as u64;
                let dir = a.out.join(format!("run-{i}"));
                let out = train(cfg.clone())?;
                write_run(&dir, &cfg, &out)?;
                print_summary(&dir, &out);
                Ok(())
            })
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(0)
}

fn print_summary(dir: &Path, out: &TrainOutput) {
    if let Some(m) = out.metrics.last() {
        println!("{}: {}", dir.display(), serde_json::to_string(m).unwrap_or_default());
    }
}

fn load_policy(path: &Path) -> Result<MeanFlowPolicy> {
    if !path.exists() {
        return Err(Error::Checkpoint(format!("{} does not exist", path.display())));
    }
    MeanFlowPolicy::from_net(Checkpoint::load(path)?.to_net()?)
}

fn sibling_config(checkpoint: &Path, explicit: Option<&PathBuf>) -> Result<Config> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join("config.resolved.toml"),
    };
    if path.exists() {
        Config::load(&path)
    } else {
        Ok(Config::default())
    }
}

#[derive(Serialize)]
struct EvalReport {
    coverage: Option<ModeCoverage>,
    #[serde(rename = "return")]
    episode_return: Option<f64>,
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let policy = load_policy(&a.checkpoint)?;
    let cfg = sibling_config(&a.checkpoint, a.config.as_ref())?;
    let report = if policy.state_dim() == 0 {
        let grid = arrow_grid(&policy, &[], 7, 2.0)?;
        EvalReport { coverage: Some(mode_coverage(&grid.endpoints(), DEFAULT_RADIUS)), episode_return: None }
    } else {
        let clip = cfg.meanflow.clip_actions.then_some(1.0);
        let r = evaluate_return(&cfg.env.pointmass, a.episodes, cfg.train.seed, |s, rng| sample_one_step(&policy, s, clip, rng))?;
        EvalReport { coverage: None, episode_return: Some(r) }
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(0)
}

fn cmd_arrows(a: ArrowArgs) -> Result<i32> {
    let policy = load_policy(&a.checkpoint)?;
    let state = vec![0.0; policy.state_dim()];
    let grid = arrow_grid(&policy, &state, a.grid, a.extent)?;
    let dir = a.out.clone().unwrap_or_else(|| a.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)?;
    write_text(&dir.join("arrows.csv"), &arrows_csv(&grid))?;
    let cov = mode_coverage(&grid.endpoints(), DEFAULT_RADIUS);
    write_text(&dir.join("coverage.json"), &coverage_json(&cov, DEFAULT_RADIUS)?)?;
    println!("{}", serde_json::to_string(&cov)?);
    Ok(0)
}

fn cmd_score_field(a: ScoreFieldArgs) -> Result<i32> {
    let cfg = resolve_config(&a.cfg)?;
    let sde: &SdeConfig = &cfg.sde;
    let schedule = sde.schedule()?;
    let score = ScoreConfig { k_samples: a.k, q_norm: false, ..cfg.score.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let field = score_field(&GaussianMixture::eight_gaussian(), &schedule, &score, a.grid, a.extent, a.t, &mut rng)?;
    std::fs::create_dir_all(&a.out)?;
    write_text(&a.out.join("score_field.csv"), &score_field_csv(&field))?;
    let mean_cos = field.iter().map(|p| p.cosine).sum::<f64>() / field.len() as f64;
    println!("{{\"mean_cosine\":{mean_cos}}}");
    Ok(0)
}

#[derive(Serialize)]
struct RobustnessRow {
    perturbation: RewardPerturbation,
    coverage: ModeCoverage,
}

fn cmd_robustness(a: RobustnessArgs) -> Result<i32> {
    let mut base = resolve_config(&a.cfg)?;
    base.train.seed = a.seed;
    let mut perturbations = vec![RewardPerturbation::None];
    perturbations.extend(a.sigmas.iter().map(|&sigma| RewardPerturbation::GaussianNoise { sigma }));
    let pool = thread_pool()?;
    let outs: Vec<Result<(RewardPerturbation, TrainOutput)>> = pool.install(|| {
        perturbations
            .par_iter()
            .map(|p| {
                let mut cfg = base.clone();
                cfg.env.perturb = p.clone();
                cfg.validate()?;
                Ok((p.clone(), train(cfg)?))
            })
            .collect()
    });
    std::fs::create_dir_all(&a.out)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(a.seed);
    let a1: Array2<f64> = standard_normal(1000, 2, &mut noise_rng);
    let mut rows = Vec::new();
    for (i, o) in outs.into_iter().enumerate() {
        let (p, out) = o?;
        let grid = arrow_grid(&out.policy, &[], 7, 2.0)?;
        let coverage = mode_coverage(&grid.endpoints(), DEFAULT_RADIUS);
        let clouds = sample_clouds(&out.policy, &[], a1.view(), &CLOUD_TIMES)?;
        write_text(&a.out.join(format!("clouds_{i}.csv")), &clouds_csv(&clouds))?;
        rows.push(RobustnessRow { perturbation: p, coverage });
    }
    let json = serde_json::to_string_pretty(&rows)? + "\n";
    write_text(&a.out.join("robustness.json"), &json)?;
    print!("{json}");
    Ok(0)
}
