//! Command-line front end: train, eval, crossplay, prop1 and export.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, EvalOptions, EvalReport, PolicySet};
use crate::baselines::{BaselineAlgo, BaselineTrainer, BASELINE_FILE};
use crate::error::Error;
use crate::par::Exec;
use crate::policy::AgentPolicy;
use crate::trainer::{metrics_header, MetricsRow, TrainerState, BUNDLE_FILE};
use crate::world::{Scenario, ScenarioKind, TrajectoryRecord};
use config::{read_run_file, Algo, Overrides, RunConfig, RunFile, OUT_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// A failed command: configuration problems exit with 2, everything else with 3.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "mplab", version, about = "Multi-agent particle-world laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one run per seed and write metrics, checkpoints and reports.
    Train(TrainArgs),
    /// Evaluate checkpoints with noise-free rollouts.
    Eval(EvalArgs),
    /// Cross-play agent-side checkpoints against adversary-side checkpoints.
    Crossplay(CrossplayArgs),
    /// Exact and Monte-Carlo policy-gradient direction probabilities.
    Prop1(Prop1Args),
    /// Export rollout trajectories as JSON lines.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML configuration document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    /// One algorithm for all agents or a comma-separated list per agent.
    #[arg(long, value_delimiter = ',')]
    pub algo: Vec<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Seed list, comma separated.
    #[arg(long = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Use seeds 0..N.
    #[arg(long)]
    pub num_seeds: Option<usize>,
    #[arg(long)]
    pub name: Option<String>,
    /// Output root (overrides MPLAB_OUT and the document).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub prey_speed_factor: Option<f64>,
    /// Train with learned models of the other agents' policies.
    #[arg(long)]
    pub opponent_models: bool,
    /// Number of sub-policies per agent.
    #[arg(long)]
    pub ensemble: Option<usize>,
    #[arg(long)]
    pub final_eval_episodes: Option<usize>,
    /// Override a training field, e.g. `--set lr=0.005`.
    #[arg(long)]
    pub set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
    /// Run seeds one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint or run directories.
    #[arg(required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Scenario the checkpoints must be compatible with.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (must not exist).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CrossplayArgs {
    /// Checkpoints supplying the cooperating side, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub agents: Vec<PathBuf>,
    /// Checkpoints supplying the adversary side, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub adversaries: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Prop1Args {
    #[arg(long, default_value_t = 1)]
    pub n_min: usize,
    #[arg(long, default_value_t = 6)]
    pub n_max: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for prop1.csv and a manifest; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Checkpoint or run directory.
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance record written next to every artifact set.
#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    seeds: Vec<u64>,
    config: C,
}

fn write_manifest<C: Serialize>(dir: &Path, command: &str, argv: &[String], seeds: Vec<u64>, config: C) -> CliResult<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: argv.to_vec(),
        seeds,
        config,
    };
    let json = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    fs::write(dir.join(MANIFEST_FILE), json).with_context(|| format!("writing manifest in {}", dir.display()))?;
    Ok(())
}

/// Creates a fresh directory, refusing to touch an existing one.
fn fresh_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() {
        return Err(Failure::config(format!(
            "output: {} already exists; choose another name or output directory",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT))
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a, &argv),
        Command::Eval(a) => cmd_eval(a, &argv),
        Command::Crossplay(a) => cmd_crossplay(a, &argv),
        Command::Prop1(a) => cmd_prop1(a, &argv),
        Command::Export(a) => cmd_export(a, &argv),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

fn cmd_train(args: TrainArgs, argv: &[String]) -> CliResult<()> {
    let file = match &args.config {
        Some(p) => read_run_file(p)?,
        None => RunFile::default(),
    };
    let flags = Overrides {
        name: args.name,
        scenario: args.scenario,
        algo: args.algo,
        episodes: args.episodes,
        seeds: args.seeds,
        num_seeds: args.num_seeds,
        out: args.out,
        horizon: args.horizon,
        prey_speed_factor: args.prey_speed_factor,
        opponent_models: args.opponent_models,
        ensemble: args.ensemble,
        final_eval_episodes: args.final_eval_episodes,
        set: args.set,
    };
    let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let config = RunConfig::resolve(file, flags, env_out)?;
    if args.dump_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let run_dir = config.out_dir.join(&config.name);
    for seed in &config.seeds {
        let dir = run_dir.join(seed.to_string());
        if dir.exists() {
            return Err(Failure::config(format!(
                "name: run directory {} already exists; choose another name",
                dir.display()
            )));
        }
    }
    let exec = if args.sequential { Exec::Sequential } else { Exec::default() };
    let results = exec.map_slice(&config.seeds, |&seed| {
        let dir = run_dir.join(seed.to_string());
        train_seed(&config, seed, &dir, argv).map(|report| (seed, dir, report))
    });
    let mut first_failure = None;
    for r in results {
        match r {
            Ok((seed, dir, report)) => {
                let metrics: Vec<String> = report.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                println!("seed {seed}: {} -> {}", metrics.join(" "), dir.display());
            }
            Err(f) => {
                eprintln!("{f}");
                first_failure.get_or_insert(f);
            }
        }
    }
    first_failure.map_or(Ok(()), Err)
}

/// Trains one seed into `dir`, checkpointing on the configured cadence and
/// finishing with a noise-free evaluation in `dir/eval`.
fn train_seed(config: &RunConfig, seed: u64, dir: &Path, argv: &[String]) -> CliResult<EvalReport> {
    let seed_config = config.for_seed(seed);
    fresh_dir(dir)?;
    let ckpt = dir.join("ckpt");
    let eval_dir = dir.join("eval");
    fs::create_dir_all(&ckpt).context("creating ckpt/")?;
    fs::create_dir_all(&eval_dir).context("creating eval/")?;
    write_manifest(dir, "train", argv, vec![seed], &seed_config)?;
    fs::write(dir.join(CONFIG_FILE), seed_config.to_toml()).context("writing config.toml")?;

    let scenario = config.scenario()?;
    let cfg = config.train_config(seed);
    let every = cfg.checkpoint_every;
    let file = fs::File::create(dir.join(METRICS_FILE)).context("creating metrics.csv")?;
    let mut metrics = BufWriter::new(file);
    writeln!(metrics, "{}", metrics_header(&scenario, &cfg)).context("writing metrics.csv")?;

    let mut write_row = |row: &MetricsRow, checkpoint: bool| -> crate::Result<bool> {
        writeln!(metrics, "{}", row.to_csv(&scenario, &cfg))?;
        let due = checkpoint && every > 0 && row.episode.is_multiple_of(every);
        if due {
            metrics.flush()?;
        }
        Ok(due)
    };

    let report = if config.off_policy() {
        let mut state = TrainerState::new(scenario.clone(), cfg.clone())?;
        state.train_with(|s, row| {
            if write_row(row, true)? {
                s.save(&ckpt)?;
            }
            Ok(())
        })?;
        state.save(&ckpt)?;
        state.evaluate(config.final_eval_episodes, config.eval_seed)?
    } else {
        let algos: Vec<BaselineAlgo> = config
            .algo
            .iter()
            .map(|a| match a {
                Algo::Reinforce => BaselineAlgo::Reinforce,
                _ => BaselineAlgo::Iac,
            })
            .collect();
        let mut trainer = BaselineTrainer::new(scenario.clone(), cfg.clone(), &algos)?;
        trainer.train_with(|t, row| {
            if write_row(row, true)? {
                t.save(&ckpt)?;
            }
            Ok(())
        })?;
        trainer.save(&ckpt)?;
        trainer.evaluate(config.final_eval_episodes, config.eval_seed)?
    };
    metrics.flush().context("writing metrics.csv")?;
    fs::write(eval_dir.join("report.json"), report.to_json()?).context("writing eval report")?;
    fs::write(eval_dir.join("report.csv"), report.to_csv()).context("writing eval report")?;
    Ok(report)
}

/// Policies restored from a checkpoint directory.
pub struct LoadedRun {
    pub label: String,
    pub source: PathBuf,
    pub scenario: Scenario,
    pub policies: Vec<Box<dyn AgentPolicy>>,
    pub team_tied: bool,
}

impl LoadedRun {
    pub fn refs(&self) -> Vec<&dyn AgentPolicy> {
        self.policies.iter().map(|p| p.as_ref()).collect()
    }

    pub fn policy_set(&self) -> PolicySet<'_> {
        PolicySet {
            label: self.label.clone(),
            policies: self.refs(),
        }
    }
}

/// Label of a checkpoint: `<name>/<seed>` for run directories.
fn run_label(path: &Path) -> String {
    let path = if path.file_name().is_some_and(|n| n == "ckpt") {
        path.parent().unwrap_or(path)
    } else {
        path
    };
    let parts: Vec<String> = path
        .components()
        .rev()
        .take(2)
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    parts.into_iter().rev().collect::<Vec<_>>().join("/")
}

/// Loads the policies of a run directory or its `ckpt/` directory and, when
/// `expected` is given, checks that they fit that scenario.
pub fn load_run(path: &Path, expected: Option<&Scenario>) -> CliResult<LoadedRun> {
    let dir = if path.join("ckpt").is_dir() { path.join("ckpt") } else { path.to_path_buf() };
    let (scenario, policies, team_tied): (Scenario, Vec<Box<dyn AgentPolicy>>, bool) = if dir.join(BUNDLE_FILE).is_file() {
        let state = TrainerState::load_policies_only(&dir)
            .with_context(|| format!("loading checkpoint {}", dir.display()))?;
        let tied = state.config().ensemble.as_ref().is_none_or(|e| e.team_tied);
        let policies = state
            .policies()
            .into_iter()
            .map(|p| Box::new(p) as Box<dyn AgentPolicy>)
            .collect();
        (state.scenario().clone(), policies, tied)
    } else if dir.join(BASELINE_FILE).is_file() {
        let trainer =
            BaselineTrainer::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
        let policies = trainer
            .policies()
            .into_iter()
            .map(|p| Box::new(p) as Box<dyn AgentPolicy>)
            .collect();
        (trainer.scenario().clone(), policies, true)
    } else {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "no checkpoint ({BUNDLE_FILE} or {BASELINE_FILE}) in {}",
            dir.display()
        )));
    };
    let scenario = match expected {
        Some(want) => {
            check_compatible(&scenario, want, &dir)?;
            want.clone()
        }
        None => scenario,
    };
    Ok(LoadedRun {
        label: run_label(path),
        source: dir,
        scenario,
        policies,
        team_tied,
    })
}

fn check_compatible(have: &Scenario, want: &Scenario, dir: &Path) -> CliResult<()> {
    if have.obs_dims() != want.obs_dims() || have.action_dims() != want.action_dims() || have.kind() != want.kind() {
        return Err(Failure::config(format!(
            "scenario: checkpoint {} was trained on `{}` (observation dims {:?}, action dims {:?}) \
             but `{}` has observation dims {:?}, action dims {:?}",
            dir.display(),
            have.name(),
            have.obs_dims(),
            have.action_dims(),
            want.name(),
            want.obs_dims(),
            want.action_dims()
        )));
    }
    Ok(())
}

fn scenario_arg(name: &Option<String>) -> CliResult<Option<Scenario>> {
    name.as_deref()
        .map(|s| s.parse::<ScenarioKind>().map(Scenario::new).map_err(Failure::from))
        .transpose()
}

#[derive(Serialize)]
struct EvalManifestConfig<'a> {
    checkpoints: Vec<String>,
    scenario: Option<&'a str>,
    episodes: usize,
    seed: u64,
}

fn cmd_eval(args: EvalArgs, argv: &[String]) -> CliResult<()> {
    if args.episodes == 0 {
        return Err(Failure::config("episodes: must be positive"));
    }
    let expected = scenario_arg(&args.scenario)?;
    let runs = args
        .checkpoints
        .iter()
        .map(|p| load_run(p, expected.as_ref()))
        .collect::<CliResult<Vec<_>>>()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_root().join("evals").join(format!("eval-seed{}", args.seed)));
    let mut reports = Vec::with_capacity(runs.len());
    for run in &runs {
        let opts = EvalOptions {
            team_tied: run.team_tied,
            exec: Exec::default(),
        };
        let report = analysis::evaluate(&run.scenario, &run.refs(), args.episodes, args.seed, opts)?;
        let metrics: Vec<String> = report.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!("{}: {}", run.label, metrics.join(" "));
        reports.push((run.label.clone(), report));
    }
    fresh_dir(&out)?;
    let mut csv = String::from("checkpoint,metric,value\n");
    for (label, r) in &reports {
        for line in r.to_csv().lines().skip(1) {
            csv.push_str(&format!("{label},{line}\n"));
        }
    }
    let json: Vec<serde_json::Value> = reports
        .iter()
        .map(|(label, r)| serde_json::json!({ "checkpoint": label, "report": r }))
        .collect();
    fs::write(out.join("reports.csv"), csv).context("writing reports.csv")?;
    fs::write(
        out.join("reports.json"),
        serde_json::to_string_pretty(&json).context("serializing reports")?,
    )
    .context("writing reports.json")?;
    let config = EvalManifestConfig {
        checkpoints: args.checkpoints.iter().map(|p| p.display().to_string()).collect(),
        scenario: args.scenario.as_deref(),
        episodes: args.episodes,
        seed: args.seed,
    };
    write_manifest(&out, "eval", argv, vec![args.seed], config)?;
    println!("reports -> {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct CrossplayManifestConfig {
    agents: Vec<String>,
    adversaries: Vec<String>,
    episodes: usize,
    seed: u64,
}

fn cmd_crossplay(args: CrossplayArgs, argv: &[String]) -> CliResult<()> {
    if args.episodes == 0 {
        return Err(Failure::config("episodes: must be positive"));
    }
    let first = load_run(&args.agents[0], None)?;
    let scenario = first.scenario.clone();
    if !scenario.kind().is_competitive() {
        return Err(Failure::config(format!(
            "scenario: cross-play needs a competitive scenario, checkpoints are `{}`",
            scenario.name()
        )));
    }
    let load_all = |paths: &[PathBuf]| -> CliResult<Vec<LoadedRun>> {
        paths.iter().map(|p| load_run(p, Some(&scenario))).collect()
    };
    let agent_runs = load_all(&args.agents)?;
    let adversary_runs = load_all(&args.adversaries)?;
    let agent_sets: Vec<PolicySet> = agent_runs.iter().map(LoadedRun::policy_set).collect();
    let adversary_sets: Vec<PolicySet> = adversary_runs.iter().map(LoadedRun::policy_set).collect();
    let matrix = analysis::crossplay(
        &scenario,
        &agent_sets,
        &adversary_sets,
        args.episodes,
        args.seed,
        EvalOptions::default(),
    )?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_root().join("crossplay").join(format!("{}-seed{}", scenario.name(), args.seed)));
    fresh_dir(&out)?;
    fs::write(out.join("matrix.csv"), matrix.to_csv()).context("writing matrix.csv")?;
    fs::write(out.join("matrix.json"), matrix.to_json()?).context("writing matrix.json")?;
    let config = CrossplayManifestConfig {
        agents: args.agents.iter().map(|p| p.display().to_string()).collect(),
        adversaries: args.adversaries.iter().map(|p| p.display().to_string()).collect(),
        episodes: args.episodes,
        seed: args.seed,
    };
    write_manifest(&out, "crossplay", argv, vec![args.seed], config)?;
    println!("agents \\ adversaries: {}", matrix.adversary_labels.join(" | "));
    for (label, row) in matrix.agent_labels.iter().zip(&matrix.normalized) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("{label}: {}", cells.join(" | "));
    }
    println!("matrix -> {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct Prop1ManifestConfig {
    n_min: usize,
    n_max: usize,
    samples: usize,
    seed: u64,
}

fn cmd_prop1(args: Prop1Args, argv: &[String]) -> CliResult<()> {
    if args.samples == 0 {
        return Err(Failure::config("samples: must be positive"));
    }
    if args.n_min == 0 || args.n_min > args.n_max {
        return Err(Failure::config(format!(
            "n_min: need 1 <= n_min <= n_max, got {}..{}",
            args.n_min, args.n_max
        )));
    }
    if args.n_max > analysis::MAX_ENUMERATION_AGENTS {
        return Err(Failure::config(format!(
            "n_max: exact enumeration supports at most {} agents",
            analysis::MAX_ENUMERATION_AGENTS
        )));
    }
    let ns: Vec<usize> = (args.n_min..=args.n_max).collect();
    let rows = analysis::sweep(&ns, args.samples, args.seed, Exec::default())?;
    let csv = analysis::sweep_csv(&rows);
    match &args.out {
        None => print!("{csv}"),
        Some(dir) => {
            fresh_dir(dir)?;
            fs::write(dir.join("prop1.csv"), &csv).context("writing prop1.csv")?;
            let config = Prop1ManifestConfig {
                n_min: args.n_min,
                n_max: args.n_max,
                samples: args.samples,
                seed: args.seed,
            };
            write_manifest(dir, "prop1", argv, vec![args.seed], config)?;
            println!("prop1 -> {}", dir.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ExportManifestConfig<'a> {
    checkpoint: String,
    scenario: &'a str,
    episodes: usize,
    seed: u64,
}

/// Writes the rollouts that `eval` would run for episodes `0..episodes` of
/// `seed`, so the summary equals the per-episode evaluation metrics.
fn cmd_export(args: ExportArgs, argv: &[String]) -> CliResult<()> {
    if args.episodes == 0 {
        return Err(Failure::config("episodes: must be positive"));
    }
    let expected = scenario_arg(&args.scenario)?;
    let run = load_run(&args.checkpoint, expected.as_ref())?;
    let out = args.out.clone().unwrap_or_else(|| {
        out_root()
            .join("exports")
            .join(format!("{}-seed{}", run.label.replace('/', "-"), args.seed))
    });
    let refs = run.refs();
    let mut lines = String::new();
    let mut summary = String::new();
    for e in 0..args.episodes {
        let metrics = analysis::rollout_episode(&run.scenario, &refs, args.seed, e as u64, run.team_tied, |s, a, r| {
            lines.push_str(&TrajectoryRecord::capture(e, s, a, r).to_json_line());
            lines.push('\n');
            Ok(())
        })?;
        if summary.is_empty() {
            let names: Vec<&str> = metrics.iter().map(|(k, _)| *k).collect();
            summary = format!("episode,{}\n", names.join(","));
        }
        let values: Vec<String> = metrics.iter().map(|(_, v)| v.to_string()).collect();
        summary.push_str(&format!("{e},{}\n", values.join(",")));
    }
    fresh_dir(&out)?;
    fs::write(out.join("trajectories.jsonl"), lines).context("writing trajectories.jsonl")?;
    fs::write(out.join("summary.csv"), summary).context("writing summary.csv")?;
    let config = ExportManifestConfig {
        checkpoint: args.checkpoint.display().to_string(),
        scenario: run.scenario.name(),
        episodes: args.episodes,
        seed: args.seed,
    };
    write_manifest(&out, "export", argv, vec![args.seed], config)?;
    println!("trajectories -> {}", out.display());
    Ok(())
}
