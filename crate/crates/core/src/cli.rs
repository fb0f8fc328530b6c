//! Command-line front end.
//!
//! Each subcommand resolves its settings from flags, an optional TOML
//! config file, and built-in defaults (flags win over the file, the file
//! wins over defaults), runs the corresponding library routine, and writes
//! its artifacts plus a `manifest.json` into the output directory. The
//! manifest records the fully resolved settings, so `rerun` reproduces any
//! run byte for byte from that file alone.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a
//! program fails to evaluate.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::fsm::{extract_state_machine, FsmOptions, StateMachine};
use crate::analysis::{
    accumulator_sweep, fit_horizon_temperature, pareto, HorizonFitConfig, SweepRow,
    SWEEP_ROLLOUTS,
};
use crate::dsl::{parse_expr, Strategy, MEMORY_LEN};
use crate::mcmc::{run_discovery, DiscoveryConfig, ScoredStrategy};
use crate::seeds;
use crate::tasks::{HorizonCondition, TaskSpec};
use crate::value::{
    episode_trace, exact_value, mc_value, ValueEstimate, ValueMethod, ValueSeeds,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config, or input files.
    #[error("{0}")]
    Usage(String),
    /// A syntactically valid program that cannot be valued as requested.
    #[error("{0}")]
    Eval(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Eval(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bandit-programs", version, about = "Discovers and analyzes bandit strategies expressed as programs")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory the command writes its artifacts into.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for high-posterior strategies with tempered MCMC chains.
    Discover(DiscoverArgs),
    /// Value one strategy program on a task.
    Eval(EvalArgs),
    /// Merge discovery results into a value/description-length frontier.
    Pareto(ParetoArgs),
    /// Extract the reachable state machine of a strategy.
    Fsm(FsmArgs),
    /// Grid over score-accumulator variants on the stationary task.
    Sweep(SweepArgs),
    /// Fit the tempered accumulator's sharpness per horizon condition.
    FitHorizon(FitHorizonArgs),
    /// Re-execute a recorded run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Default, Parser)]
pub struct DiscoverArgs {
    /// Task family: bernoulli2, horizon, or restless3.
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    /// Horizon condition (horizon task only): short or long.
    #[arg(long, value_enum)]
    pub condition: Option<ConditionName>,
    /// Episode length override for bernoulli2 or restless3.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Inverse temperatures, comma separated. Default: the task's ladder.
    #[arg(long = "beta", value_delimiter = ',', num_args = 1..)]
    pub betas: Option<Vec<f64>>,
    /// Independent chains per temperature. Default 5.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Proposals per chain. Default 500000.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Monte Carlo rollouts per valuation. Default: the task's count.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Strategies each chain keeps. Default 100.
    #[arg(long)]
    pub top: Option<usize>,
    /// Master seed. Default 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict the grammar to point-mass policies.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
}

#[derive(Debug, Parser)]
pub struct EvalArgs {
    /// Program file in the four-line `role = expression` form.
    pub program: PathBuf,
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    #[arg(long, value_enum)]
    pub condition: Option<ConditionName>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// exact enumerates outcomes (deterministic bernoulli2 only); mc samples.
    #[arg(long, value_enum)]
    pub mode: Option<EvalMode>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write one seeded episode as trace.csv.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Parser)]
pub struct ParetoArgs {
    /// results.jsonl files from discovery runs.
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct FsmArgs {
    /// Program file in the four-line `role = expression` form.
    pub program: PathBuf,
    /// Binary-outcome task the machine is read against (sets arms and depth).
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Number of arms when no task is given. Default 2.
    #[arg(long)]
    pub actions: Option<usize>,
    /// Trials to unroll. Default: the task's length, else 100.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Distinct-configuration budget before truncation.
    #[arg(long)]
    pub max_configs: Option<usize>,
    /// Distribution distance under which configurations share a state.
    #[arg(long)]
    pub quantize_tol: Option<f64>,
    /// Distribution distance under which equivalent states merge.
    #[arg(long)]
    pub collapse_tol: Option<f64>,
    /// Smallest action probability worth an edge.
    #[arg(long)]
    pub prune: Option<f64>,
    /// Keep raw quantized states instead of merging equivalent ones.
    #[arg(long)]
    pub no_collapse: bool,
    /// Override the initial memory, four comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = MEMORY_LEN)]
    pub init_memory: Option<Vec<f64>>,
    /// Override the initial action distribution, one value per arm.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub init_policy: Option<Vec<f64>>,
    /// Also write Graphviz source as fsm.dot.
    #[arg(long)]
    pub dot: bool,
}

#[derive(Debug, Parser)]
pub struct SweepArgs {
    /// Rollouts behind each stochastic cell. Default 10000.
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Parser)]
pub struct FitHorizonArgs {
    /// Value weight in the fitted score. Default 300.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rollouts per sharpness grid point. Default 10000.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Episodes behind the choice diagnostics. Default 50000.
    #[arg(long)]
    pub diag_episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Parser)]
pub struct RerunArgs {
    /// manifest.json from a previous run.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Bernoulli2,
    Horizon,
    Restless3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionName {
    Short,
    Long,
}

impl From<ConditionName> for HorizonCondition {
    fn from(c: ConditionName) -> Self {
        match c {
            ConditionName::Short => HorizonCondition::Short,
            ConditionName::Long => HorizonCondition::Long,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Exact,
    Mc,
}

/// What `manifest.json` holds: the tool version plus the fully resolved
/// settings of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    #[serde(flatten)]
    pub job: Job,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Job {
    Discover(DiscoveryConfig),
    Eval(EvalJob),
    Pareto(ParetoJob),
    Fsm(FsmJob),
    Sweep(SweepJob),
    FitHorizon(HorizonFitConfig),
}

/// Resolved `eval` settings. The program text is embedded, so the manifest
/// stays reproducible after the original file moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub program: String,
    pub task: TaskSpec,
    pub mode: EvalMode,
    pub rollouts: usize,
    pub seed: u64,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoJob {
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmJob {
    pub program: String,
    pub num_actions: usize,
    pub options: FsmOptions,
    pub dot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepJob {
    pub rollouts: usize,
    pub seed: u64,
}

/// What `eval` reports. Values are absent when the program faults instead
/// of producing a finite estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskSpec,
    pub mode: EvalMode,
    pub raw: Option<f64>,
    pub normalized: Option<f64>,
    pub stderr: f64,
    pub rollouts: usize,
    pub method: ValueMethod,
}

/// Optional config file contents. Every key is optional; sections and keys
/// are kebab-case, matching the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    discover: Option<DiscoverFile>,
    eval: Option<EvalFile>,
    fsm: Option<FsmFile>,
    sweep: Option<SweepFile>,
    fit_horizon: Option<FitHorizonFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct DiscoverFile {
    task: Option<TaskName>,
    condition: Option<ConditionName>,
    trials: Option<usize>,
    betas: Option<Vec<f64>>,
    chains: Option<usize>,
    steps: Option<u64>,
    rollouts: Option<usize>,
    top: Option<usize>,
    seed: Option<u64>,
    deterministic: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct EvalFile {
    task: Option<TaskName>,
    condition: Option<ConditionName>,
    trials: Option<usize>,
    mode: Option<EvalMode>,
    rollouts: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FsmFile {
    task: Option<TaskName>,
    trials: Option<usize>,
    actions: Option<usize>,
    depth: Option<usize>,
    max_configs: Option<usize>,
    quantize_tol: Option<f64>,
    collapse_tol: Option<f64>,
    prune: Option<f64>,
    collapse: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SweepFile {
    rollouts: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FitHorizonFile {
    beta: Option<f64>,
    rollouts: Option<usize>,
    diag_episodes: Option<usize>,
    seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Discover(args) => {
            let cfg = resolve_discover(&args, file.discover.unwrap_or_default())?;
            cmd_discover(&cfg, &cli.out)
        }
        Command::Eval(args) => {
            let job = resolve_eval(&args, file.eval.unwrap_or_default())?;
            cmd_eval(&job, &cli.out)
        }
        Command::Pareto(args) => cmd_pareto(&ParetoJob { inputs: args.results }, &cli.out),
        Command::Fsm(args) => {
            let job = resolve_fsm(&args, file.fsm.unwrap_or_default())?;
            cmd_fsm(&job, &cli.out)
        }
        Command::Sweep(args) => {
            let file = file.sweep.unwrap_or_default();
            let job = SweepJob {
                rollouts: args.rollouts.or(file.rollouts).unwrap_or(SWEEP_ROLLOUTS),
                seed: args.seed.or(file.seed).unwrap_or(0),
            };
            cmd_sweep(&job, &cli.out)
        }
        Command::FitHorizon(args) => {
            let file = file.fit_horizon.unwrap_or_default();
            let defaults = HorizonFitConfig::new(0);
            let cfg = HorizonFitConfig {
                beta: args.beta.or(file.beta).unwrap_or(defaults.beta),
                rollouts: args.rollouts.or(file.rollouts).unwrap_or(defaults.rollouts),
                diag_episodes: args
                    .diag_episodes
                    .or(file.diag_episodes)
                    .unwrap_or(defaults.diag_episodes),
                seed: args.seed.or(file.seed).unwrap_or(0),
            };
            cmd_fit_horizon(&cfg, &cli.out)
        }
        Command::Rerun(args) => cmd_rerun(&args.manifest, &cli.out),
    }
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = read_file(path)?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Builds the task from its name, condition, and trial-count settings,
/// enforcing that the condition accompanies exactly the horizon task.
fn resolve_task(
    name: Option<TaskName>,
    condition: Option<ConditionName>,
    trials: Option<usize>,
) -> Result<TaskSpec, CliError> {
    let Some(name) = name else {
        return Err(CliError::Usage(
            "--task is required (bernoulli2, horizon, or restless3)".into(),
        ));
    };
    if !matches!(name, TaskName::Horizon) && condition.is_some() {
        return Err(CliError::Usage(
            "--condition only applies to --task horizon".into(),
        ));
    }
    if trials == Some(0) {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    match name {
        TaskName::Bernoulli2 => Ok(TaskSpec::Bernoulli2 {
            horizon: trials.unwrap_or(20),
        }),
        TaskName::Restless3 => Ok(TaskSpec::Restless3 {
            horizon: trials.unwrap_or(500),
        }),
        TaskName::Horizon => {
            if trials.is_some() {
                return Err(CliError::Usage(
                    "--task horizon fixes its trial count; use --condition short|long".into(),
                ));
            }
            let Some(condition) = condition else {
                return Err(CliError::Usage(
                    "--task horizon needs --condition short|long".into(),
                ));
            };
            Ok(TaskSpec::horizon(condition.into()))
        }
    }
}

fn resolve_discover(
    args: &DiscoverArgs,
    file: DiscoverFile,
) -> Result<DiscoveryConfig, CliError> {
    let task = resolve_task(
        args.task.or(file.task),
        args.condition.or(file.condition),
        args.trials.or(file.trials),
    )?;
    let cfg = DiscoveryConfig {
        betas: args
            .betas
            .clone()
            .or(file.betas)
            .unwrap_or_else(|| task.default_betas()),
        chains: args.chains.or(file.chains).unwrap_or(5),
        steps: args.steps.or(file.steps).unwrap_or(500_000),
        rollouts: args
            .rollouts
            .or(file.rollouts)
            .unwrap_or_else(|| task.default_rollouts()),
        top_k: args.top.or(file.top).unwrap_or(100),
        seed: args.seed.or(file.seed).unwrap_or(0),
        deterministic: args.deterministic.or(file.deterministic).unwrap_or(false),
        task,
    };
    if cfg.betas.is_empty() || cfg.betas.iter().any(|b| !b.is_finite() || *b <= 0.0) {
        return Err(CliError::Usage(
            "--beta needs finite positive inverse temperatures".into(),
        ));
    }
    if cfg.chains == 0 || cfg.steps == 0 || cfg.top_k == 0 {
        return Err(CliError::Usage(
            "--chains, --steps, and --top must be at least 1".into(),
        ));
    }
    if cfg.rollouts < 2 {
        return Err(CliError::Usage("--rollouts must be at least 2".into()));
    }
    Ok(cfg)
}

fn resolve_eval(args: &EvalArgs, file: EvalFile) -> Result<EvalJob, CliError> {
    let task = resolve_task(
        args.task.or(file.task),
        args.condition.or(file.condition),
        args.trials.or(file.trials),
    )?;
    let job = EvalJob {
        program: read_file(&args.program)?,
        mode: args.mode.or(file.mode).unwrap_or(EvalMode::Mc),
        rollouts: args
            .rollouts
            .or(file.rollouts)
            .unwrap_or_else(|| task.default_rollouts()),
        seed: args.seed.or(file.seed).unwrap_or(0),
        trace: args.trace,
        task,
    };
    if job.mode == EvalMode::Mc && job.rollouts < 2 {
        return Err(CliError::Usage("--rollouts must be at least 2".into()));
    }
    Ok(job)
}

fn resolve_fsm(args: &FsmArgs, file: FsmFile) -> Result<FsmJob, CliError> {
    let task = match args.task.or(file.task) {
        Some(name) => Some(resolve_task(
            Some(name),
            None,
            args.trials.or(file.trials),
        )?),
        None => None,
    };
    if matches!(task, Some(TaskSpec::Horizon { .. })) {
        return Err(CliError::Usage(
            "machines are read against win/loss outcomes; the horizon task pays graded rewards"
                .into(),
        ));
    }
    let num_actions = match (args.actions.or(file.actions), &task) {
        (Some(n), _) => n,
        (None, Some(spec)) => spec.num_actions(),
        (None, None) => 2,
    };
    if num_actions < 2 {
        return Err(CliError::Usage("--actions must be at least 2".into()));
    }
    let depth = match (args.depth.or(file.depth), &task) {
        (Some(d), _) => d,
        (None, Some(spec)) => spec.trials(),
        (None, None) => 100,
    };
    if depth == 0 {
        return Err(CliError::Usage("--depth must be at least 1".into()));
    }
    let mut options = FsmOptions::new(depth);
    if let Some(v) = args.max_configs.or(file.max_configs) {
        options.max_configs = v;
    }
    if let Some(v) = args.quantize_tol.or(file.quantize_tol) {
        options.quantize_tol = v;
    }
    if let Some(v) = args.collapse_tol.or(file.collapse_tol) {
        options.collapse_tol = v;
    }
    if let Some(v) = args.prune.or(file.prune) {
        options.prune_threshold = v;
    }
    options.collapse = if args.no_collapse {
        false
    } else {
        file.collapse.unwrap_or(true)
    };
    if let Some(m) = &args.init_memory {
        let m: [f64; MEMORY_LEN] = m
            .as_slice()
            .try_into()
            .map_err(|_| CliError::Usage(format!("--init-memory needs {MEMORY_LEN} values")))?;
        options.init_memory = Some(m);
    }
    if let Some(p) = &args.init_policy {
        if p.len() != num_actions {
            return Err(CliError::Usage(format!(
                "--init-policy needs one value per arm ({num_actions})"
            )));
        }
        options.init_policy = Some(p.clone());
    }
    Ok(FsmJob {
        program: read_file(&args.program)?,
        num_actions,
        options,
        dot: args.dot,
    })
}

fn cmd_discover(cfg: &DiscoveryConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let discovery = run_discovery(cfg);
    let mut lines = String::new();
    for s in &discovery.strategies {
        lines.push_str(&to_json(s)?);
        lines.push('\n');
    }
    write_file(&out.join("results.jsonl"), &lines)?;
    write_file(&out.join("stats.json"), &to_json_pretty(&discovery.stats)?)?;
    write_manifest(out, Job::Discover(cfg.clone()))?;
    for beta in &cfg.betas {
        let best = discovery
            .strategies
            .iter()
            .filter(|s| s.beta == *beta)
            .max_by(|a, b| a.score().total_cmp(&b.score()));
        if let Some(s) = best {
            println!(
                "beta {beta}: best normalized value {:.4}, log prior {:.2}",
                s.normalized_value, s.log_prior
            );
        }
    }
    println!(
        "kept {} strategies -> {}",
        discovery.strategies.len(),
        out.join("results.jsonl").display()
    );
    Ok(())
}

fn cmd_eval(job: &EvalJob, out: &Path) -> Result<(), CliError> {
    let s = strategy_from_text(&job.program).map_err(CliError::Usage)?;
    ensure_dir(out)?;
    let seeds_ = ValueSeeds::from_chain(job.seed);
    let est = match job.mode {
        EvalMode::Exact => {
            exact_value(&s, &job.task).map_err(|e| CliError::Eval(e.to_string()))?
        }
        EvalMode::Mc => mc_value(&s, &job.task, job.rollouts, &seeds_),
    };
    let report = report_from(job, &est);
    let report_json = to_json_pretty(&report)?;
    write_file(&out.join("report.json"), &report_json)?;
    let mut failure = (!est.is_valid())
        .then(|| "the program faults during evaluation; no finite value".to_string());
    if job.trace && failure.is_none() {
        match episode_trace(
            &s,
            &job.task,
            seeds::derive(seeds_.env, 0),
            seeds::derive(seeds_.agent, 0),
        ) {
            Ok(records) => {
                let mut csv = String::from("t,action,reward,expected_reward,forced\n");
                for r in &records {
                    csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        r.t, r.action, r.reward, r.expected_reward, r.forced
                    ));
                }
                write_file(&out.join("trace.csv"), &csv)?;
            }
            Err(_) => failure = Some("the program faults on the traced episode".into()),
        }
    }
    write_manifest(out, Job::Eval(job.clone()))?;
    println!("{}", to_json(&report)?);
    match failure {
        Some(msg) => Err(CliError::Eval(msg)),
        None => Ok(()),
    }
}

fn report_from(job: &EvalJob, est: &ValueEstimate) -> EvalReport {
    EvalReport {
        task: job.task,
        mode: job.mode,
        raw: est.is_valid().then_some(est.raw),
        normalized: est.is_valid().then_some(est.normalized),
        stderr: est.stderr,
        rollouts: est.rollouts,
        method: est.method,
    }
}

fn cmd_pareto(job: &ParetoJob, out: &Path) -> Result<(), CliError> {
    let mut points: Vec<ScoredStrategy> = Vec::new();
    for path in &job.inputs {
        let text = read_file(path)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: ScoredStrategy = serde_json::from_str(line).map_err(|e| {
                CliError::Usage(format!(
                    "{}:{}: not a result record: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            points.push(s);
        }
    }
    let frontier = pareto(&points);
    ensure_dir(out)?;
    let mut csv = String::from("normalized_value,log_prior,m1,q1,f,g,on_frontier\n");
    for p in &frontier {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.normalized_value,
            p.log_prior,
            csv_text(&p.m1),
            csv_text(&p.q1),
            csv_text(&p.f),
            csv_text(&p.g),
            p.on_frontier
        ));
    }
    write_file(&out.join("pareto.csv"), &csv)?;
    write_manifest(out, Job::Pareto(job.clone()))?;
    println!(
        "{} distinct programs, {} on the frontier -> {}",
        frontier.len(),
        frontier.iter().filter(|p| p.on_frontier).count(),
        out.join("pareto.csv").display()
    );
    Ok(())
}

fn cmd_fsm(job: &FsmJob, out: &Path) -> Result<(), CliError> {
    let s = strategy_from_text(&job.program).map_err(CliError::Usage)?;
    let machine = extract_state_machine(&s, job.num_actions, &job.options)
        .map_err(|e| CliError::Eval(format!("the program faults at initialization: {e}")))?;
    ensure_dir(out)?;
    write_file(&out.join("fsm.json"), &to_json_pretty(&machine)?)?;
    if job.dot {
        write_file(&out.join("fsm.dot"), &machine.to_dot())?;
    }
    write_manifest(out, Job::Fsm(job.clone()))?;
    report_machine(&machine, out);
    Ok(())
}

fn report_machine(machine: &StateMachine, out: &Path) {
    println!(
        "{} states, {} edges -> {}",
        machine.states.len(),
        machine.edges.len(),
        out.join("fsm.json").display()
    );
    if machine.truncated {
        eprintln!("note: configuration budget hit; the machine is a truncation");
    }
    if machine.saw_invalid {
        eprintln!("note: some reachable histories fault; their branches are missing");
    }
}

fn cmd_sweep(job: &SweepJob, out: &Path) -> Result<(), CliError> {
    if job.rollouts < 2 {
        return Err(CliError::Usage("--rollouts must be at least 2".into()));
    }
    let seeds_ = ValueSeeds::from_chain(job.seed);
    let table = accumulator_sweep(job.rollouts, &seeds_);
    ensure_dir(out)?;
    let mut csv = String::from(
        "target,init_arm0,init_arm1,q1,g,deterministic,raw_value,normalized_value,stderr,method,best_for_target\n",
    );
    for r in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            csv_text(&r.target),
            r.init_arm0,
            r.init_arm1,
            csv_text(&r.q1),
            csv_text(&r.g),
            r.deterministic,
            r.raw_value,
            r.normalized_value,
            r.stderr,
            method_name(r.method),
            r.best_for_target
        ));
    }
    write_file(&out.join("sweep.csv"), &csv)?;
    write_manifest(out, Job::Sweep(job.clone()))?;
    println!(
        "{} variants -> {}",
        table.rows.len(),
        out.join("sweep.csv").display()
    );
    for r in table.rows.iter().filter(|r| r.best_for_target) {
        println!(
            "best for {}: start ({},{}), {} (raw value {:.4})",
            r.target,
            r.init_arm0,
            r.init_arm1,
            best_label(r),
            r.raw_value
        );
    }
    Ok(())
}

fn best_label(r: &SweepRow) -> String {
    if r.deterministic {
        format!("first action {}, argmax play", r.q1)
    } else {
        format!("softmax play {}", r.g)
    }
}

fn cmd_fit_horizon(cfg: &HorizonFitConfig, out: &Path) -> Result<(), CliError> {
    if cfg.rollouts < 2 || cfg.diag_episodes == 0 {
        return Err(CliError::Usage(
            "--rollouts must be at least 2 and --diag-episodes at least 1".into(),
        ));
    }
    if !cfg.beta.is_finite() || cfg.beta <= 0.0 {
        return Err(CliError::Usage("--beta must be finite and positive".into()));
    }
    let fits = fit_horizon_temperature(cfg);
    ensure_dir(out)?;
    write_file(&out.join("fit.json"), &to_json_pretty(&fits)?)?;
    write_manifest(out, Job::FitHorizon(*cfg))?;
    for fit in &fits {
        let first = fit.by_trial.first();
        let last = fit.by_trial.last();
        println!(
            "{:?}: fitted sharpness {}, p(better arm) {:.3} -> {:.3} over the free trials",
            fit.condition,
            fit.fitted_w,
            first.map_or(f64::NAN, |d| d.p_better),
            last.map_or(f64::NAN, |d| d.p_better)
        );
    }
    println!("wrote {}", out.join("fit.json").display());
    Ok(())
}

fn cmd_rerun(manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = read_file(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "note: manifest from version {}, this is {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    match &manifest.job {
        Job::Discover(cfg) => cmd_discover(cfg, out),
        Job::Eval(job) => cmd_eval(job, out),
        Job::Pareto(job) => cmd_pareto(job, out),
        Job::Fsm(job) => cmd_fsm(job, out),
        Job::Sweep(job) => cmd_sweep(job, out),
        Job::FitHorizon(cfg) => cmd_fit_horizon(cfg, out),
    }
}

/// Parses the four-line `role = expression` program form produced by
/// [`Strategy::to_text`]. Blank lines and `#` comments are ignored.
pub fn strategy_from_text(text: &str) -> Result<Strategy, String> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let mut exprs = Vec::with_capacity(4);
    for role in ["m1", "q1", "f", "g"] {
        let Some(line) = lines.next() else {
            return Err(format!("missing `{role} = <expression>` line"));
        };
        let rest = line
            .strip_prefix(role)
            .and_then(|r| r.trim_start().strip_prefix('='))
            .ok_or_else(|| format!("expected `{role} = <expression>`, found `{line}`"))?;
        exprs.push(parse_expr(rest.trim()).map_err(|e| format!("{role}: {e}"))?);
    }
    if let Some(line) = lines.next() {
        return Err(format!("unexpected content after the program: `{line}`"));
    }
    let mut exprs = exprs.into_iter();
    let (m1, q1, f, g) = (
        exprs.next().unwrap(),
        exprs.next().unwrap(),
        exprs.next().unwrap(),
        exprs.next().unwrap(),
    );
    Strategy::new(m1, q1, f, g).map_err(|e| e.to_string())
}

fn method_name(m: ValueMethod) -> &'static str {
    match m {
        ValueMethod::MonteCarlo => "monte_carlo",
        ValueMethod::Exact => "exact",
        ValueMethod::DynamicProgramming => "dynamic_programming",
    }
}

/// Program texts contain commas and parentheses, so CSV cells quote them.
/// The grammar has no quote character, which keeps the quoting trivial.
fn csv_text(s: &str) -> String {
    debug_assert!(!s.contains('"'));
    format!("\"{s}\"")
}

fn write_manifest(out: &Path, job: Job) -> Result<(), CliError> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        job,
    };
    write_file(&out.join("manifest.json"), &to_json_pretty(&manifest)?)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string(value).map_err(|e| CliError::Usage(format!("cannot encode output: {e}")))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("cannot encode output: {e}")))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}
