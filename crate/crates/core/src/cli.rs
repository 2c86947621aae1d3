//! Command-line surface: `run`, `report`, `replay`, `annotate`.

use crate::config::{ConfigError, EngineParams};
use crate::metrics::{aggregate, EpisodeOutcome, MetricParams};
use crate::prompting::{PolicyContext, PolicyRegistry};
use crate::simulator::{read_log, replay_log, run_episode, EpisodeRun, RunOptions, Scenario, SimError};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ENGINE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "zsnav",
    version,
    about = "Anchor-guided navigation episodes in simulated gridworlds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes and write one JSON-lines log per (scenario, seed).
    Run(RunArgs),
    /// Aggregate episode logs into a per-scenario table.
    Report(ReportArgs),
    /// Re-run a log over its recorded replies and check it reproduces exactly.
    Replay(ReplayArgs),
    /// Render the annotated frames of a logged episode as PNG files.
    Annotate(AnnotateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario files (JSON).
    pub scenarios: Vec<PathBuf>,
    /// JSON run configuration; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Decision policy: mock, scripted:<path> or remote:<url>.
    #[arg(long)]
    pub policy: Option<String>,
    /// Seeds as `a..b` (inclusive), `a,b,c` or a single number. Defaults to the scenario seed.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory for logs and frames.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for the episode pool.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write the annotated frame of every step as PNG.
    #[arg(long)]
    pub raster: bool,
    /// Parameter override, e.g. `validation.alpha=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Log files or glob patterns.
    #[arg(required = true)]
    pub logs: Vec<String>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    pub log: PathBuf,
    /// Directory for `frame_NNN.png`; defaults to the log path without extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run configuration file. Every entry mirrors a `run` flag; `params` mirrors `--set`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<PathBuf>,
    pub policy: Option<String>,
    pub seeds: Option<String>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub raster: Option<bool>,
    pub params: Option<Value>,
}

/// Fully resolved `run` settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub scenarios: Vec<PathBuf>,
    pub policy: String,
    pub seeds: Option<Vec<u64>>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub raster: bool,
    pub params: EngineParams,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Engine(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(ConfigError::BadAssignment(_)) => EXIT_USAGE,
            _ => EXIT_ENGINE,
        }
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let bad = || format!("bad seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Json {
        context: path.display().to_string(),
        source: e,
    })
}

impl RunPlan {
    /// Flags win over the config file, which wins over defaults.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let file: RunConfig = match &args.config {
            Some(p) => serde_json::from_value(read_json(p)?).map_err(|e| ConfigError::Json {
                context: p.display().to_string(),
                source: e,
            })?,
            None => RunConfig::default(),
        };
        let scenarios = if args.scenarios.is_empty() {
            file.scenarios.clone()
        } else {
            args.scenarios.clone()
        };
        if scenarios.is_empty() {
            return Err(CliError::Usage("run needs at least one scenario file".into()));
        }
        let seeds = match args.seeds.as_ref().or(file.seeds.as_ref()) {
            Some(s) => Some(parse_seeds(s).map_err(CliError::Usage)?),
            None => None,
        };
        let jobs = args.jobs.or(file.jobs);
        if jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        Ok(Self {
            scenarios,
            policy: args.policy.clone().or(file.policy).unwrap_or_else(|| "mock".into()),
            seeds,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
            jobs,
            raster: args.raster || file.raster.unwrap_or(false),
            params: EngineParams::default().with_overrides(file.params.as_ref(), &args.set)?,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SimError> {
    std::fs::write(path, bytes).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_frames(dir: &Path, frames: &[Vec<u8>]) -> Result<(), SimError> {
    create_dir(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_file(&dir.join(format!("frame_{:03}.png", i + 1)), f)?;
    }
    Ok(())
}

fn run_one(
    plan: &RunPlan,
    registry: &PolicyRegistry,
    scenario: &Scenario,
    seed: u64,
) -> Result<(PathBuf, EpisodeRun), SimError> {
    let ctx = PolicyContext {
        world: scenario.world.clone(),
        goal: scenario.goal,
        vertical: scenario.vertical(),
        seed,
        params: plan.params,
    };
    let mut policy = registry.build(&plan.policy, &ctx)?;
    let options = RunOptions {
        render_frames: plan.raster,
    };
    let run = run_episode(scenario, seed, &plan.params, policy.as_mut(), &plan.policy, &options)?;
    let stem = format!("{}_seed{}", scenario.file.name, seed);
    let path = plan.out.join(format!("{stem}.jsonl"));
    write_file(&path, run.log.to_jsonl().as_bytes())?;
    if plan.raster {
        write_frames(&plan.out.join(&stem), &run.frames)?;
    }
    Ok((path, run))
}

pub fn cmd_run(plan: &RunPlan, out: &mut dyn Write) -> Result<Vec<EpisodeOutcome>, CliError> {
    let scenarios = plan
        .scenarios
        .iter()
        .map(|p| Scenario::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(&plan.out)?;
    let jobs: Vec<(&Scenario, u64)> = scenarios
        .iter()
        .flat_map(|s| {
            let seeds = plan.seeds.clone().unwrap_or_else(|| vec![s.file.seed]);
            seeds.into_iter().map(move |k| (s, k))
        })
        .collect();
    let registry = PolicyRegistry::default();
    let work = || {
        jobs.par_iter()
            .map(|(s, k)| run_one(plan, &registry, s, *k))
            .collect::<Vec<_>>()
    };
    let results = match plan.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Engine(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut outcomes = Vec::new();
    for r in results {
        let (path, run) = r?;
        let t = run.log.trailer().expect("episodes end with a trailer");
        let o = &t.outcome;
        let _ = writeln!(
            out,
            "{} seed {}: {:?}, prompts {}, dtg {:.2} m, path {:.2} m -> {}",
            o.scenario,
            o.seed,
            t.termination,
            o.prompts,
            o.dtg,
            o.path_length,
            path.display()
        );
        outcomes.push(o.clone());
    }
    Ok(outcomes)
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for p in patterns {
        let matches: Vec<PathBuf> = glob::glob(p)
            .map_err(|e| CliError::Usage(format!("bad pattern `{p}`: {e}")))?
            .filter_map(Result::ok)
            .collect();
        if matches.is_empty() {
            return Err(CliError::Engine(format!("{p}: no such log")));
        }
        paths.extend(matches);
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut outcomes = Vec::new();
    let mut metric: Option<MetricParams> = None;
    for path in expand(&args.logs)? {
        let text = std::fs::read_to_string(&path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let log = read_log(&text).map_err(|e| CliError::Engine(format!("{}: {e}", path.display())))?;
        let t = log
            .trailer()
            .ok_or_else(|| CliError::Engine(format!("{}: log has no trailer", path.display())))?;
        if let Some(h) = log.header() {
            metric.get_or_insert(h.params.metrics);
        }
        outcomes.push(t.outcome.clone());
    }
    let report = aggregate(&outcomes, &metric.unwrap_or_default()).map_err(|e| CliError::Engine(e.to_string()))?;
    let text = if args.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        report.to_table()
    };
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, SimError> {
    std::fs::read(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Returns true when the replay matched.
pub fn cmd_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<bool, CliError> {
    let (div, run) = replay_log(&read_bytes(&args.log)?, &RunOptions::default())?;
    match div {
        None => {
            let _ = writeln!(
                out,
                "{}: replay identical ({} records)",
                args.log.display(),
                run.log.records.len()
            );
            Ok(true)
        }
        Some(d) => {
            let _ = writeln!(out, "{}: divergence at {d}", args.log.display());
            Ok(false)
        }
    }
}

pub fn cmd_annotate(args: &AnnotateArgs, out: &mut dyn Write) -> Result<bool, CliError> {
    let (div, run) = replay_log(&read_bytes(&args.log)?, &RunOptions { render_frames: true })?;
    let dir = args.out.clone().unwrap_or_else(|| args.log.with_extension(""));
    write_frames(&dir, &run.frames)?;
    let _ = writeln!(out, "wrote {} frames to {}", run.frames.len(), dir.display());
    if let Some(d) = &div {
        let _ = writeln!(out, "warning: log diverges at {d}; frames follow the replayed run");
    }
    Ok(div.is_none())
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => RunPlan::resolve(a)
            .and_then(|plan| cmd_run(&plan, out))
            .map(|_| EXIT_OK),
        Command::Report(a) => cmd_report(a, out).map(|_| EXIT_OK),
        Command::Replay(a) => cmd_replay(a, out).map(|ok| if ok { EXIT_OK } else { EXIT_DIVERGED }),
        Command::Annotate(a) => cmd_annotate(a, out).map(|ok| if ok { EXIT_OK } else { EXIT_DIVERGED }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}
