//! `semistatic` command line: run episodes, evaluate policies, render
//! priority maps and snapshots.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semistatic_core::episode::{
    events_to_jsonl, run_episode, trajectory_to_csv, EpisodeOptions, Policy, Task,
};
use semistatic_core::eval::{evaluate_episode, metrics_csv, summary_csv, EpisodeRecord};
use semistatic_core::export::{
    read_snapshot, snapshot, write_annotated_ppm, write_pgm, write_snapshot,
};
use semistatic_core::priority::{compose_priority_map, RelevancyOracle};
use semistatic_core::{load_scenario, Config, Error, SimWorld};

#[derive(Parser)]
#[command(name = "semistatic", about = "Semantic mapping and exploration in semi-static worlds")]
struct Cli {
    /// Print every tunable with its effective value and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    /// Override a tunable, e.g. --set lifecycle.theta_removal=0.55
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its logs, snapshots, and metrics.
    Simulate(SimulateArgs),
    /// Run policies x seeds x tasks and write metrics.csv / summary.csv.
    Evaluate(EvaluateArgs),
    /// Render the exploration priority map for a saved snapshot.
    RenderPriority(RenderArgs),
    /// Run an episode and write only the final map snapshot.
    Snapshot(SnapshotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "ours")]
    policy: String,
    /// `maintain` or `find:<query>[@<target object id>]`.
    #[arg(long, default_value = "maintain")]
    task: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated time budget in seconds.
    #[arg(long, default_value_t = 300.0)]
    budget: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Start from an empty map instead of the synthesized initial map.
    #[arg(long)]
    no_prior_map: bool,
    /// Disable change detection (ablation).
    #[arg(long)]
    no_change_detection: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated policy list.
    #[arg(long, default_value = "ours,random,patrol")]
    policies: String,
    /// Repeatable task spec; defaults to map maintenance.
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Seed list: `0..20`, or comma-separated values.
    #[arg(long, default_value = "0..10")]
    seeds: String,
    #[arg(long, default_value_t = 300.0)]
    budget: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    no_prior_map: bool,
    #[arg(long)]
    no_change_detection: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Map snapshot JSON produced by `simulate` or `snapshot`.
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long, default_value = "maintain")]
    task: String,
    /// Scenario file supplying the relevancy table (find tasks).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output prefix; writes <prefix>.pgm, <prefix>.json, <prefix>_map.ppm.
    #[arg(long, default_value = "priority")]
    out: PathBuf,
}

#[derive(Args)]
struct SnapshotArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "ours")]
    policy: String,
    #[arg(long, default_value = "maintain")]
    task: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300.0)]
    budget: f64,
    #[arg(long, default_value = "snapshot.json")]
    out: PathBuf,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        match e {
            Error::ScenarioParse { .. }
            | Error::ScenarioInvariant { .. }
            | Error::UnknownConfigKey(_)
            | Error::BadConfigValue { .. }
            | Error::InvalidInput(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

fn apply_overrides(config: &mut Config, set: &[String]) -> Result<(), CliError> {
    for kv in set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        config.set(key, value)?;
    }
    config.validate()?;
    Ok(())
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    if let Some((a, b)) = spec.split_once("..") {
        let start: u64 = a
            .parse()
            .map_err(|_| CliError::Config(format!("bad seed range `{spec}`")))?;
        let end: u64 = b
            .parse()
            .map_err(|_| CliError::Config(format!("bad seed range `{spec}`")))?;
        if end <= start {
            return Err(CliError::Config(format!("empty seed range `{spec}`")));
        }
        return Ok((start..end).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("bad seed `{s}`")))
        })
        .collect()
}

fn parse_policies(spec: &str) -> Result<Vec<Policy>, CliError> {
    spec.split(',')
        .map(|s| s.trim().parse::<Policy>().map_err(CliError::from))
        .collect()
}

fn cmd_simulate(args: &SimulateArgs, config: &Config) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let world = SimWorld::new(scenario, config.grid_resolution);
    let policy: Policy = args.policy.parse()?;
    let task = Task::parse(&args.task)?;
    let mut opts = EpisodeOptions::new(policy, task, args.budget, args.seed);
    opts.use_prior_map = !args.no_prior_map;
    opts.change_detection = !args.no_change_detection;

    let (record, result) = evaluate_episode(&world, config, &opts)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("trajectory.csv"), trajectory_to_csv(&result.trajectory))?;
    std::fs::write(args.out.join("events.jsonl"), events_to_jsonl(&result.events))?;
    for snap in &result.snapshots {
        write_snapshot(
            args.out.join(format!("snapshot_{:06.1}.json", snap.t)),
            snap,
        )?;
    }
    write_snapshot(
        args.out.join("snapshot_final.json"),
        &snapshot(&result.map, args.budget),
    )?;
    std::fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&record).expect("record serializes") + "\n",
    )?;
    println!(
        "episode done: policy={} task={} frames={} success={}",
        record.policy.as_str(),
        record.task,
        record.frames,
        record
            .success_time
            .map(|t| format!("{t:.1}s"))
            .unwrap_or_else(|| "-".into()),
    );
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn cmd_evaluate(args: &EvaluateArgs, config: &Config) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let world = SimWorld::new(scenario, config.grid_resolution);
    let policies = parse_policies(&args.policies)?;
    let seeds = parse_seeds(&args.seeds)?;
    let task_specs = if args.tasks.is_empty() {
        vec!["maintain".to_string()]
    } else {
        args.tasks.clone()
    };
    let tasks: Vec<Task> = task_specs
        .iter()
        .map(|t| Task::parse(t).map_err(CliError::from))
        .collect::<Result<_, _>>()?;

    std::fs::create_dir_all(args.out.join("episodes"))?;
    let mut records: Vec<EpisodeRecord> = Vec::new();
    for task in &tasks {
        for policy in &policies {
            for &seed in &seeds {
                let mut opts = EpisodeOptions::new(*policy, task.clone(), args.budget, seed);
                opts.use_prior_map = !args.no_prior_map;
                opts.change_detection = !args.no_change_detection;
                let (record, result) = evaluate_episode(&world, config, &opts)?;
                let name = format!(
                    "{}_{}_{}.jsonl",
                    policy.as_str(),
                    sanitize(&task.label()),
                    seed
                );
                std::fs::write(
                    args.out.join("episodes").join(name),
                    events_to_jsonl(&result.events),
                )?;
                records.push(record);
            }
        }
    }
    std::fs::write(args.out.join("metrics.csv"), metrics_csv(&records))?;
    std::fs::write(args.out.join("summary.csv"), summary_csv(&records))?;
    println!(
        "evaluated {} episodes -> {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_render(args: &RenderArgs, config: &Config) -> Result<(), CliError> {
    if !args.snapshot.exists() {
        return Err(CliError::Config(format!(
            "snapshot `{}` does not exist",
            args.snapshot.display()
        )));
    }
    let snap = read_snapshot(&args.snapshot)?;
    let map = snap.to_map();
    let task = Task::parse(&args.task)?;
    let oracle = match &args.scenario {
        Some(path) => RelevancyOracle::from_table(&load_scenario(path)?.relevancy_table),
        None => RelevancyOracle::new(0.1),
    };
    let grid = compose_priority_map(&map, &task.query, &oracle, &config.priority_params())?;
    let pgm = args.out.with_extension("pgm");
    write_pgm(&pgm, &grid)?;
    let ppm = args
        .out
        .with_file_name(format!(
            "{}_map.ppm",
            args.out.file_name().unwrap_or_default().to_string_lossy()
        ));
    write_annotated_ppm(&ppm, &map)?;
    println!("wrote {} and {}", pgm.display(), ppm.display());
    Ok(())
}

fn cmd_snapshot(args: &SnapshotArgs, config: &Config) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let world = SimWorld::new(scenario, config.grid_resolution);
    let policy: Policy = args.policy.parse()?;
    let task = Task::parse(&args.task)?;
    let opts = EpisodeOptions::new(policy, task, args.budget, args.seed);
    let result = run_episode(&world, config, &opts)?;
    write_snapshot(&args.out, &snapshot(&result.map, args.budget))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = Config::default();
    apply_overrides(&mut config, &cli.set)?;
    if cli.dump_config {
        for (k, v) in config.dump() {
            println!("{k}={v}");
        }
        return Ok(());
    }
    match &cli.command {
        Some(Command::Simulate(args)) => cmd_simulate(args, &config),
        Some(Command::Evaluate(args)) => cmd_evaluate(args, &config),
        Some(Command::RenderPriority(args)) => cmd_render(args, &config),
        Some(Command::Snapshot(args)) => cmd_snapshot(args, &config),
        None => Err(CliError::Config(
            "no command given (try --help or --dump-config)".into(),
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(1)
        }
    }
}
