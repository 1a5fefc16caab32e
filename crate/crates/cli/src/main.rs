//! `ldist`: run pursuit-game episodes and tournaments, replay traces and
//! export plot data.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ldist_core::entropy::{empirical_entropy, max_entropy};
use ldist_core::function_base::DEFAULT_BASE_JSONL;
use ldist_core::harness::{emit_trajectories, run_tournament_with};
use ldist_core::planner::StepEvent;
use ldist_core::{build_default_base, EpisodeTrace, FunctionBase, Planner, TournamentConfig};

use crate::config::{merge, parse_fixed_start, FileConfig, Overrides, PolicyArg, Settings};

#[derive(Parser)]
#[command(
    name = "ldist",
    version,
    about = "Logic-distillation pursuit-game testbed"
)]
struct Cli {
    /// TOML settings file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one episode and print it step by step.
    Run(RunArgs),
    /// Play many seeded episodes and report outcome rates.
    Tournament(TournamentArgs),
    /// Re-run a recorded trace and check it reproduces.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Write trajectory and visit-count CSV files for a trace.
    PlotData {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the entropy bound of choosing among K functions with that of
    /// generating one of M tokens.
    Entropy {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 100_000)]
        m: usize,
        /// Comma-separated probabilities to evaluate as well.
        #[arg(long)]
        dist: Option<String>,
    },
    /// Print the shipped function base, or validate a base file.
    Base {
        /// Validate this JSONL file instead of printing the shipped base.
        #[arg(long)]
        validate: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// oracle | noisy:EPS | kd[:absolute|:displacement] | illegal | remote:URL
    #[arg(long)]
    policy: Option<PolicyArg>,
    /// Arm the restricted-area emergency (places the centred 5x5 area if the
    /// board has none).
    #[arg(long)]
    emergency: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Start positions as x,y pairs: pursuers first, evader last.
    #[arg(long, allow_hyphen_values = true)]
    fixed_start: Option<String>,
    /// Write the episode trace (JSONL) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TournamentArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    episodes: Option<usize>,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every episode trace under OUT/traces.
    #[arg(long)]
    traces: bool,
}

fn settings(
    config: Option<&Path>,
    common: &CommonArgs,
    episodes: Option<usize>,
    out: Option<PathBuf>,
    traces: bool,
) -> Result<Settings> {
    let file = FileConfig::load(config)?;
    Ok(merge(
        file,
        Overrides {
            seed: common.seed,
            episodes,
            emergency: common.emergency,
            out,
            traces,
            policy: common.policy.clone().map(|p| p.0),
        },
    ))
}

fn tournament_config(s: &Settings) -> TournamentConfig {
    TournamentConfig {
        episodes: s.episodes,
        seed: s.seed,
        policy: s.policy.clone(),
        board: s.board,
        emergency: s.emergency,
        retrieval: s.retrieval.clone(),
        out_dir: s.out.clone(),
        write_traces: s.traces,
    }
}

fn planner(s: &Settings) -> Result<Planner> {
    Ok(Planner::new(
        Arc::new(build_default_base()),
        s.retrieval.clone(),
    )?)
}

fn cmd_run(config: Option<&Path>, args: RunArgs) -> Result<()> {
    let s = settings(config, &args.common, Some(1), None, false)?;
    let mut task = tournament_config(&s).task();
    if let Some(text) = &args.fixed_start {
        let (pursuers, evader) = parse_fixed_start(text, task.board.pursuer_count)?;
        task = task.with_fixed_start(pursuers, evader);
    }
    let trace = planner(&s)?.run_episode(&task, &s.policy, s.seed)?;
    print_trace(&trace);
    if let Some(out) = &args.out {
        write_file(out, &trace.to_jsonl())?;
        println!("trace written to {}", out.display());
    }
    Ok(())
}

fn print_trace(trace: &EpisodeTrace) {
    println!(
        "policy {}  seed {}",
        trace.header.policy.label(),
        trace.header.seed
    );
    println!("start    {}", trace.header.start.render());
    for step in &trace.steps {
        let mut line = String::new();
        for (i, p) in step.pursuers_before.iter().enumerate() {
            line.push_str(&format!("p{i} {p} "));
        }
        line.push_str(&format!("e {}", step.evader_before));
        let selected: Vec<&str> = step.stages.iter().map(|r| r.selected.as_str()).collect();
        if !selected.is_empty() {
            line.push_str(&format!("  [{}]", selected.join(" > ")));
        }
        for e in &step.events {
            line.push_str(&format!("  {}", describe(e)));
        }
        println!("step {:>3} {line}", step.index);
    }
    println!("final    {}", trace.final_state.render());
    println!(
        "outcome  {:?} after {} steps",
        trace.outcome.kind, trace.outcome.steps
    );
}

fn describe(e: &StepEvent) -> String {
    match e {
        StepEvent::EmergencyInjected { function, .. } => format!("injected {function}"),
        StepEvent::SelectionFault { stage, message } => {
            format!("fault at stage {stage}: {message}")
        }
        StepEvent::Stalled { pursuer } => format!("p{pursuer} stalled"),
        StepEvent::Violation { pursuer, target } => format!("p{pursuer} illegal move to {target}"),
        StepEvent::EvaderStuck => "evader stuck".into(),
    }
}

fn cmd_tournament(config: Option<&Path>, args: TournamentArgs) -> Result<()> {
    let s = settings(config, &args.common, args.episodes, args.out, args.traces)?;
    let cfg = tournament_config(&s);
    let (report, _) = run_tournament_with(&planner(&s)?, &cfg)?;
    print!("{}", report.table());
    if let Some(dir) = &cfg.out_dir {
        println!("report written to {}", dir.display());
    }
    Ok(())
}

fn read_trace(path: &Path) -> Result<EpisodeTrace> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading trace {}", path.display()))?;
    EpisodeTrace::from_jsonl(&text).with_context(|| format!("parsing trace {}", path.display()))
}

fn cmd_replay(path: &Path) -> Result<()> {
    let recorded = read_trace(path)?;
    let h = &recorded.header;
    let planner = Planner::new(Arc::new(build_default_base()), h.retrieval.clone())?;
    let replayed = planner.run_episode(&h.task, &h.policy, h.seed)?;
    if replayed.outcome != recorded.outcome {
        bail!(
            "replay diverged: recorded {:?} after {} steps, replayed {:?} after {} steps",
            recorded.outcome.kind,
            recorded.outcome.steps,
            replayed.outcome.kind,
            replayed.outcome.steps
        );
    }
    let identical = replayed == recorded;
    println!(
        "reproduced {:?} after {} steps ({})",
        replayed.outcome.kind,
        replayed.outcome.steps,
        if identical {
            "trace identical"
        } else {
            "trace differs in detail"
        }
    );
    Ok(())
}

fn cmd_plot_data(trace: &Path, out: &Path) -> Result<()> {
    let files = emit_trajectories(&read_trace(trace)?, out)?;
    println!("{}", files.positions.display());
    println!("{}", files.visits.display());
    Ok(())
}

fn cmd_entropy(k: usize, m: usize, dist: Option<&str>) -> Result<()> {
    let hk = max_entropy(k)?;
    let hm = max_entropy(m)?;
    println!("selection bound  ln {k} = {hk:.6}");
    println!("generation bound ln {m} = {hm:.6}");
    println!("ratio {:.4}", if hm > 0.0 { hk / hm } else { f64::NAN });
    if let Some(d) = dist {
        let probs = d
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad probability `{t}`"))
            })
            .collect::<Result<Vec<_>>>()?;
        let h = empirical_entropy(&probs)?;
        println!(
            "entropy of given distribution {h:.6} (bound ln {} = {:.6})",
            probs.len(),
            max_entropy(probs.len())?
        );
    }
    Ok(())
}

fn cmd_base(validate: Option<&Path>) -> Result<()> {
    match validate {
        None => {
            FunctionBase::from_jsonl(DEFAULT_BASE_JSONL)?;
            print!("{DEFAULT_BASE_JSONL}");
        }
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let base = FunctionBase::from_jsonl(&text)
                .with_context(|| format!("validating {}", path.display()))?;
            println!("{} functions, all valid", base.len());
            for f in base.entries() {
                println!("  {:<24} stage {}", f.name, f.stage_tag);
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Run(args) => cmd_run(config, args),
        Command::Tournament(args) => cmd_tournament(config, args),
        Command::Replay { trace } => cmd_replay(&trace),
        Command::PlotData { trace, out } => cmd_plot_data(&trace, &out),
        Command::Entropy { k, m, dist } => cmd_entropy(k, m, dist.as_deref()),
        Command::Base { validate } => cmd_base(validate.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
