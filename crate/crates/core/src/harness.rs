//! Tournament runner, metrics and plot-data emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoardConfig, GridPoint, OutcomeKind, Rect, RESTRICTED_AREA_SIZE};
use crate::planner::{derive_seed, EpisodeTrace, Planner, RetrievalConfig, TaskSpec};
use crate::policies::PolicySpec;

/// Salt for evaluation-episode seeds.
pub const EPISODE_SALT: u64 = 0x0065_7069_736f_6465;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TournamentConfig {
    pub episodes: usize,
    pub seed: u64,
    pub policy: PolicySpec,
    #[serde(default)]
    pub board: BoardConfig,
    /// Arms the restricted-area trigger and, if the board has no area,
    /// places the default centred one.
    #[serde(default)]
    pub emergency: bool,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    /// Where reports (and traces, when `write_traces` is set) go.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub write_traces: bool,
}

impl TournamentConfig {
    pub fn new(episodes: usize, seed: u64, policy: PolicySpec) -> Self {
        Self {
            episodes,
            seed,
            policy,
            board: BoardConfig::default(),
            emergency: false,
            retrieval: RetrievalConfig::default(),
            out_dir: None,
            write_traces: false,
        }
    }

    pub fn with_emergency(mut self, on: bool) -> Self {
        self.emergency = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(Error::InvalidTask("episodes must be >= 1".into()));
        }
        self.board.validate()?;
        self.policy.validate()
    }

    /// The task every episode plays.
    pub fn task(&self) -> TaskSpec {
        let mut board = self.board;
        if self.emergency && board.restricted_area.is_none() {
            board.restricted_area = Some(Rect::centered(
                board.width,
                board.height,
                RESTRICTED_AREA_SIZE,
            ));
        }
        TaskSpec::pursuit(board, self.emergency)
    }

    pub fn episode_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, EPISODE_SALT, index as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub index: usize,
    pub seed: u64,
    pub outcome: OutcomeKind,
    pub steps: u32,
    pub violations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: TournamentConfig,
    pub episodes: usize,
    pub successes: usize,
    pub failures_no_violation: usize,
    pub failures_with_violation: usize,
    pub success_rate: f64,
    pub failure_no_violation_rate: f64,
    pub failure_with_violation_rate: f64,
    /// Mean steps over successful episodes; `None` when there were none.
    pub avg_steps_of_success: Option<f64>,
    pub outcomes: Vec<EpisodeSummary>,
}

impl MetricsReport {
    /// Folds summaries in episode-index order.
    pub fn from_summaries(config: TournamentConfig, mut outcomes: Vec<EpisodeSummary>) -> Self {
        outcomes.sort_by_key(|o| o.index);
        let count = |k: OutcomeKind| outcomes.iter().filter(|o| o.outcome == k).count();
        let successes = count(OutcomeKind::Success);
        let failures_no_violation = count(OutcomeKind::FailureNoViolation);
        let failures_with_violation = count(OutcomeKind::FailureWithViolation);
        let n = outcomes.len();
        let rate = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        let avg_steps_of_success = (successes > 0).then(|| {
            let total: u64 = outcomes
                .iter()
                .filter(|o| o.outcome == OutcomeKind::Success)
                .map(|o| u64::from(o.steps))
                .sum();
            total as f64 / successes as f64
        });
        Self {
            config,
            episodes: n,
            successes,
            failures_no_violation,
            failures_with_violation,
            success_rate: rate(successes),
            failure_no_violation_rate: rate(failures_no_violation),
            failure_with_violation_rate: rate(failures_with_violation),
            avg_steps_of_success,
            outcomes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let avg = self
            .avg_steps_of_success
            .map_or_else(|| "n/a".to_string(), |a| format!("{a:.2}"));
        let _ = writeln!(
            s,
            "policy: {}  episodes: {}  seed: {}  emergency: {}",
            self.config.policy.label(),
            self.episodes,
            self.config.seed,
            if self.config.emergency { "on" } else { "off" }
        );
        let _ = writeln!(
            s,
            "| Success | Failure w/o violation | Failure with violation | Avg steps of success |"
        );
        let _ = writeln!(
            s,
            "|---------|-----------------------|------------------------|----------------------|"
        );
        let _ = writeln!(
            s,
            "| {:>6.2}% | {:>20.2}% | {:>21.2}% | {:>20} |",
            self.success_rate * 100.0,
            self.failure_no_violation_rate * 100.0,
            self.failure_with_violation_rate * 100.0,
            avg
        );
        s
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json())?;
        fs::write(dir.join("report.txt"), self.table())?;
        Ok(())
    }
}

fn summarize(index: usize, trace: &EpisodeTrace) -> EpisodeSummary {
    EpisodeSummary {
        index,
        seed: trace.header.seed,
        outcome: trace.outcome.kind,
        steps: trace.outcome.steps,
        violations: trace.final_state.violation_count,
    }
}

/// Runs every episode (in parallel) and returns the report with all traces
/// in episode order.
pub fn run_tournament_with(
    planner: &Planner,
    cfg: &TournamentConfig,
) -> Result<(MetricsReport, Vec<EpisodeTrace>)> {
    cfg.validate()?;
    let task = cfg.task();
    // build shared state such as the baseline corpus once, up front
    planner.controller(&cfg.policy, &task.board, cfg.seed)?;
    let traces = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| planner.run_episode(&task, &cfg.policy, cfg.episode_seed(i)))
        .collect::<Result<Vec<_>>>()?;
    let summaries = traces
        .iter()
        .enumerate()
        .map(|(i, t)| summarize(i, t))
        .collect();
    // where the report is written is not part of what it reports
    let provenance = TournamentConfig {
        out_dir: None,
        ..cfg.clone()
    };
    let report = MetricsReport::from_summaries(provenance, summaries);
    if let Some(dir) = &cfg.out_dir {
        report.write(dir)?;
        if cfg.write_traces {
            let trace_dir = dir.join("traces");
            fs::create_dir_all(&trace_dir)?;
            for (i, t) in traces.iter().enumerate() {
                fs::write(
                    trace_dir.join(format!("episode_{i:04}.jsonl")),
                    t.to_jsonl(),
                )?;
            }
        }
    }
    Ok((report, traces))
}

pub fn run_tournament(cfg: &TournamentConfig) -> Result<MetricsReport> {
    let planner = Planner::new(
        std::sync::Arc::new(crate::function_base::build_default_base()),
        cfg.retrieval.clone(),
    )?;
    Ok(run_tournament_with(&planner, cfg)?.0)
}

/// Plot-data files written for one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryFiles {
    pub positions: PathBuf,
    pub visits: PathBuf,
}

fn agent_label(i: usize, pursuers: usize) -> String {
    if i < pursuers {
        format!("pursuer-{i}")
    } else {
        "evader".to_string()
    }
}

/// `step,agent,x,y` rows, one per agent per recorded position.
pub fn trajectory_csv(trace: &EpisodeTrace) -> String {
    let n = trace.header.start.pursuers.len();
    let mut s = String::from("step,agent,x,y\n");
    for (step, frame) in trace.positions().iter().enumerate() {
        for (i, p) in frame.iter().enumerate() {
            let _ = writeln!(s, "{step},{},{},{}", agent_label(i, n), p.x, p.y);
        }
    }
    s
}

/// `agent,x,y,count` rows: how often each agent was seen in each cell.
pub fn visit_counts_csv(trace: &EpisodeTrace) -> String {
    let n = trace.header.start.pursuers.len();
    let mut counts: BTreeMap<(usize, GridPoint), usize> = BTreeMap::new();
    for frame in trace.positions() {
        for (i, p) in frame.into_iter().enumerate() {
            *counts.entry((i, p)).or_default() += 1;
        }
    }
    let mut s = String::from("agent,x,y,count\n");
    for ((i, p), c) in counts {
        let _ = writeln!(s, "{},{},{},{c}", agent_label(i, n), p.x, p.y);
    }
    s
}

pub fn emit_trajectories(trace: &EpisodeTrace, dir: &Path) -> Result<TrajectoryFiles> {
    fs::create_dir_all(dir)?;
    let files = TrajectoryFiles {
        positions: dir.join("trajectory.csv"),
        visits: dir.join("visits.csv"),
    };
    fs::write(&files.positions, trajectory_csv(trace))?;
    fs::write(&files.visits, visit_counts_csv(trace))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_for(policy: PolicySpec, episodes: usize) -> MetricsReport {
        run_tournament(&TournamentConfig::new(episodes, 7, policy)).unwrap()
    }

    #[test]
    fn illegal_policy_always_fails_with_violation() {
        let r = report_for(PolicySpec::Illegal, 12);
        assert_eq!(r.failure_with_violation_rate, 1.0);
        assert_eq!(r.avg_steps_of_success, None);
        assert!(r.table().contains("n/a"));
    }

    #[test]
    fn single_episode_rates_are_binary() {
        let r = report_for(PolicySpec::Noisy { epsilon: 0.5 }, 1);
        for rate in [
            r.success_rate,
            r.failure_no_violation_rate,
            r.failure_with_violation_rate,
        ] {
            assert!(rate == 0.0 || rate == 1.0);
        }
    }

    #[test]
    fn rates_partition_episodes() {
        let r = report_for(PolicySpec::Noisy { epsilon: 0.6 }, 30);
        assert_eq!(
            r.successes + r.failures_no_violation + r.failures_with_violation,
            30
        );
        let total = r.success_rate + r.failure_no_violation_rate + r.failure_with_violation_rate;
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = report_for(PolicySpec::Noisy { epsilon: 0.3 }, 16);
        let b = report_for(PolicySpec::Noisy { epsilon: 0.3 }, 16);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn visit_counts_conserve_positions() {
        let planner = Planner::with_defaults();
        let task = TaskSpec::pursuit(BoardConfig::default(), false);
        let trace = planner.run_episode(&task, &PolicySpec::Oracle, 3).unwrap();
        let csv = visit_counts_csv(&trace);
        let mut per_agent: BTreeMap<String, usize> = BTreeMap::new();
        for line in csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            *per_agent.entry(cols[0].to_string()).or_default() += cols[3].parse::<usize>().unwrap();
        }
        assert_eq!(per_agent.len(), 4);
        assert!(per_agent.values().all(|c| *c == trace.steps.len() + 1));
    }

    #[test]
    fn trajectory_has_one_row_per_agent_per_frame() {
        let planner = Planner::with_defaults();
        let task = TaskSpec::pursuit(BoardConfig::default(), false).with_fixed_start(
            vec![
                GridPoint::new(10, 7),
                GridPoint::new(10, 13),
                GridPoint::new(7, 10),
            ],
            GridPoint::new(10, 10),
        );
        let trace = planner.run_episode(&task, &PolicySpec::Oracle, 0).unwrap();
        let csv = trajectory_csv(&trace);
        assert_eq!(csv.lines().count(), 1 + (trace.steps.len() + 1) * 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,pursuer-0,10,7"));
    }

    #[test]
    fn emitted_files_are_reproducible() {
        let planner = Planner::with_defaults();
        let task = TaskSpec::pursuit(BoardConfig::default(), false);
        let trace = planner.run_episode(&task, &PolicySpec::Oracle, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = emit_trajectories(&trace, &dir.path().join("a")).unwrap();
        let replayed = EpisodeTrace::from_jsonl(&trace.to_jsonl()).unwrap();
        let b = emit_trajectories(&replayed, &dir.path().join("b")).unwrap();
        assert_eq!(
            fs::read(&a.positions).unwrap(),
            fs::read(&b.positions).unwrap()
        );
        assert_eq!(fs::read(&a.visits).unwrap(), fs::read(&b.visits).unwrap());
    }

    #[test]
    fn zero_episodes_rejected() {
        assert!(run_tournament(&TournamentConfig::new(0, 1, PolicySpec::Oracle)).is_err());
    }
}
