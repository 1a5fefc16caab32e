//! Settings file and flag merging. Flags win over the file; the file wins
//! over built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use ldist_core::planner::RetrievalConfig;
use ldist_core::{BoardConfig, GridPoint, MoveEncoding, PolicySpec};
use serde::Deserialize;

pub const DEFAULT_EPISODES: usize = 200;

/// Everything a settings file may set. All keys are optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub emergency: Option<bool>,
    pub out: Option<PathBuf>,
    pub traces: Option<bool>,
    pub policy: Option<PolicySpec>,
    pub board: Option<BoardConfig>,
    pub retrieval: Option<RetrievalConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Settings after merging flags over the file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub episodes: usize,
    pub emergency: bool,
    pub out: Option<PathBuf>,
    pub traces: bool,
    pub policy: PolicySpec,
    pub board: BoardConfig,
    pub retrieval: RetrievalConfig,
}

/// Flags shared by `run` and `tournament`; `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub emergency: bool,
    pub out: Option<PathBuf>,
    pub traces: bool,
    pub policy: Option<PolicySpec>,
}

pub fn merge(file: FileConfig, flags: Overrides) -> Settings {
    Settings {
        seed: flags.seed.or(file.seed).unwrap_or(0),
        episodes: flags.episodes.or(file.episodes).unwrap_or(DEFAULT_EPISODES),
        // a switch can only turn the option on
        emergency: flags.emergency || file.emergency.unwrap_or(false),
        out: flags.out.or(file.out),
        traces: flags.traces || file.traces.unwrap_or(false),
        policy: flags.policy.or(file.policy).unwrap_or(PolicySpec::Oracle),
        board: file.board.unwrap_or_default(),
        retrieval: file.retrieval.unwrap_or_default(),
    }
}

/// Policy flag syntax: `oracle`, `noisy:EPS`, `kd`, `kd:absolute`,
/// `kd:displacement`, `illegal`, `remote:URL`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArg(pub PolicySpec);

impl FromStr for PolicyArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let kd = |encoding| PolicySpec::KdMimic {
            training_starts: ldist_core::policies::KD_TRAINING_STARTS,
            training_seed: 0,
            encoding,
        };
        let spec = match (kind, arg) {
            ("oracle", None) => PolicySpec::Oracle,
            ("illegal", None) => PolicySpec::Illegal,
            ("noisy", Some(eps)) => PolicySpec::Noisy {
                epsilon: eps.parse().map_err(|_| format!("bad epsilon `{eps}`"))?,
            },
            ("kd", None) | ("kd", Some("displacement")) => kd(MoveEncoding::Displacement),
            ("kd", Some("absolute")) => kd(MoveEncoding::Absolute),
            ("remote", Some(url)) if !url.is_empty() => PolicySpec::Remote {
                endpoint: url.to_string(),
                timeout_ms: 5_000,
                retries: 1,
            },
            _ => {
                return Err(format!(
                    "unknown policy `{s}` (expected oracle, noisy:EPS, kd[:absolute|:displacement], illegal or remote:URL)"
                ))
            }
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(Self(spec))
    }
}

/// `x,y` pairs, pursuers first and the evader last.
pub fn parse_fixed_start(text: &str, pursuer_count: usize) -> Result<(Vec<GridPoint>, GridPoint)> {
    let nums = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<i32>()
                .with_context(|| format!("bad coordinate `{t}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = 2 * (pursuer_count + 1);
    if nums.len() != expected {
        bail!(
            "--fixed-start needs {expected} numbers ({pursuer_count} pursuers then the evader), got {}",
            nums.len()
        );
    }
    let mut points: Vec<GridPoint> = nums.chunks(2).map(|c| GridPoint::new(c[0], c[1])).collect();
    let evader = points.pop().expect("non-empty");
    Ok((points, evader))
}
