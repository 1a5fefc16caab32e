//! Who picks the function at each stage, or, for the baselines, who picks
//! the moves outright.
//!
//! [`SelectorPolicy`] implementations choose one name from the retrieved
//! candidates. [`MoveProposer`] implementations skip the function pipeline and
//! propose final pursuer moves directly; the memorising baseline
//! ([`KdMimic`]) is one of them.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_base::{FunctionSpec, ManualEntry, StageTag, TaskContext};
use crate::grid::{manhattan_distance, GameState, GridPoint};
use crate::planner::EpisodeTrace;
use crate::retriever::{RankedCandidates, RetrievalQuery};

/// Bearer token for remote selectors and embedders.
pub const TOKEN_ENV: &str = "LDIST_REMOTE_TOKEN";

/// Default number of oracle episodes the memorising baseline is built from.
pub const KD_TRAINING_STARTS: usize = 221;

/// Policy parameters as they appear in configs and trace headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Deterministic stage-matching selector.
    Oracle,
    /// Oracle with probability `1 - epsilon`, otherwise a uniformly random
    /// wrong candidate.
    Noisy { epsilon: f64 },
    /// Replays moves memorised from oracle episodes.
    KdMimic {
        #[serde(default = "default_training_starts")]
        training_starts: usize,
        #[serde(default)]
        training_seed: u64,
        #[serde(default)]
        encoding: MoveEncoding,
    },
    /// Proposes an off-board cell for every pursuer, every step.
    Illegal,
    /// Delegates selection to an HTTP endpoint.
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_training_starts() -> usize {
    KD_TRAINING_STARTS
}

fn default_timeout_ms() -> u64 {
    5_000
}

fn default_retries() -> u32 {
    1
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PolicySpec::Noisy { epsilon } if !(0.0..=1.0).contains(epsilon) => Err(
                Error::InvalidPolicy(format!("epsilon must lie in [0, 1], got {epsilon}")),
            ),
            PolicySpec::KdMimic {
                training_starts: 0, ..
            } => Err(Error::InvalidPolicy("training_starts must be >= 1".into())),
            PolicySpec::Remote { endpoint, .. } if endpoint.is_empty() => {
                Err(Error::InvalidPolicy("remote endpoint is empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short label for reports.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Oracle => "oracle".into(),
            PolicySpec::Noisy { epsilon } => format!("noisy(eps={epsilon})"),
            PolicySpec::KdMimic {
                training_starts, ..
            } => format!("kd-mimic(starts={training_starts})"),
            PolicySpec::Illegal => "illegal".into(),
            PolicySpec::Remote { endpoint, .. } => format!("remote({endpoint})"),
        }
    }
}

/// Everything a selector may look at for one stage.
pub struct SelectionRequest<'a> {
    pub query: &'a RetrievalQuery,
    pub candidates: &'a RankedCandidates,
    /// Specs for `candidates`, in the same order.
    pub specs: &'a [&'a FunctionSpec],
    pub context: &'a TaskContext,
    pub stage: StageTag,
}

pub trait SelectorPolicy: Send {
    /// Returns one candidate name. The planner rejects names outside the
    /// candidate list.
    fn select(&mut self, req: &SelectionRequest<'_>) -> Result<String>;
}

/// Picks the unique candidate whose stage tag matches the current stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSelector;

pub fn oracle_select(req: &SelectionRequest<'_>) -> Result<String> {
    if req.specs.is_empty() {
        return Err(Error::NoCandidates);
    }
    req.specs
        .iter()
        .find(|s| s.stage_tag == req.stage)
        .map(|s| s.name.clone())
        .ok_or_else(|| Error::NoStageMatch(req.stage.to_string()))
}

impl SelectorPolicy for OracleSelector {
    fn select(&mut self, req: &SelectionRequest<'_>) -> Result<String> {
        oracle_select(req)
    }
}

#[derive(Debug, Clone)]
pub struct NoisySelector {
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl NoisySelector {
    pub fn new(epsilon: f64, rng: ChaCha8Rng) -> Result<Self> {
        PolicySpec::Noisy { epsilon }.validate()?;
        Ok(Self { epsilon, rng })
    }
}

impl SelectorPolicy for NoisySelector {
    fn select(&mut self, req: &SelectionRequest<'_>) -> Result<String> {
        let oracle = oracle_select(req)?;
        let others: Vec<&str> = req.candidates.names().filter(|n| *n != oracle).collect();
        if others.is_empty() || !self.rng.gen_bool(self.epsilon) {
            return Ok(oracle);
        }
        Ok(others.choose(&mut self.rng).expect("non-empty").to_string())
    }
}

/// Wire request for remote selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectWireRequest {
    pub instructions: String,
    pub state: String,
    pub stage: StageTag,
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub name: String,
    pub score: f64,
    pub stage_tag: StageTag,
    pub manual: ManualEntry,
}

/// Wire response: exactly one candidate name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectWireResponse {
    pub name: String,
}

impl SelectWireRequest {
    pub fn from_request(req: &SelectionRequest<'_>) -> Self {
        Self {
            instructions: req.query.instructions.clone(),
            state: req.query.state_summary.clone(),
            stage: req.stage,
            candidates: req
                .candidates
                .items
                .iter()
                .zip(req.specs)
                .map(|(c, s)| WireCandidate {
                    name: c.name.clone(),
                    score: c.score,
                    stage_tag: s.stage_tag,
                    manual: s.manual.clone(),
                })
                .collect(),
        }
    }
}

/// Moves a request to a remote model and returns the raw response body.
pub trait SelectionTransport: Send {
    fn send(&mut self, request: &SelectWireRequest) -> Result<String>;
}

/// `POST` JSON over HTTP, with an optional bearer token from [`TOKEN_ENV`].
pub struct HttpTransport {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: std::env::var(TOKEN_ENV).ok(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl SelectionTransport for HttpTransport {
    fn send(&mut self, request: &SelectWireRequest) -> Result<String> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        req.send_json(request)
            .map_err(|e| Error::Remote(e.to_string()))?
            .into_string()
            .map_err(|e| Error::Remote(e.to_string()))
    }
}

/// Asks a remote model for each selection. Transport errors, malformed
/// bodies and out-of-set names are retried `retries` times before the
/// failure is returned to the planner as a selection fault.
pub struct RemoteSelector {
    transport: Box<dyn SelectionTransport>,
    retries: u32,
}

impl RemoteSelector {
    pub fn new(transport: Box<dyn SelectionTransport>, retries: u32) -> Self {
        Self { transport, retries }
    }

    pub fn http(endpoint: &str, timeout: Duration, retries: u32) -> Self {
        Self::new(Box::new(HttpTransport::new(endpoint, timeout)), retries)
    }

    fn attempt(
        &mut self,
        wire: &SelectWireRequest,
        candidates: &RankedCandidates,
    ) -> Result<String> {
        let body = self.transport.send(wire)?;
        let resp: SelectWireResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Remote(format!("malformed reply: {e}")))?;
        if !candidates.contains(&resp.name) {
            return Err(Error::SelectionOutsideCandidates(resp.name));
        }
        Ok(resp.name)
    }
}

impl SelectorPolicy for RemoteSelector {
    fn select(&mut self, req: &SelectionRequest<'_>) -> Result<String> {
        let wire = SelectWireRequest::from_request(req);
        let mut last = Error::NoCandidates;
        for _ in 0..=self.retries {
            match self.attempt(&wire, req.candidates) {
                Ok(name) => return Ok(name),
                Err(e) => {
                    log::warn!("remote selection failed: {e}");
                    last = e;
                }
            }
        }
        Err(last)
    }
}

/// Proposes final pursuer moves without going through the function base.
pub trait MoveProposer: Send {
    fn propose(&mut self, state: &GameState) -> Vec<GridPoint>;
}

/// Every pursuer asks for `(-1, -1)`, which is never on the board.
#[derive(Debug, Clone, Copy, Default)]
pub struct IllegalProposer;

impl MoveProposer for IllegalProposer {
    fn propose(&mut self, state: &GameState) -> Vec<GridPoint> {
        vec![GridPoint::new(-1, -1); state.pursuers.len()]
    }
}

/// How memorised moves are stored and replayed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveEncoding {
    /// Target cells exactly as the teacher chose them.
    Absolute,
    /// Per-pursuer offset from the teacher's position ("one left, one up"),
    /// re-applied to the current position.
    #[default]
    Displacement,
}

/// Positions-only key: two states with the same agents in the same cells
/// share a key regardless of step or violation counters.
pub fn state_key(pursuers: &[GridPoint], evader: GridPoint) -> String {
    let ps: Vec<String> = pursuers.iter().map(ToString::to_string).collect();
    format!("p {} e {}", ps.join(" "), evader)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub key: String,
    pub pursuers: Vec<GridPoint>,
    pub evader: GridPoint,
    pub moves: Vec<GridPoint>,
}

/// State → move memory built from teacher traces. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorizedCorpus {
    records: Vec<MemoryRecord>,
    index: HashMap<String, usize>,
}

impl MemorizedCorpus {
    /// Keeps the first occurrence of every state key.
    pub fn new(records: impl IntoIterator<Item = MemoryRecord>) -> Self {
        let mut kept = Vec::new();
        let mut index = HashMap::new();
        for r in records {
            if !index.contains_key(&r.key) {
                index.insert(r.key.clone(), kept.len());
                kept.push(r);
            }
        }
        Self {
            records: kept,
            index,
        }
    }

    /// One record per step in which every pursuer proposed a move.
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a EpisodeTrace>) -> Self {
        Self::new(traces.into_iter().flat_map(|t| {
            t.steps.iter().filter_map(|step| {
                let moves = step.proposed_moves()?;
                Some(MemoryRecord {
                    key: state_key(&step.pursuers_before, step.evader_before),
                    pursuers: step.pursuers_before.clone(),
                    evader: step.evader_before,
                    moves,
                })
            })
        }))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    /// Exact key match, else the record with the smallest summed per-agent
    /// Manhattan distance (ties by key).
    pub fn lookup(&self, state: &GameState) -> Option<&MemoryRecord> {
        let key = state_key(&state.pursuers, state.evader);
        if let Some(&i) = self.index.get(&key) {
            return Some(&self.records[i]);
        }
        self.records.iter().min_by(|a, b| {
            state_distance(a, state)
                .cmp(&state_distance(b, state))
                .then_with(|| a.key.cmp(&b.key))
        })
    }
}

fn state_distance(r: &MemoryRecord, state: &GameState) -> u32 {
    let pursuers: u32 = r
        .pursuers
        .iter()
        .zip(&state.pursuers)
        .map(|(a, b)| manhattan_distance(*a, *b))
        .sum();
    pursuers + manhattan_distance(r.evader, state.evader)
}

pub fn kd_mimic_select_moves(
    state: &GameState,
    corpus: &MemorizedCorpus,
    encoding: MoveEncoding,
) -> Vec<GridPoint> {
    let Some(record) = corpus.lookup(state) else {
        return state.pursuers.clone();
    };
    match encoding {
        MoveEncoding::Absolute => record.moves.clone(),
        MoveEncoding::Displacement => record
            .moves
            .iter()
            .zip(&record.pursuers)
            .zip(&state.pursuers)
            .map(|((to, from), now)| GridPoint::new(now.x + to.x - from.x, now.y + to.y - from.y))
            .collect(),
    }
}

/// Knowledge-distillation stand-in: imitates the teacher's outputs, not its
/// logic.
#[derive(Debug, Clone)]
pub struct KdMimic {
    corpus: Arc<MemorizedCorpus>,
    encoding: MoveEncoding,
}

impl KdMimic {
    pub fn new(corpus: Arc<MemorizedCorpus>, encoding: MoveEncoding) -> Self {
        Self { corpus, encoding }
    }
}

impl MoveProposer for KdMimic {
    fn propose(&mut self, state: &GameState) -> Vec<GridPoint> {
        kd_mimic_select_moves(state, &self.corpus, self.encoding)
    }
}
