//! Stage-wise executor.
//!
//! A step runs the task's stage plan in order. At each stage the retriever
//! proposes candidates, a [`SelectorPolicy`] picks one, and the picked
//! function maps the previous stage's value to the next. The last stage
//! yields the pursuers' moves; the evader then answers and capture is
//! checked. Emergency triggers add functions to an episode-local overlay
//! without touching the shared [`FunctionBase`].
//!
//! Baseline controllers that bypass the function base ([`MoveProposer`]s)
//! run through the same step loop so all traces share one format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::function_base::{
    build_default_base, restricted_filter_spec, FunctionBase, FunctionSpec, StageFn, StageTag,
    StageValue, TaskContext, VariantKind,
};
use crate::grid::{
    evader_policy_greedy, Agent, BoardConfig, GameOutcome, GameState, GridPoint, MoveVerdict,
};
use crate::policies::{
    IllegalProposer, KdMimic, MemorizedCorpus, MoveProposer, NoisySelector, OracleSelector,
    PolicySpec, RemoteSelector, SelectionRequest, SelectorPolicy,
};
use crate::retriever::{
    rank_order, Candidate, Embedder, HashingEmbedder, RankedCandidates, RemoteEmbedder,
    RetrievalQuery, Retriever, DEFAULT_DIMENSION, DEFAULT_K,
};

pub const DEFAULT_INSTRUCTIONS: &str = "Three pursuers chase one evader on a 21x21 grid. Each step every pursuer \
moves at most two units of Manhattan distance and the evader moves at most one. The pursuers win when all three are \
less than 2 units from the evader. More than seven illegal choices, or 100 steps without a capture, lose the game.";

/// Canned per-stage queries shipped with the default stage plan.
pub const STAGE_QUERIES: [(u32, &str); 3] = [
    (10, "compute the distance from every pursuer to the evader"),
    (20, "filter the valid moves each pursuer can legally make"),
    (30, "select the best move for each pursuer"),
];

pub const RESTRICTED_QUERY: &str = "remove restricted area cells from the candidate moves";
pub const RESTRICTED_TRIGGER: &str = "restricted_area";

const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDescriptor {
    pub stage: StageTag,
    /// Stage-specific instruction text used as the retrieval query.
    pub query: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCondition {
    /// The board has a restricted area.
    RestrictedArea,
}

impl TriggerCondition {
    pub fn holds(&self, state: &GameState) -> bool {
        match self {
            TriggerCondition::RestrictedArea => state.config.restricted_area.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmergencyTrigger {
    pub id: String,
    pub condition: TriggerCondition,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPositions {
    pub pursuers: Vec<GridPoint>,
    pub evader: GridPoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub instructions: String,
    pub board: BoardConfig,
    pub stage_plan: Vec<StageDescriptor>,
    #[serde(default)]
    pub emergency_triggers: Vec<EmergencyTrigger>,
    #[serde(default)]
    pub fixed_start: Option<StartPositions>,
}

impl TaskSpec {
    /// The three-stage pursuit plan. With `emergency` set, a restricted-area
    /// trigger is registered; it only fires when the board has an area.
    pub fn pursuit(board: BoardConfig, emergency: bool) -> Self {
        let stage_plan = STAGE_QUERIES
            .iter()
            .map(|(tenths, q)| StageDescriptor {
                stage: StageTag::from_tenths(*tenths),
                query: q.to_string(),
            })
            .collect();
        let emergency_triggers = if emergency {
            vec![EmergencyTrigger {
                id: RESTRICTED_TRIGGER.into(),
                condition: TriggerCondition::RestrictedArea,
                template: "filter_restricted_cells".into(),
            }]
        } else {
            Vec::new()
        };
        Self {
            instructions: DEFAULT_INSTRUCTIONS.into(),
            board,
            stage_plan,
            emergency_triggers,
            fixed_start: None,
        }
    }

    pub fn with_fixed_start(mut self, pursuers: Vec<GridPoint>, evader: GridPoint) -> Self {
        self.fixed_start = Some(StartPositions { pursuers, evader });
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.board.validate()?;
        if self.instructions.trim().is_empty() {
            return Err(Error::InvalidTask("instructions are empty".into()));
        }
        if self.stage_plan.is_empty() {
            return Err(Error::InvalidTask("stage plan is empty".into()));
        }
        if self.stage_plan.windows(2).any(|w| w[0].stage >= w[1].stage) {
            return Err(Error::InvalidTask(
                "stage plan must be strictly ordered".into(),
            ));
        }
        if self.stage_plan.iter().any(|s| s.query.trim().is_empty()) {
            return Err(Error::InvalidTask("stage query is empty".into()));
        }
        let mut ids = BTreeSet::new();
        for t in &self.emergency_triggers {
            if !ids.insert(&t.id) {
                return Err(Error::InvalidTask(format!("duplicate trigger `{}`", t.id)));
            }
        }
        Ok(())
    }

    /// Initial state: the fixed start if given, otherwise a seeded sample.
    pub fn initial_state(&self, seed: u64) -> Result<GameState> {
        match &self.fixed_start {
            Some(s) => GameState::new(self.board, s.pursuers.clone(), s.evader),
            None => GameState::sample(self.board, &mut start_rng(seed)),
        }
    }
}

fn start_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn policy_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th member of a family rooted at `base`. `salt`
/// separates families (evaluation episodes vs. training episodes).
pub fn derive_seed(base: u64, salt: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt ^ splitmix64(index)))
}

/// A function produced for an emergency, bound to its slot in the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct EmergencyFunction {
    pub spec: FunctionSpec,
    pub implementation: StageFn,
    pub stage: StageDescriptor,
}

/// Turns an emergency template into an executable function. The default
/// [`TemplateRegistry`] instantiates vetted templates; a model-backed
/// generator can be plugged in instead.
pub trait EmergencyGenerator: Send + Sync {
    fn generate(&self, template: &str, state: &GameState) -> Result<EmergencyFunction>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateRegistry;

impl EmergencyGenerator for TemplateRegistry {
    fn generate(&self, template: &str, state: &GameState) -> Result<EmergencyFunction> {
        match template {
            "filter_restricted_cells" => {
                let area = state.config.restricted_area.ok_or_else(|| {
                    Error::InvalidTask("restricted-area template needs an area".into())
                })?;
                let spec = restricted_filter_spec();
                Ok(EmergencyFunction {
                    stage: StageDescriptor {
                        stage: spec.stage_tag,
                        query: RESTRICTED_QUERY.into(),
                    },
                    implementation: StageFn::FilterRestrictedCells(Some(area)),
                    spec,
                })
            }
            other => Err(Error::UnknownTrigger(other.to_string())),
        }
    }
}

/// Episode-local functions added by emergencies. Shadows the base by name.
#[derive(Debug, Clone, Default)]
pub struct Overlay {
    functions: BTreeMap<String, EmergencyFunction>,
    fired: BTreeSet<String>,
}

impl Overlay {
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&EmergencyFunction> {
        self.functions.get(name)
    }

    pub fn has_fired(&self, trigger: &str) -> bool {
        self.fired.contains(trigger)
    }

    /// Base plan plus overlay stages, in stage order.
    pub fn stage_plan(&self, task: &TaskSpec) -> Vec<StageDescriptor> {
        let mut plan = task.stage_plan.clone();
        for f in self.functions.values() {
            if !plan.iter().any(|s| s.stage == f.stage.stage) {
                plan.push(f.stage.clone());
            }
        }
        plan.sort_by_key(|s| s.stage);
        plan
    }
}

/// Which embedder and K a planner was built with. Recorded in trace headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub embedder: EmbedderSpec,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            embedder: EmbedderSpec::Hashing {
                dimension: DEFAULT_DIMENSION,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    Hashing {
        dimension: usize,
    },
    Remote {
        endpoint: String,
        dimension: usize,
        timeout_ms: u64,
    },
}

impl EmbedderSpec {
    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderSpec::Hashing { dimension } => Box::new(HashingEmbedder::new(*dimension)),
            EmbedderSpec::Remote {
                endpoint,
                dimension,
                timeout_ms,
            } => Box::new(RemoteEmbedder::new(
                endpoint.clone(),
                *dimension,
                Duration::from_millis(*timeout_ms),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageTag,
    pub candidates: RankedCandidates,
    pub selected: String,
    pub input_digest: String,
    /// Absent when the selected function failed on its input.
    pub output_digest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PursuerAction {
    Moved {
        target: GridPoint,
        verdict: MoveVerdict,
    },
    /// No move was applied (no candidates, a selection fault, or the game
    /// ended earlier in the step).
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StepEvent {
    EmergencyInjected { trigger: String, function: String },
    SelectionFault { stage: StageTag, message: String },
    Stalled { pursuer: usize },
    Violation { pursuer: usize, target: GridPoint },
    EvaderStuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u32,
    pub pursuers_before: Vec<GridPoint>,
    pub evader_before: GridPoint,
    pub stages: Vec<StageRecord>,
    pub pursuer_actions: Vec<PursuerAction>,
    /// `None` when the game ended before the evader's turn.
    pub evader_move: Option<GridPoint>,
    pub events: Vec<StepEvent>,
}

impl StepRecord {
    /// Targets proposed for every pursuer, if none stalled.
    pub fn proposed_moves(&self) -> Option<Vec<GridPoint>> {
        self.pursuer_actions
            .iter()
            .map(|a| match a {
                PursuerAction::Moved { target, .. } => Some(*target),
                PursuerAction::Stalled => None,
            })
            .collect()
    }

    pub fn violations(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, StepEvent::Violation { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub seed: u64,
    pub task: TaskSpec,
    pub policy: PolicySpec,
    pub retrieval: RetrievalConfig,
    pub start: GameState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub outcome: GameOutcome,
    pub final_state: GameState,
}

#[allow(clippy::large_enum_variant)] // one value per line, short-lived
#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Step(StepRecord),
    Outcome {
        outcome: GameOutcome,
        final_state: GameState,
    },
}

impl EpisodeTrace {
    /// Header line, one line per step, then the outcome line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &TraceLine| {
            out.push_str(&serde_json::to_string(line).expect("trace serialises"));
            out.push('\n');
        };
        push(&TraceLine::Header(self.header.clone()));
        for step in &self.steps {
            push(&TraceLine::Step(step.clone()));
        }
        push(&TraceLine::Outcome {
            outcome: self.outcome,
            final_state: self.final_state.clone(),
        });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut end = None;
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let parsed: TraceLine = serde_json::from_str(line)
                .map_err(|e| Error::MalformedTrace(format!("line {}: {e}", n + 1)))?;
            match (parsed, &header, &end) {
                (TraceLine::Header(h), None, None) => header = Some(h),
                (TraceLine::Step(s), Some(_), None) => steps.push(s),
                (
                    TraceLine::Outcome {
                        outcome,
                        final_state,
                    },
                    Some(_),
                    None,
                ) => end = Some((outcome, final_state)),
                _ => {
                    return Err(Error::MalformedTrace(format!(
                        "line {}: record out of order",
                        n + 1
                    )))
                }
            }
        }
        let header = header.ok_or_else(|| Error::MalformedTrace("missing header".into()))?;
        let (outcome, final_state) =
            end.ok_or_else(|| Error::MalformedTrace("missing outcome".into()))?;
        Ok(Self {
            header,
            steps,
            outcome,
            final_state,
        })
    }

    /// Positions of every agent after each step, starting with the initial
    /// placement. Index `i < pursuers` is a pursuer, the last is the evader.
    pub fn positions(&self) -> Vec<Vec<GridPoint>> {
        let start = &self.header.start;
        let mut current: Vec<GridPoint> = start
            .pursuers
            .iter()
            .copied()
            .chain([start.evader])
            .collect();
        let mut out = vec![current.clone()];
        let n = start.pursuers.len();
        for step in &self.steps {
            for (i, action) in step.pursuer_actions.iter().enumerate() {
                if let PursuerAction::Moved {
                    target,
                    verdict: MoveVerdict::Legal,
                } = action
                {
                    current[i] = *target;
                }
            }
            if let Some(e) = step.evader_move {
                current[n] = e;
            }
            out.push(current.clone());
        }
        out
    }

    pub fn total_violations(&self) -> usize {
        self.steps.iter().map(StepRecord::violations).sum()
    }
}

/// Short content hash of a stage value.
pub fn digest(value: &StageValue) -> String {
    let bytes = serde_json::to_vec(value).expect("stage value serialises");
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Drives the pipeline for LD selectors, or hands the step to a proposer
/// for baselines.
pub enum Controller {
    Select(Box<dyn SelectorPolicy>),
    Propose(Box<dyn MoveProposer>),
}

type CorpusKey = (usize, u64, BoardConfig);

/// Shared, read-only planning machinery: base, retriever, emergency
/// generator. Episodes borrow it; nothing episode-specific lives here apart
/// from the memoised baseline corpora.
pub struct Planner {
    base: Arc<FunctionBase>,
    retriever: Retriever,
    retrieval: RetrievalConfig,
    generator: Box<dyn EmergencyGenerator>,
    corpora: Mutex<HashMap<CorpusKey, Arc<MemorizedCorpus>>>,
}

impl Planner {
    pub fn new(base: Arc<FunctionBase>, retrieval: RetrievalConfig) -> Result<Self> {
        let retriever = Retriever::new(&base, retrieval.embedder.build(), retrieval.k)?;
        Ok(Self {
            base,
            retriever,
            retrieval,
            generator: Box::new(TemplateRegistry),
            corpora: Mutex::new(HashMap::new()),
        })
    }

    /// Shipped base, hashing embedder, K = 5.
    pub fn with_defaults() -> Self {
        Self::new(Arc::new(build_default_base()), RetrievalConfig::default())
            .expect("default planner")
    }

    pub fn with_generator(mut self, generator: Box<dyn EmergencyGenerator>) -> Self {
        self.generator = generator;
        self
    }

    pub fn base(&self) -> &FunctionBase {
        &self.base
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    pub fn retrieval_config(&self) -> &RetrievalConfig {
        &self.retrieval
    }

    fn resolve<'a>(&'a self, name: &str, overlay: &'a Overlay) -> Option<&'a FunctionSpec> {
        overlay
            .get(name)
            .map(|f| &f.spec)
            .or_else(|| self.base.get(name))
    }

    /// Runs `policy` over `candidates` and checks the answer is one of them.
    pub fn select_function<'a>(
        &'a self,
        candidates: &RankedCandidates,
        policy: &mut dyn SelectorPolicy,
        query: &RetrievalQuery,
        ctx: &TaskContext,
        stage: StageTag,
        overlay: &'a Overlay,
    ) -> Result<&'a FunctionSpec> {
        if candidates.is_empty() {
            return Err(Error::NoCandidates);
        }
        let specs = candidates
            .names()
            .map(|n| {
                self.resolve(n, overlay)
                    .ok_or_else(|| Error::UnknownFunction(n.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        if let [only] = specs.as_slice() {
            return Ok(only);
        }
        let name = policy.select(&SelectionRequest {
            query,
            candidates,
            specs: &specs,
            context: ctx,
            stage,
        })?;
        specs
            .iter()
            .find(|s| s.name == name)
            .copied()
            .ok_or(Error::SelectionOutsideCandidates(name))
    }

    /// Applies `f` to `input`, checking the declared signature first.
    pub fn execute_stage(
        &self,
        f: &FunctionSpec,
        input: &StageValue,
        overlay: &Overlay,
    ) -> Result<StageValue> {
        if !f.signature.accepts(input.kind()) {
            let expected: Vec<String> = f
                .signature
                .accepts
                .iter()
                .map(|p| p.kind.to_string())
                .collect();
            return Err(Error::VariantMismatch {
                function: f.name.clone(),
                expected: expected.join(" or "),
                actual: input.kind().to_string(),
            });
        }
        let implementation = match overlay.get(&f.name) {
            Some(e) => e.implementation,
            None => StageFn::from_handle(&f.implementation, None)?,
        };
        implementation.call(input)
    }

    /// Instantiates the trigger's template into `overlay` (once) and adds the
    /// function to `candidates` if it is not already there.
    pub fn inject_emergency(
        &self,
        task: &TaskSpec,
        trigger: &str,
        state: &GameState,
        overlay: &mut Overlay,
        candidates: &RankedCandidates,
        query: &RetrievalQuery,
    ) -> Result<RankedCandidates> {
        let name = self.activate(task, trigger, state, overlay)?;
        let f = overlay.get(&name).expect("activated");
        self.append_candidate(candidates, &f.spec, query)
    }

    fn activate(
        &self,
        task: &TaskSpec,
        trigger: &str,
        state: &GameState,
        overlay: &mut Overlay,
    ) -> Result<String> {
        let t = task
            .emergency_triggers
            .iter()
            .find(|t| t.id == trigger)
            .ok_or_else(|| Error::UnknownTrigger(trigger.to_string()))?;
        if let Some(existing) = overlay
            .functions
            .values()
            .find(|f| f.spec.implementation == t.template)
        {
            overlay.fired.insert(t.id.clone());
            return Ok(existing.spec.name.clone());
        }
        let f = self.generator.generate(&t.template, state)?;
        let name = f.spec.name.clone();
        overlay.functions.insert(name.clone(), f);
        overlay.fired.insert(t.id.clone());
        Ok(name)
    }

    fn append_candidate(
        &self,
        candidates: &RankedCandidates,
        spec: &FunctionSpec,
        query: &RetrievalQuery,
    ) -> Result<RankedCandidates> {
        let mut out = candidates.clone();
        if !out.contains(&spec.name) {
            out.items.push(Candidate {
                name: spec.name.clone(),
                score: self.retriever.score(spec, query)?,
            });
            out.items.sort_by(rank_order);
        }
        Ok(out)
    }

    fn stage_candidates(
        &self,
        stage: &StageDescriptor,
        query: &RetrievalQuery,
        overlay: &Overlay,
    ) -> Result<RankedCandidates> {
        let mut candidates = self.retriever.retrieve(query)?;
        for f in overlay
            .functions
            .values()
            .filter(|f| f.stage.stage == stage.stage)
        {
            candidates = self.append_candidate(&candidates, &f.spec, query)?;
        }
        Ok(candidates)
    }

    /// Runs the stage plan and returns the chosen moves plus stage records.
    /// A failed selection or execution ends the pipeline with a fault event.
    fn run_pipeline(
        &self,
        state: &GameState,
        task: &TaskSpec,
        policy: &mut dyn SelectorPolicy,
        overlay: &Overlay,
        stages: &mut Vec<StageRecord>,
        events: &mut Vec<StepEvent>,
    ) -> Result<Option<(Vec<GridPoint>, Vec<bool>)>> {
        let ctx = TaskContext {
            instructions: task.instructions.clone(),
            state: state.clone(),
        };
        let mut value = StageValue::TaskContext(ctx.clone());
        let mut stalled = vec![false; state.pursuers.len()];
        for stage in overlay.stage_plan(task) {
            let query =
                RetrievalQuery::new(stage.query.clone(), state.render(), Some(stage.stage))?;
            let candidates = self.stage_candidates(&stage, &query, overlay)?;
            let spec =
                match self.select_function(&candidates, policy, &query, &ctx, stage.stage, overlay)
                {
                    Ok(spec) => spec,
                    Err(e) => {
                        events.push(StepEvent::SelectionFault {
                            stage: stage.stage,
                            message: e.to_string(),
                        });
                        return Ok(None);
                    }
                };
            let input_digest = digest(&value);
            let result = match self.execute_stage(spec, &value, overlay) {
                Err(Error::EmptyCandidates(_)) => {
                    self.stall_empty(spec, &value, overlay, &mut stalled)
                }
                other => other,
            };
            match result {
                Ok(next) => {
                    stages.push(StageRecord {
                        stage: stage.stage,
                        candidates,
                        selected: spec.name.clone(),
                        input_digest,
                        output_digest: Some(digest(&next)),
                    });
                    value = next;
                }
                Err(e) => {
                    stages.push(StageRecord {
                        stage: stage.stage,
                        candidates,
                        selected: spec.name.clone(),
                        input_digest,
                        output_digest: None,
                    });
                    events.push(StepEvent::SelectionFault {
                        stage: stage.stage,
                        message: e.to_string(),
                    });
                    return Ok(None);
                }
            }
        }
        match value {
            StageValue::ChosenMoves { moves, .. } if moves.len() == state.pursuers.len() => {
                Ok(Some((moves, stalled)))
            }
            other => {
                events.push(StepEvent::SelectionFault {
                    stage: stages.last().map_or(StageTag::whole(1), |s| s.stage),
                    message: format!(
                        "pipeline ended with {} instead of ChosenMoves",
                        other.kind()
                    ),
                });
                Ok(None)
            }
        }
    }

    /// Pursuers left without candidates stay where they are: their lists are
    /// replaced by the current cell and they are marked stalled.
    fn stall_empty(
        &self,
        spec: &FunctionSpec,
        value: &StageValue,
        overlay: &Overlay,
        stalled: &mut [bool],
    ) -> Result<StageValue> {
        let StageValue::MoveCandidates {
            context,
            candidates,
            avoid,
        } = value
        else {
            return Err(Error::NoCandidates);
        };
        let patched = candidates
            .iter()
            .enumerate()
            .map(|(i, cs)| {
                if cs.is_empty() {
                    stalled[i] = true;
                    vec![context.state.pursuers[i]]
                } else {
                    cs.clone()
                }
            })
            .collect();
        self.execute_stage(
            spec,
            &StageValue::MoveCandidates {
                context: context.clone(),
                candidates: patched,
                avoid: *avoid,
            },
            overlay,
        )
    }

    /// One decision round: pursuers (in index order), then the evader.
    pub fn run_step(
        &self,
        state: &GameState,
        task: &TaskSpec,
        controller: &mut Controller,
        overlay: &mut Overlay,
    ) -> Result<(GameState, StepRecord)> {
        if let Some(outcome) = state.outcome() {
            return Err(Error::Terminated(outcome.kind));
        }
        let mut events = Vec::new();
        let mut stages = Vec::new();

        for t in &task.emergency_triggers {
            if !overlay.has_fired(&t.id) && t.condition.holds(state) {
                let function = self.activate(task, &t.id, state, overlay)?;
                events.push(StepEvent::EmergencyInjected {
                    trigger: t.id.clone(),
                    function,
                });
            }
        }

        let n = state.pursuers.len();
        let proposal: Option<(Vec<GridPoint>, Vec<bool>)> = match controller {
            Controller::Select(policy) => self.run_pipeline(
                state,
                task,
                policy.as_mut(),
                overlay,
                &mut stages,
                &mut events,
            )?,
            Controller::Propose(proposer) => {
                let moves = proposer.propose(state);
                (moves.len() == n).then(|| (moves, vec![false; n]))
            }
        };

        let mut next = state.clone();
        let mut actions = vec![PursuerAction::Stalled; n];
        match proposal {
            Some((moves, stalled)) => {
                for (i, target) in moves.into_iter().enumerate() {
                    if stalled[i] {
                        events.push(StepEvent::Stalled { pursuer: i });
                        continue;
                    }
                    let (after, verdict) = next.apply_move(Agent::Pursuer(i), target)?;
                    next = after;
                    actions[i] = PursuerAction::Moved { target, verdict };
                    if verdict == MoveVerdict::Illegal {
                        events.push(StepEvent::Violation { pursuer: i, target });
                    }
                    if next.violations_exceeded() {
                        break;
                    }
                }
            }
            None => events.extend((0..n).map(|pursuer| StepEvent::Stalled { pursuer })),
        }

        let mut evader_move = None;
        if !next.violations_exceeded() {
            let target = evader_policy_greedy(&next);
            if target == next.evader && next.enumerate_legal_moves(Agent::Evader)?.is_empty() {
                events.push(StepEvent::EvaderStuck);
            } else {
                next = next.apply_move(Agent::Evader, target)?.0;
            }
            evader_move = Some(next.evader);
        }
        next.step_count += 1;

        let record = StepRecord {
            index: state.step_count,
            pursuers_before: state.pursuers.clone(),
            evader_before: state.evader,
            stages,
            pursuer_actions: actions,
            evader_move,
            events,
        };
        Ok((next, record))
    }

    /// Builds the controller a policy spec describes. Randomised policies
    /// draw from a stream derived from `seed`.
    pub fn controller(
        &self,
        policy: &PolicySpec,
        board: &BoardConfig,
        seed: u64,
    ) -> Result<Controller> {
        policy.validate()?;
        Ok(match policy {
            PolicySpec::Oracle => Controller::Select(Box::new(OracleSelector)),
            PolicySpec::Noisy { epsilon } => {
                Controller::Select(Box::new(NoisySelector::new(*epsilon, policy_rng(seed))?))
            }
            PolicySpec::Remote {
                endpoint,
                timeout_ms,
                retries,
            } => Controller::Select(Box::new(RemoteSelector::http(
                endpoint,
                Duration::from_millis(*timeout_ms),
                *retries,
            ))),
            PolicySpec::Illegal => Controller::Propose(Box::new(IllegalProposer)),
            PolicySpec::KdMimic {
                training_starts,
                training_seed,
                encoding,
            } => {
                let corpus = self.kd_corpus(*training_starts, *training_seed, board)?;
                Controller::Propose(Box::new(KdMimic::new(corpus, *encoding)))
            }
        })
    }

    /// Memory built from oracle episodes on `board` without its restricted
    /// area. Cached per `(starts, seed, board)`.
    pub fn kd_corpus(
        &self,
        starts: usize,
        training_seed: u64,
        board: &BoardConfig,
    ) -> Result<Arc<MemorizedCorpus>> {
        let mut training_board = *board;
        training_board.restricted_area = None;
        let key = (starts, training_seed, training_board);
        if let Some(c) = self.corpora.lock().expect("corpus cache").get(&key) {
            return Ok(Arc::clone(c));
        }
        let task = TaskSpec::pursuit(training_board, false);
        let traces = (0..starts as u64)
            .map(|i| {
                self.run_episode(
                    &task,
                    &PolicySpec::Oracle,
                    derive_seed(training_seed, KD_TRAINING_SALT, i),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let corpus = Arc::new(MemorizedCorpus::from_traces(&traces));
        self.corpora
            .lock()
            .expect("corpus cache")
            .insert(key, Arc::clone(&corpus));
        Ok(corpus)
    }

    /// Plays one episode to termination.
    pub fn run_episode(
        &self,
        task: &TaskSpec,
        policy: &PolicySpec,
        seed: u64,
    ) -> Result<EpisodeTrace> {
        task.validate()?;
        let mut controller = self.controller(policy, &task.board, seed)?;
        self.run_episode_with(task, &mut controller, policy, seed)
    }

    /// [`Self::run_episode`] with a caller-built controller; `policy` is only
    /// recorded in the header.
    pub fn run_episode_with(
        &self,
        task: &TaskSpec,
        controller: &mut Controller,
        policy: &PolicySpec,
        seed: u64,
    ) -> Result<EpisodeTrace> {
        task.validate()?;
        let start = task.initial_state(seed)?;
        let mut state = start.clone();
        let mut overlay = Overlay::default();
        let mut steps = Vec::new();
        let outcome = loop {
            if let Some(outcome) = state.outcome() {
                break outcome;
            }
            let (next, record) = self.run_step(&state, task, controller, &mut overlay)?;
            steps.push(record);
            state = next;
        };
        Ok(EpisodeTrace {
            header: TraceHeader {
                format_version: TRACE_FORMAT_VERSION,
                seed,
                task: task.clone(),
                policy: policy.clone(),
                retrieval: self.retrieval.clone(),
                start,
            },
            steps,
            outcome,
            final_state: state,
        })
    }
}

/// Salt separating baseline training seeds from evaluation seeds.
pub const KD_TRAINING_SALT: u64 = 0x4b44_5f74_7261_696e;

/// Moves from the three shipped functions composed directly, bypassing
/// retrieval and selection. With `area`, the restricted filter runs between
/// the second and third function.
pub fn compose_directly(
    ctx: &TaskContext,
    area: Option<crate::grid::Rect>,
) -> Result<Vec<GridPoint>> {
    use crate::function_base::{
        compute_distances, filter_restricted_cells, filter_valid_moves, select_best_move,
    };
    let mut v = filter_valid_moves(&compute_distances(ctx))?;
    if let Some(a) = area {
        v = filter_restricted_cells(&v, a)?;
    }
    match select_best_move(&v)? {
        StageValue::ChosenMoves { moves, .. } => Ok(moves),
        other => Err(Error::VariantMismatch {
            function: "select_best_move".into(),
            expected: VariantKind::ChosenMoves.to_string(),
            actual: other.kind().to_string(),
        }),
    }
}
