//! The function base: planning functions paired with user-manual entries.
//!
//! Each [`FunctionSpec`] names a stage it serves, a signature over
//! [`StageValue`] variants and an implementation handle resolved through
//! [`StageFn`]. The manual text doubles as the retrieval corpus, so the
//! shipped wording is part of the contract (see `data/function_base.jsonl`).

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{manhattan_distance, GameState, GridPoint, Rect};

/// Invocation stage of a function, kept in tenths so an emergency function
/// can slot between two integer stages (2.5 sits between 2 and 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct StageTag(u32);

impl StageTag {
    pub const fn whole(stage: u32) -> Self {
        Self(stage * 10)
    }

    /// `tenths = 25` is stage 2.5.
    pub const fn from_tenths(tenths: u32) -> Self {
        Self(tenths)
    }

    pub fn tenths(self) -> u32 {
        self.0
    }

    pub fn is_whole(self) -> bool {
        self.0.is_multiple_of(10)
    }
}

impl From<StageTag> for f64 {
    fn from(t: StageTag) -> f64 {
        f64::from(t.0) / 10.0
    }
}

impl TryFrom<f64> for StageTag {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, String> {
        let tenths = (v * 10.0).round();
        if !(10.0..=f64::from(u32::MAX)).contains(&tenths) || (tenths / 10.0 - v).abs() > 1e-9 {
            return Err(format!(
                "stage tag must be >= 1 with at most one decimal, got {v}"
            ));
        }
        Ok(Self(tenths as u32))
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_whole() {
            write!(f, "{}", self.0 / 10)
        } else {
            write!(f, "{}.{}", self.0 / 10, self.0 % 10)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualEntry {
    pub rule_explanation: String,
    pub code_comment: String,
    pub invocation_stage_description: String,
    pub usage_example: String,
}

impl ManualEntry {
    fn fields(&self) -> [&str; 4] {
        [
            &self.rule_explanation,
            &self.code_comment,
            &self.invocation_stage_description,
            &self.usage_example,
        ]
    }

    pub fn is_complete(&self) -> bool {
        self.fields().iter().all(|f| !f.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    TaskContext,
    DistanceTable,
    MoveCandidates,
    ChosenMoves,
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VariantKind::TaskContext => "TaskContext",
            VariantKind::DistanceTable => "DistanceTable",
            VariantKind::MoveCandidates => "MoveCandidates",
            VariantKind::ChosenMoves => "ChosenMoves",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Port {
    pub name: String,
    pub kind: VariantKind,
}

/// Input alternatives and output of a stage function. A function accepts a
/// value if its variant matches any entry of `accepts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    pub accepts: Vec<Port>,
    pub produces: Port,
}

impl Signature {
    pub fn accepts(&self, kind: VariantKind) -> bool {
        self.accepts.iter().any(|p| p.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    pub stage_tag: StageTag,
    pub manual: ManualEntry,
    pub signature: Signature,
    /// Handle of the executable stage function, see [`StageFn::from_handle`].
    pub implementation: String,
}

impl FunctionSpec {
    /// The document embedded for retrieval: the name plus all manual fields.
    pub fn document(&self) -> String {
        let mut doc = self.name.clone();
        for field in self.manual.fields() {
            doc.push('\n');
            doc.push_str(field);
        }
        doc
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| {
            Err(Error::InvalidSpec {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.name.trim().is_empty() {
            return invalid("empty name");
        }
        if self.stage_tag < StageTag::whole(1) {
            return invalid("stage tag below 1");
        }
        if !self.manual.is_complete() {
            return invalid("manual has an empty field");
        }
        if self.signature.accepts.is_empty() {
            return invalid("signature accepts nothing");
        }
        StageFn::from_handle(&self.implementation, None).map(|_| ())
    }
}

/// Task instructions plus the live game state; the value a step starts from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContext {
    pub instructions: String,
    pub state: GameState,
}

/// Intermediate result passed between stages. Every variant carries the
/// context it was derived from so later stages can see the board.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum StageValue {
    TaskContext(TaskContext),
    DistanceTable {
        context: TaskContext,
        distances: Vec<u32>,
    },
    MoveCandidates {
        context: TaskContext,
        candidates: Vec<Vec<GridPoint>>,
        /// Area the candidates were filtered against; path lengths in
        /// `select_best_move` route around it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        avoid: Option<Rect>,
    },
    ChosenMoves {
        context: TaskContext,
        moves: Vec<GridPoint>,
    },
}

impl StageValue {
    pub fn kind(&self) -> VariantKind {
        match self {
            StageValue::TaskContext(_) => VariantKind::TaskContext,
            StageValue::DistanceTable { .. } => VariantKind::DistanceTable,
            StageValue::MoveCandidates { .. } => VariantKind::MoveCandidates,
            StageValue::ChosenMoves { .. } => VariantKind::ChosenMoves,
        }
    }

    pub fn context(&self) -> &TaskContext {
        match self {
            StageValue::TaskContext(c) => c,
            StageValue::DistanceTable { context, .. }
            | StageValue::MoveCandidates { context, .. }
            | StageValue::ChosenMoves { context, .. } => context,
        }
    }
}

fn mismatch(function: &str, expected: &str, actual: VariantKind) -> Error {
    Error::VariantMismatch {
        function: function.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

/// Per-pursuer Manhattan distance to the evader.
pub fn compute_distances(ctx: &TaskContext) -> StageValue {
    let distances = ctx
        .state
        .pursuers
        .iter()
        .map(|p| manhattan_distance(*p, ctx.state.evader))
        .collect();
    StageValue::DistanceTable {
        context: ctx.clone(),
        distances,
    }
}

/// Every in-budget, in-bounds destination for each pursuer. Restricted cells
/// are left in; removing them is the emergency filter's job.
pub fn filter_valid_moves(value: &StageValue) -> Result<StageValue> {
    let context = match value {
        StageValue::TaskContext(c) | StageValue::DistanceTable { context: c, .. } => c,
        other => {
            return Err(mismatch(
                "filter_valid_moves",
                "TaskContext or DistanceTable",
                other.kind(),
            ))
        }
    };
    let cfg = &context.state.config;
    let candidates = context
        .state
        .pursuers
        .iter()
        .map(|p| cfg.cells_within(*p, cfg.pursuer_budget, false))
        .collect();
    Ok(StageValue::MoveCandidates {
        context: context.clone(),
        candidates,
        avoid: None,
    })
}

/// Drops every candidate inside `area`.
pub fn filter_restricted_cells(value: &StageValue, area: Rect) -> Result<StageValue> {
    let StageValue::MoveCandidates {
        context,
        candidates,
        ..
    } = value
    else {
        return Err(mismatch(
            "filter_restricted_cells",
            "MoveCandidates",
            value.kind(),
        ));
    };
    let candidates = candidates
        .iter()
        .map(|cs| cs.iter().copied().filter(|c| !area.contains(*c)).collect())
        .collect();
    Ok(StageValue::MoveCandidates {
        context: context.clone(),
        candidates,
        avoid: Some(area),
    })
}

/// For each pursuer, the candidate closest to the evader; ties go to the
/// smallest `(x, y)`. Distance is Manhattan unless the candidates were
/// filtered against an area, in which case it is the shortest path around it.
pub fn select_best_move(value: &StageValue) -> Result<StageValue> {
    let StageValue::MoveCandidates {
        context,
        candidates,
        avoid,
    } = value
    else {
        return Err(mismatch("select_best_move", "MoveCandidates", value.kind()));
    };
    let evader = context.state.evader;
    let field = avoid.map(|area| context.state.config.path_field(evader, Some(area)));
    let distance = |c: GridPoint| match &field {
        Some(f) => f.distance(c),
        None => manhattan_distance(c, evader),
    };
    let moves = candidates
        .iter()
        .enumerate()
        .map(|(i, cs)| {
            cs.iter()
                .copied()
                .min_by_key(|c| (distance(*c), *c))
                .ok_or(Error::EmptyCandidates(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StageValue::ChosenMoves {
        context: context.clone(),
        moves,
    })
}

/// Executable stage implementations addressable by handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageFn {
    ComputeDistances,
    FilterValidMoves,
    SelectBestMove,
    /// `None` reads the area from the board config at call time.
    FilterRestrictedCells(Option<Rect>),
}

impl StageFn {
    pub fn from_handle(handle: &str, area: Option<Rect>) -> Result<Self> {
        match handle {
            "compute_distances" => Ok(StageFn::ComputeDistances),
            "filter_valid_moves" => Ok(StageFn::FilterValidMoves),
            "select_best_move" => Ok(StageFn::SelectBestMove),
            "filter_restricted_cells" => Ok(StageFn::FilterRestrictedCells(area)),
            other => Err(Error::UnknownFunction(other.to_string())),
        }
    }

    pub fn call(&self, input: &StageValue) -> Result<StageValue> {
        match self {
            StageFn::ComputeDistances => match input {
                StageValue::TaskContext(ctx) => Ok(compute_distances(ctx)),
                other => Err(mismatch("compute_distances", "TaskContext", other.kind())),
            },
            StageFn::FilterValidMoves => filter_valid_moves(input),
            StageFn::SelectBestMove => select_best_move(input),
            StageFn::FilterRestrictedCells(area) => {
                match area.or(input.context().state.config.restricted_area) {
                    Some(a) => filter_restricted_cells(input, a),
                    // nothing to exclude; still enforce the input variant
                    None => match input {
                        StageValue::MoveCandidates { .. } => Ok(input.clone()),
                        other => Err(mismatch(
                            "filter_restricted_cells",
                            "MoveCandidates",
                            other.kind(),
                        )),
                    },
                }
            }
        }
    }
}

/// Immutable registry of function specs, ordered as registered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionBase {
    entries: Vec<FunctionSpec>,
    index: HashMap<String, usize>,
}

impl FunctionBase {
    pub fn new(entries: Vec<FunctionSpec>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, spec) in entries.iter().enumerate() {
            spec.validate()?;
            if index.insert(spec.name.clone(), i).is_some() {
                return Err(Error::DuplicateFunction(spec.name.clone()));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[FunctionSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&FunctionSpec> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// One JSON object per line, one line per spec.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for spec in &self.entries {
            out.push_str(&serde_json::to_string(spec).expect("spec serialises"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<FunctionSpec>, _>>()?;
        Self::new(entries)
    }
}

/// The shipped base, serialized.
pub const DEFAULT_BASE_JSONL: &str = include_str!("../data/function_base.jsonl");

fn port(name: &str, kind: VariantKind) -> Port {
    Port {
        name: name.to_string(),
        kind,
    }
}

fn manual(rule: &str, comment: &str, stage: &str, example: &str) -> ManualEntry {
    ManualEntry {
        rule_explanation: rule.to_string(),
        code_comment: comment.to_string(),
        invocation_stage_description: stage.to_string(),
        usage_example: example.to_string(),
    }
}

/// Spec of the restricted-area filter; also the emergency template's output.
pub fn restricted_filter_spec() -> FunctionSpec {
    FunctionSpec {
        name: "filter_restricted_cells".into(),
        stage_tag: StageTag::from_tenths(25),
        manual: manual(
            "A restricted area is forbidden ground: no pursuer may enter any restricted cell, and entering one is an illegal choice.",
            "Removes every coordinate lying inside the restricted rectangle from each pursuer's candidate list.",
            "Emergency stage 2.5: runs between filter_valid_moves and select_best_move while a restricted area is active.",
            "filter_restricted_cells([[(8,8),(7,8)]], area=(8..12,8..12)) -> [[(7,8)]]",
        ),
        signature: Signature {
            accepts: vec![port("candidates", VariantKind::MoveCandidates)],
            produces: port("candidates", VariantKind::MoveCandidates),
        },
        implementation: "filter_restricted_cells".into(),
    }
}

pub fn build_default_base() -> FunctionBase {
    let entries = vec![
        FunctionSpec {
            name: "compute_distances".into(),
            stage_tag: StageTag::whole(1),
            manual: manual(
                "The evader is caught when every pursuer is less than 2 units of Manhattan distance away; progress is measured by how far each pursuer is.",
                "Computes the Manhattan distance |dx| + |dy| from each pursuer to the evader.",
                "Stage 1: called first on the task context to calculate the distance of every pursuer.",
                "compute_distances(pursuers=[(3,8),(14,19),(17,2)], evader=(20,18)) -> [27, 7, 19]",
            ),
            signature: Signature {
                accepts: vec![port("context", VariantKind::TaskContext)],
                produces: port("distances", VariantKind::DistanceTable),
            },
            implementation: "compute_distances".into(),
        },
        FunctionSpec {
            name: "filter_valid_moves".into(),
            stage_tag: StageTag::whole(2),
            manual: manual(
                "A pursuer may move at most two units per step and must remain on the board; any other choice is illegal.",
                "Filters the valid moves: lists every legal destination cell within the movement budget for each pursuer.",
                "Stage 2: called on the distance table to enumerate valid candidate moves.",
                "filter_valid_moves(pursuer=(0,0)) -> [(0,0),(0,1),(0,2),(1,0),(1,1),(2,0)]",
            ),
            signature: Signature {
                accepts: vec![
                    port("distances", VariantKind::DistanceTable),
                    port("context", VariantKind::TaskContext),
                ],
                produces: port("candidates", VariantKind::MoveCandidates),
            },
            implementation: "filter_valid_moves".into(),
        },
        FunctionSpec {
            name: "select_best_move".into(),
            stage_tag: StageTag::whole(3),
            manual: manual(
                "Pursuers should close in on the evader; the best choice brings each pursuer nearest to it.",
                "Selects the best move per pursuer: the candidate nearest the evader, ties broken by the smallest (x, y).",
                "Stage 3: called last on the candidate list to select the final decision.",
                "select_best_move(pursuer=(0,0), evader=(20,18)) -> (0,2)",
            ),
            signature: Signature {
                accepts: vec![port("candidates", VariantKind::MoveCandidates)],
                produces: port("moves", VariantKind::ChosenMoves),
            },
            implementation: "select_best_move".into(),
        },
        restricted_filter_spec(),
    ];
    FunctionBase::new(entries).expect("shipped base is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Agent, BoardConfig};
    use proptest::prelude::*;

    fn p(x: i32, y: i32) -> GridPoint {
        GridPoint::new(x, y)
    }

    fn ctx(pursuers: &[(i32, i32)], evader: (i32, i32), cfg: BoardConfig) -> TaskContext {
        TaskContext {
            instructions: "catch the evader".into(),
            state: GameState {
                pursuers: pursuers.iter().map(|&q| q.into()).collect(),
                evader: evader.into(),
                step_count: 0,
                violation_count: 0,
                config: cfg,
            },
        }
    }

    fn fig_start() -> TaskContext {
        ctx(
            &[(3, 8), (14, 19), (17, 2)],
            (20, 18),
            BoardConfig::default(),
        )
    }

    fn moves_of(v: &StageValue) -> &[GridPoint] {
        match v {
            StageValue::ChosenMoves { moves, .. } => moves,
            other => panic!("expected ChosenMoves, got {:?}", other.kind()),
        }
    }

    fn candidates_of(v: &StageValue) -> &[Vec<GridPoint>] {
        match v {
            StageValue::MoveCandidates { candidates, .. } => candidates,
            other => panic!("expected MoveCandidates, got {:?}", other.kind()),
        }
    }

    #[test]
    fn default_base_has_named_functions_with_complete_manuals() {
        let base = build_default_base();
        for name in [
            "compute_distances",
            "filter_valid_moves",
            "select_best_move",
            "filter_restricted_cells",
        ] {
            assert!(base.get(name).is_some(), "{name} missing");
        }
        assert!(base.entries().iter().all(|s| s.manual.is_complete()));
        assert_eq!(
            base.get("filter_restricted_cells")
                .unwrap()
                .stage_tag
                .to_string(),
            "2.5"
        );
    }

    #[test]
    fn shipped_file_matches_builder() {
        let parsed = FunctionBase::from_jsonl(DEFAULT_BASE_JSONL).unwrap();
        assert_eq!(parsed, build_default_base());
        assert_eq!(parsed.to_jsonl(), DEFAULT_BASE_JSONL);
    }

    #[test]
    fn duplicate_and_empty_manual_rejected() {
        let mut entries = build_default_base().entries().to_vec();
        entries.push(entries[0].clone());
        assert!(matches!(
            FunctionBase::new(entries),
            Err(Error::DuplicateFunction(_))
        ));

        let mut spec = restricted_filter_spec();
        spec.manual.usage_example = "  ".into();
        assert!(matches!(
            FunctionBase::new(vec![spec]),
            Err(Error::InvalidSpec { .. })
        ));
    }

    #[test]
    fn stage_tag_parsing() {
        assert_eq!(StageTag::try_from(2.5).unwrap(), StageTag::from_tenths(25));
        assert!(StageTag::try_from(0.5).is_err());
        assert!(StageTag::try_from(2.25).is_err());
        assert!(StageTag::whole(2) < StageTag::from_tenths(25));
        assert!(StageTag::from_tenths(25) < StageTag::whole(3));
    }

    #[test]
    fn distances_from_figure_start() {
        match compute_distances(&fig_start()) {
            StageValue::DistanceTable { distances, .. } => assert_eq!(distances, vec![27, 7, 19]),
            other => panic!("{:?}", other.kind()),
        }
    }

    #[test]
    fn distances_degenerate_cases() {
        let c = ctx(
            &[(20, 18), (0, 0), (1, 1)],
            (20, 18),
            BoardConfig::default(),
        );
        let StageValue::DistanceTable { distances, .. } = compute_distances(&c) else {
            panic!()
        };
        assert_eq!(distances[0], 0);

        let mut tiny = BoardConfig::default();
        tiny.width = 1;
        tiny.height = 1;
        let c = ctx(&[(0, 0), (0, 0), (0, 0)], (0, 0), tiny);
        let StageValue::DistanceTable { distances, .. } = compute_distances(&c) else {
            panic!()
        };
        assert_eq!(distances, vec![0, 0, 0]);
    }

    #[test]
    fn valid_move_counts() {
        let c = ctx(
            &[(0, 0), (10, 10), (5, 5)],
            (20, 18),
            BoardConfig::default(),
        );
        let v = filter_valid_moves(&StageValue::TaskContext(c.clone())).unwrap();
        let cands = candidates_of(&v);
        assert_eq!(cands[0].len(), 6);
        assert_eq!(cands[1].len(), 13);
        assert_eq!(
            cands[0],
            c.state.enumerate_legal_moves(Agent::Pursuer(0)).unwrap()
        );

        let mut zero = BoardConfig::default();
        zero.pursuer_budget = 0;
        zero.evader_budget = 0;
        let c = ctx(&[(4, 4), (10, 10), (5, 5)], (20, 18), zero);
        let v = filter_valid_moves(&compute_distances(&c)).unwrap();
        assert_eq!(candidates_of(&v)[0], vec![p(4, 4)]);
    }

    #[test]
    fn valid_moves_keep_restricted_cells() {
        let c = ctx(
            &[(7, 8), (0, 0), (1, 1)],
            (20, 18),
            BoardConfig::with_restricted_center(),
        );
        let v = filter_valid_moves(&StageValue::TaskContext(c)).unwrap();
        assert!(candidates_of(&v)[0].contains(&p(8, 8)));
    }

    #[test]
    fn restricted_filter_examples() {
        let area = Rect::new(p(8, 8), p(12, 12));
        let c = ctx(&[(7, 8), (0, 0), (1, 1)], (20, 18), BoardConfig::default());
        let input = StageValue::MoveCandidates {
            context: c.clone(),
            candidates: vec![vec![p(8, 8), p(7, 8)], vec![p(0, 0)], vec![p(9, 9)]],
            avoid: None,
        };
        let out = filter_restricted_cells(&input, area).unwrap();
        assert_eq!(candidates_of(&out), &[vec![p(7, 8)], vec![p(0, 0)], vec![]]);

        let far = Rect::new(p(30, 30), p(31, 31));
        let out = filter_restricted_cells(&input, far).unwrap();
        assert_eq!(candidates_of(&out), candidates_of(&input));
    }

    #[test]
    fn best_move_examples() {
        let c = ctx(
            &[(0, 0), (19, 18), (10, 10)],
            (20, 18),
            BoardConfig::default(),
        );
        let out =
            select_best_move(&filter_valid_moves(&StageValue::TaskContext(c)).unwrap()).unwrap();
        // (2,0), (1,1), (0,2) all sit 36 away; (0,2) is lexicographically first
        assert_eq!(moves_of(&out)[0], p(0, 2));
        assert_eq!(moves_of(&out)[1], p(20, 18));

        let c = ctx(
            &[(10, 10), (0, 0), (1, 1)],
            (10, 10),
            BoardConfig::default(),
        );
        let out =
            select_best_move(&filter_valid_moves(&StageValue::TaskContext(c)).unwrap()).unwrap();
        assert_eq!(moves_of(&out)[0], p(10, 10));
    }

    #[test]
    fn best_move_rejects_empty_candidates() {
        let c = ctx(
            &[(10, 10), (0, 0), (1, 1)],
            (10, 10),
            BoardConfig::default(),
        );
        let input = StageValue::MoveCandidates {
            context: c,
            candidates: vec![vec![p(1, 1)], vec![], vec![p(1, 1)]],
            avoid: None,
        };
        assert!(matches!(
            select_best_move(&input),
            Err(Error::EmptyCandidates(1))
        ));
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let err = StageFn::ComputeDistances
            .call(&filter_valid_moves(&StageValue::TaskContext(fig_start())).unwrap())
            .unwrap_err();
        assert!(err
            .to_string()
            .contains("expects TaskContext but received MoveCandidates"));
        assert!(select_best_move(&StageValue::TaskContext(fig_start())).is_err());
    }

    #[test]
    fn best_move_routes_around_avoided_area() {
        let cfg = BoardConfig::with_restricted_center();
        let c = ctx(&[(7, 10), (0, 0), (1, 1)], (13, 10), cfg);
        let v = filter_valid_moves(&StageValue::TaskContext(c)).unwrap();
        let filtered = filter_restricted_cells(&v, cfg.restricted_area.unwrap()).unwrap();
        let StageValue::MoveCandidates {
            context,
            candidates,
            ..
        } = filtered.clone()
        else {
            panic!()
        };
        // plain Manhattan over the filtered list stalls against the wall
        let plain = select_best_move(&StageValue::MoveCandidates {
            context,
            candidates,
            avoid: None,
        })
        .unwrap();
        assert_eq!(moves_of(&plain)[0], p(7, 10));
        // (7,8) and (7,12) are both 10 steps around the square
        let routed = select_best_move(&filtered).unwrap();
        assert_eq!(moves_of(&routed)[0], p(7, 8));
    }

    fn arb_state() -> impl Strategy<Value = GameState> {
        (
            proptest::collection::vec((0..21i32, 0..21i32), 3),
            (0..21i32, 0..21i32),
        )
            .prop_map(|(ps, e)| GameState {
                pursuers: ps.into_iter().map(Into::into).collect(),
                evader: e.into(),
                step_count: 0,
                violation_count: 0,
                config: BoardConfig::default(),
            })
    }

    proptest! {
        #[test]
        fn pipeline_moves_are_legal_and_never_retreat(state in arb_state()) {
            let c = TaskContext { instructions: "x".into(), state: state.clone() };
            let out = select_best_move(&filter_valid_moves(&compute_distances(&c)).unwrap()).unwrap();
            for (i, m) in moves_of(&out).iter().enumerate() {
                let (_, verdict) = state.apply_move(Agent::Pursuer(i), *m).unwrap();
                prop_assert_eq!(verdict, crate::grid::MoveVerdict::Legal);
                let before = manhattan_distance(state.pursuers[i], state.evader);
                prop_assert!(manhattan_distance(*m, state.evader) <= before);
                // brute-force optimum over the legal set
                let best = state.enumerate_legal_moves(Agent::Pursuer(i)).unwrap()
                    .into_iter().map(|c| manhattan_distance(c, state.evader)).min().unwrap();
                prop_assert_eq!(manhattan_distance(*m, state.evader), best);
            }
        }

        #[test]
        fn restricted_filter_is_subset_and_disjoint(
            cands in proptest::collection::vec(proptest::collection::vec((0..21i32, 0..21i32), 0..10), 3),
        ) {
            let area = Rect::centered(21, 21, 5);
            let candidates: Vec<Vec<GridPoint>> =
                cands.into_iter().map(|v| v.into_iter().map(Into::into).collect()).collect();
            let input = StageValue::MoveCandidates { context: fig_start(), candidates: candidates.clone(), avoid: None };
            let out = filter_restricted_cells(&input, area).unwrap();
            for (before, after) in candidates.iter().zip(candidates_of(&out)) {
                prop_assert!(after.iter().all(|c| before.contains(c) && !area.contains(*c)));
                prop_assert_eq!(after.len(), before.iter().filter(|c| !area.contains(**c)).count());
            }
        }
    }
}
