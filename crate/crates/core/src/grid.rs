//! Pursuit-game board: geometry, move legality, capture and termination.
//!
//! Three pursuers chase one evader on a bounded grid. Pursuers may move up to
//! `pursuer_budget` Manhattan units per step, the evader up to `evader_budget`.
//! The game is won when every pursuer is strictly closer than
//! `capture_radius` to the evader.
//!
//! States are values: [`GameState::apply_move`] returns a new state and never
//! touches its receiver, which keeps episode replay deterministic.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cell coordinate. Ordering is lexicographic on `(x, y)`, which every
/// tie-break in the crate relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: i32,
    pub y: i32,
}

impl GridPoint {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl From<(i32, i32)> for GridPoint {
    fn from((x, y): (i32, i32)) -> Self {
        Self { x, y }
    }
}

pub fn manhattan_distance(a: GridPoint, b: GridPoint) -> u32 {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

/// Axis-aligned rectangle with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub min: GridPoint,
    pub max: GridPoint,
}

impl Rect {
    pub fn new(min: GridPoint, max: GridPoint) -> Self {
        Self { min, max }
    }

    /// The `size`×`size` square centred on a `width`×`height` board.
    pub fn centered(width: u32, height: u32, size: u32) -> Self {
        let x0 = (width as i32 - size as i32) / 2;
        let y0 = (height as i32 - size as i32) / 2;
        Self {
            min: GridPoint::new(x0, y0),
            max: GridPoint::new(x0 + size as i32 - 1, y0 + size as i32 - 1),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.min.x <= self.max.x && self.min.y <= self.max.y
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        (self.min.x..=self.max.x).contains(&p.x) && (self.min.y..=self.max.y).contains(&p.y)
    }
}

/// Side length of the restricted square used by the emergency scenario.
pub const RESTRICTED_AREA_SIZE: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardConfig {
    pub width: u32,
    pub height: u32,
    pub pursuer_count: usize,
    pub pursuer_budget: u32,
    pub evader_budget: u32,
    /// Capture holds iff every pursuer is at distance `< capture_radius`.
    pub capture_radius: u32,
    pub step_limit: u32,
    /// The game fails once the violation count exceeds this value.
    pub violation_limit: u32,
    pub restricted_area: Option<Rect>,
    /// When set, a move must displace the agent (staying is illegal).
    pub strict_moves: bool,
}

impl Default for BoardConfig {
    fn default() -> Self {
        Self {
            width: 21,
            height: 21,
            pursuer_count: 3,
            pursuer_budget: 2,
            evader_budget: 1,
            capture_radius: 2,
            step_limit: 100,
            violation_limit: 7,
            restricted_area: None,
            strict_moves: false,
        }
    }
}

impl BoardConfig {
    /// Default board with the centred 5×5 restricted area.
    pub fn with_restricted_center() -> Self {
        let mut cfg = Self::default();
        cfg.restricted_area = Some(Rect::centered(cfg.width, cfg.height, RESTRICTED_AREA_SIZE));
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.width < 1 || self.height < 1 {
            return bad("width and height must be >= 1");
        }
        if self.pursuer_count < 1 {
            return bad("pursuer_count must be >= 1");
        }
        if self.pursuer_budget < self.evader_budget {
            return bad("pursuer_budget must be >= evader_budget");
        }
        if self.capture_radius < 1 {
            return bad("capture_radius must be >= 1");
        }
        if let Some(area) = self.restricted_area {
            if !area.is_well_formed() {
                return bad("restricted_area corners are inverted");
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, p: GridPoint) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as u32) < self.width && (p.y as u32) < self.height
    }

    pub fn is_restricted(&self, p: GridPoint) -> bool {
        self.restricted_area.is_some_and(|a| a.contains(p))
    }

    pub fn cell_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn cell_index(&self, p: GridPoint) -> usize {
        p.y as usize * self.width as usize + p.x as usize
    }

    /// Every in-bounds cell within `budget` of `from`, in `(x, y)` order.
    /// Restricted cells are dropped only when `respect_restricted` is set.
    pub fn cells_within(
        &self,
        from: GridPoint,
        budget: u32,
        respect_restricted: bool,
    ) -> Vec<GridPoint> {
        let b = budget as i32;
        let mut out = Vec::new();
        for dx in -b..=b {
            let rem = b - dx.abs();
            for dy in -rem..=rem {
                if self.strict_moves && dx == 0 && dy == 0 {
                    continue;
                }
                let p = GridPoint::new(from.x + dx, from.y + dy);
                if !self.in_bounds(p) || (respect_restricted && self.is_restricted(p)) {
                    continue;
                }
                out.push(p);
            }
        }
        out
    }

    /// Shortest-path lengths to `target` over cells outside `blocked`, using
    /// unit Von-Neumann steps. Unreachable cells hold `u32::MAX`.
    pub fn path_field(&self, target: GridPoint, blocked: Option<Rect>) -> PathField {
        let mut dist = vec![u32::MAX; self.cell_count()];
        let passable = |p: GridPoint| self.in_bounds(p) && !blocked.is_some_and(|a| a.contains(p));
        if passable(target) {
            let mut queue = VecDeque::new();
            dist[self.cell_index(target)] = 0;
            queue.push_back(target);
            while let Some(p) = queue.pop_front() {
                let d = dist[self.cell_index(p)];
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let q = GridPoint::new(p.x + dx, p.y + dy);
                    if passable(q) && dist[self.cell_index(q)] == u32::MAX {
                        dist[self.cell_index(q)] = d + 1;
                        queue.push_back(q);
                    }
                }
            }
        }
        PathField {
            config: *self,
            dist,
        }
    }
}

/// Precomputed shortest-path distances to one target cell.
#[derive(Debug, Clone)]
pub struct PathField {
    config: BoardConfig,
    dist: Vec<u32>,
}

impl PathField {
    pub fn distance(&self, p: GridPoint) -> u32 {
        if self.config.in_bounds(p) {
            self.dist[self.config.cell_index(p)]
        } else {
            u32::MAX
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Pursuer(usize),
    Evader,
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Agent::Pursuer(i) => write!(f, "pursuer-{i}"),
            Agent::Evader => f.write_str("evader"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveVerdict {
    Legal,
    Illegal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Success,
    FailureNoViolation,
    FailureWithViolation,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 3] = [
        OutcomeKind::Success,
        OutcomeKind::FailureNoViolation,
        OutcomeKind::FailureWithViolation,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub kind: OutcomeKind,
    /// Steps played; only meaningful for [`OutcomeKind::Success`].
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub pursuers: Vec<GridPoint>,
    pub evader: GridPoint,
    pub step_count: u32,
    pub violation_count: u32,
    pub config: BoardConfig,
}

impl GameState {
    /// Builds a fresh state, checking bounds, pursuer count and the
    /// restricted area.
    pub fn new(config: BoardConfig, pursuers: Vec<GridPoint>, evader: GridPoint) -> Result<Self> {
        config.validate()?;
        if pursuers.len() != config.pursuer_count {
            return Err(Error::InvalidConfig(format!(
                "expected {} pursuers, got {}",
                config.pursuer_count,
                pursuers.len()
            )));
        }
        for p in pursuers.iter().chain(std::iter::once(&evader)) {
            if !config.in_bounds(*p) {
                return Err(Error::InvalidConfig(format!("{p} is out of bounds")));
            }
            if config.is_restricted(*p) {
                return Err(Error::InvalidConfig(format!(
                    "{p} lies in the restricted area"
                )));
            }
        }
        Ok(Self {
            pursuers,
            evader,
            step_count: 0,
            violation_count: 0,
            config,
        })
    }

    /// Uniformly samples distinct, unrestricted cells for every agent,
    /// rejecting starts that are already captured.
    pub fn sample<R: Rng + ?Sized>(config: BoardConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let free: Vec<GridPoint> = (0..config.width as i32)
            .flat_map(|x| (0..config.height as i32).map(move |y| GridPoint::new(x, y)))
            .filter(|p| !config.is_restricted(*p))
            .collect();
        if free.len() < config.pursuer_count + 1 {
            return Err(Error::InvalidConfig(
                "board too small for distinct starts".into(),
            ));
        }
        for _ in 0..10_000 {
            let picks = rand::seq::index::sample(rng, free.len(), config.pursuer_count + 1);
            let mut cells: Vec<GridPoint> = picks.iter().map(|i| free[i]).collect();
            let evader = cells.pop().expect("at least one pick");
            let state = Self::new(config, cells, evader)?;
            if !state.is_captured() {
                return Ok(state);
            }
        }
        Err(Error::InvalidConfig(
            "could not sample an uncaptured start".into(),
        ))
    }

    pub fn position(&self, agent: Agent) -> Result<GridPoint> {
        match agent {
            Agent::Evader => Ok(self.evader),
            Agent::Pursuer(i) => self
                .pursuers
                .get(i)
                .copied()
                .ok_or_else(|| Error::InvalidAgent(agent.to_string())),
        }
    }

    fn budget(&self, agent: Agent) -> u32 {
        match agent {
            Agent::Pursuer(_) => self.config.pursuer_budget,
            Agent::Evader => self.config.evader_budget,
        }
    }

    /// Every legal destination for `agent`, sorted by `(x, y)`. Staying put
    /// is included unless the board runs in strict mode.
    pub fn enumerate_legal_moves(&self, agent: Agent) -> Result<Vec<GridPoint>> {
        let from = self.position(agent)?;
        Ok(self.config.cells_within(from, self.budget(agent), true))
    }

    pub fn is_legal_move(&self, agent: Agent, target: GridPoint) -> Result<bool> {
        let from = self.position(agent)?;
        let d = manhattan_distance(from, target);
        Ok(d <= self.budget(agent)
            && !(self.config.strict_moves && d == 0)
            && self.config.in_bounds(target)
            && !self.config.is_restricted(target))
    }

    pub fn is_captured(&self) -> bool {
        self.pursuers
            .iter()
            .all(|p| manhattan_distance(*p, self.evader) < self.config.capture_radius)
    }

    /// Relocates `agent` if `target` is legal; otherwise counts a violation
    /// and leaves the agent where it was.
    pub fn apply_move(&self, agent: Agent, target: GridPoint) -> Result<(GameState, MoveVerdict)> {
        let mut next = self.clone();
        if self.is_legal_move(agent, target)? {
            match agent {
                Agent::Evader => next.evader = target,
                Agent::Pursuer(i) => next.pursuers[i] = target,
            }
            Ok((next, MoveVerdict::Legal))
        } else {
            next.violation_count += 1;
            Ok((next, MoveVerdict::Illegal))
        }
    }

    pub fn violations_exceeded(&self) -> bool {
        self.violation_count > self.config.violation_limit
    }

    /// The terminal outcome, if the game is over.
    pub fn outcome(&self) -> Option<GameOutcome> {
        let kind = if self.violations_exceeded() {
            OutcomeKind::FailureWithViolation
        } else if self.is_captured() {
            OutcomeKind::Success
        } else if self.step_count >= self.config.step_limit {
            OutcomeKind::FailureNoViolation
        } else {
            return None;
        };
        Some(GameOutcome {
            kind,
            steps: self.step_count,
        })
    }

    /// Canonical one-line rendering, used both as retrieval context and as
    /// the memorised-state key.
    pub fn render(&self) -> String {
        let pursuers: Vec<String> = self.pursuers.iter().map(ToString::to_string).collect();
        format!(
            "pursuers {} evader {} step {} violations {}",
            pursuers.join(" "),
            self.evader,
            self.step_count,
            self.violation_count
        )
    }
}

/// Deterministic evader: the legal move that maximises the minimum distance
/// to any pursuer, ties going to the smallest `(x, y)`.
pub fn evader_policy_greedy(state: &GameState) -> GridPoint {
    let moves = state
        .enumerate_legal_moves(Agent::Evader)
        .expect("evader is always a valid agent");
    let min_dist = |c: GridPoint| {
        state
            .pursuers
            .iter()
            .map(|p| manhattan_distance(*p, c))
            .min()
            .unwrap_or(u32::MAX)
    };
    let mut best: Option<(u32, GridPoint)> = None;
    // moves are sorted, so strict > keeps the lexicographically first maximiser
    for c in moves {
        let d = min_dist(c);
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, c));
        }
    }
    best.map_or(state.evader, |(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: i32, y: i32) -> GridPoint {
        GridPoint::new(x, y)
    }

    fn state(pursuers: [(i32, i32); 3], evader: (i32, i32), cfg: BoardConfig) -> GameState {
        GameState {
            pursuers: pursuers.iter().map(|&q| q.into()).collect(),
            evader: evader.into(),
            step_count: 0,
            violation_count: 0,
            config: cfg,
        }
    }

    /// Scans every board cell against the raw predicates.
    fn brute_force_moves(s: &GameState, agent: Agent) -> Vec<GridPoint> {
        let from = s.position(agent).unwrap();
        let budget = match agent {
            Agent::Pursuer(_) => s.config.pursuer_budget,
            Agent::Evader => s.config.evader_budget,
        };
        let mut out = Vec::new();
        for x in 0..s.config.width as i32 {
            for y in 0..s.config.height as i32 {
                let c = p(x, y);
                let d = (c.x - from.x).abs() + (c.y - from.y).abs();
                let restricted = s.config.restricted_area.is_some_and(|a| {
                    c.x >= a.min.x && c.x <= a.max.x && c.y >= a.min.y && c.y <= a.max.y
                });
                if d as u32 <= budget && !restricted && !(s.config.strict_moves && d == 0) {
                    out.push(c);
                }
            }
        }
        out
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan_distance(p(3, 8), p(20, 18)), 27);
        assert_eq!(manhattan_distance(p(5, 5), p(5, 5)), 0);
        assert_eq!(manhattan_distance(p(0, 0), p(2, 0)), 2);
    }

    #[test]
    fn corner_pursuer_has_six_moves() {
        let s = state([(0, 0), (5, 5), (6, 6)], (20, 20), BoardConfig::default());
        let moves = s.enumerate_legal_moves(Agent::Pursuer(0)).unwrap();
        assert_eq!(
            moves,
            vec![p(0, 0), p(0, 1), p(0, 2), p(1, 0), p(1, 1), p(2, 0)]
        );
        assert_eq!(moves, brute_force_moves(&s, Agent::Pursuer(0)));
    }

    #[test]
    fn evader_unit_neighbourhood() {
        let s = state([(0, 0), (1, 1), (2, 2)], (10, 10), BoardConfig::default());
        let moves = s.enumerate_legal_moves(Agent::Evader).unwrap();
        assert_eq!(
            moves,
            vec![p(9, 10), p(10, 9), p(10, 10), p(10, 11), p(11, 10)]
        );
    }

    #[test]
    fn pursuer_inside_restricted_area_has_no_moves() {
        let mut cfg = BoardConfig::default();
        cfg.restricted_area = Some(Rect::new(p(8, 8), p(12, 12)));
        let s = state([(10, 10), (0, 0), (1, 1)], (20, 20), cfg);
        let moves = s.enumerate_legal_moves(Agent::Pursuer(0)).unwrap();
        assert!(moves.is_empty());
        assert_eq!(moves, brute_force_moves(&s, Agent::Pursuer(0)));
    }

    #[test]
    fn centered_area_matches_default_placement() {
        assert_eq!(Rect::centered(21, 21, 5), Rect::new(p(8, 8), p(12, 12)));
    }

    #[test]
    fn invalid_agent_is_an_error() {
        let s = state([(0, 0), (1, 1), (2, 2)], (10, 10), BoardConfig::default());
        assert!(matches!(
            s.enumerate_legal_moves(Agent::Pursuer(3)),
            Err(Error::InvalidAgent(_))
        ));
    }

    #[test]
    fn capture_examples() {
        let cfg = BoardConfig::default();
        assert!(!state([(5, 5), (5, 7), (7, 6)], (6, 6), cfg).is_captured());
        assert!(state([(6, 5), (6, 7), (5, 6)], (6, 6), cfg).is_captured());
        assert!(state([(6, 6), (6, 7), (5, 6)], (6, 6), cfg).is_captured());
    }

    #[test]
    fn apply_move_legal_and_illegal() {
        let s = state([(0, 0), (5, 5), (6, 6)], (20, 20), BoardConfig::default());
        let (next, v) = s.apply_move(Agent::Pursuer(0), p(1, 1)).unwrap();
        assert_eq!(v, MoveVerdict::Legal);
        assert_eq!(next.pursuers[0], p(1, 1));
        assert_eq!(next.violation_count, 0);
        // input untouched
        assert_eq!(s.pursuers[0], p(0, 0));

        let (next, v) = s.apply_move(Agent::Pursuer(0), p(3, 0)).unwrap();
        assert_eq!(v, MoveVerdict::Illegal);
        assert_eq!(next.pursuers[0], p(0, 0));
        assert_eq!(next.violation_count, 1);
    }

    #[test]
    fn eighth_violation_ends_the_game() {
        let mut s = state([(0, 0), (5, 5), (6, 6)], (20, 20), BoardConfig::default());
        for i in 1..=8 {
            s = s.apply_move(Agent::Pursuer(0), p(-1, -1)).unwrap().0;
            if i <= 7 {
                assert_eq!(s.outcome(), None);
            }
        }
        assert_eq!(s.outcome().unwrap().kind, OutcomeKind::FailureWithViolation);
    }

    #[test]
    fn strict_mode_forbids_standing_still() {
        let mut cfg = BoardConfig::default();
        cfg.strict_moves = true;
        let s = state([(0, 0), (5, 5), (6, 6)], (20, 20), cfg);
        assert!(!s.is_legal_move(Agent::Pursuer(0), p(0, 0)).unwrap());
        assert_eq!(s.enumerate_legal_moves(Agent::Pursuer(0)).unwrap().len(), 5);
    }

    #[test]
    fn evader_flees_west_cluster() {
        let s = state([(5, 10), (5, 9), (5, 11)], (10, 10), BoardConfig::default());
        assert_eq!(evader_policy_greedy(&s), p(11, 10));
    }

    #[test]
    fn cornered_evader_takes_first_maximin_cell() {
        // brute force: (0,0) -> min 1, (0,1) -> min 0, (1,0) -> min 0
        let s = state([(1, 0), (0, 1), (1, 1)], (0, 0), BoardConfig::default());
        assert_eq!(evader_policy_greedy(&s), p(0, 0));
    }

    #[test]
    fn symmetric_pursuers_use_lexicographic_tiebreak() {
        // (9,10) and (11,10) both keep 7 units of clearance
        let s = state(
            [(10, 16), (10, 4), (10, 16)],
            (10, 10),
            BoardConfig::default(),
        );
        let moves = s.enumerate_legal_moves(Agent::Evader).unwrap();
        let score = |c: GridPoint| {
            s.pursuers
                .iter()
                .map(|q| manhattan_distance(*q, c))
                .min()
                .unwrap()
        };
        let best = moves.iter().map(|c| score(*c)).max().unwrap();
        let maximisers: Vec<_> = moves
            .iter()
            .copied()
            .filter(|c| score(*c) == best)
            .collect();
        assert_eq!(maximisers, vec![p(9, 10), p(11, 10)]);
        assert_eq!(evader_policy_greedy(&s), p(9, 10));
    }

    #[test]
    fn outcome_trichotomy_priority() {
        let mut cfg = BoardConfig::default();
        cfg.step_limit = 0;
        let s = state([(0, 0), (5, 5), (6, 6)], (20, 20), cfg);
        assert_eq!(s.outcome().unwrap().kind, OutcomeKind::FailureNoViolation);
        let s = state([(6, 5), (6, 7), (5, 6)], (6, 6), cfg);
        assert_eq!(s.outcome().unwrap().kind, OutcomeKind::Success);
    }

    #[test]
    fn path_field_routes_around_area() {
        let cfg = BoardConfig::with_restricted_center();
        let field = cfg.path_field(p(13, 10), cfg.restricted_area);
        // straight line blocked; detour over the top edge of the square
        assert_eq!(field.distance(p(7, 10)), 6 + 2 * 3);
        assert_eq!(field.distance(p(10, 10)), u32::MAX);
        let open = BoardConfig::default().path_field(p(13, 10), None);
        assert_eq!(open.distance(p(7, 10)), 6);
    }

    #[test]
    fn sampled_starts_are_valid() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cfg = BoardConfig::with_restricted_center();
        for _ in 0..200 {
            let s = GameState::sample(cfg, &mut rng).unwrap();
            assert!(!s.is_captured());
            let mut cells = s.pursuers.clone();
            cells.push(s.evader);
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), 4);
            assert!(cells
                .iter()
                .all(|c| cfg.in_bounds(*c) && !cfg.is_restricted(*c)));
        }
    }

    fn arb_point() -> impl Strategy<Value = GridPoint> {
        (0..21i32, 0..21i32).prop_map(|(x, y)| GridPoint::new(x, y))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn manhattan_is_a_metric(a in arb_point(), b in arb_point(), c in arb_point()) {
            prop_assert_eq!(manhattan_distance(a, b), manhattan_distance(b, a));
            prop_assert_eq!(manhattan_distance(a, b) == 0, a == b);
            prop_assert!(manhattan_distance(a, c) <= manhattan_distance(a, b) + manhattan_distance(b, c));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn legal_moves_match_brute_force(
            ps in proptest::collection::vec(arb_point(), 3),
            e in arb_point(),
            agent in 0usize..4,
            restricted in any::<bool>(),
            strict in any::<bool>(),
        ) {
            let mut cfg = BoardConfig::default();
            cfg.strict_moves = strict;
            if restricted {
                cfg.restricted_area = Some(Rect::centered(21, 21, 5));
            }
            let s = GameState { pursuers: ps, evader: e, step_count: 0, violation_count: 0, config: cfg };
            let agent = if agent == 3 { Agent::Evader } else { Agent::Pursuer(agent) };
            prop_assert_eq!(s.enumerate_legal_moves(agent).unwrap(), brute_force_moves(&s, agent));
        }

        #[test]
        fn apply_move_stays_on_legal_cells(
            ps in proptest::collection::vec(arb_point(), 3),
            e in arb_point(),
            tx in -3i32..24, ty in -3i32..24,
            agent in 0usize..4,
        ) {
            let cfg = BoardConfig::with_restricted_center();
            prop_assume!(!ps.iter().chain(std::iter::once(&e)).any(|c| cfg.is_restricted(*c)));
            let s = GameState { pursuers: ps, evader: e, step_count: 0, violation_count: 0, config: cfg };
            let agent = if agent == 3 { Agent::Evader } else { Agent::Pursuer(agent) };
            let (next, _) = s.apply_move(agent, GridPoint::new(tx, ty)).unwrap();
            let pos = next.position(agent).unwrap();
            prop_assert!(cfg.in_bounds(pos));
            prop_assert!(!cfg.is_restricted(pos));
        }

        #[test]
        fn capture_is_monotone(
            e in (2..19i32, 2..19i32),
            offsets in proptest::collection::vec((-2..=2i32, -2..=2i32), 3),
            who in 0usize..3,
            step in 0usize..4,
        ) {
            let e = GridPoint::new(e.0, e.1);
            let ps = offsets.iter().map(|(dx, dy)| GridPoint::new(e.x + dx, e.y + dy)).collect();
            let s = GameState { pursuers: ps, evader: e, step_count: 0, violation_count: 0, config: BoardConfig::default() };
            let from = s.pursuers[who];
            let (dx, dy) = [(1, 0), (-1, 0), (0, 1), (0, -1)][step];
            let closer = GridPoint::new(from.x + dx, from.y + dy);
            prop_assume!(manhattan_distance(closer, e) < manhattan_distance(from, e));
            let mut moved = s.clone();
            moved.pursuers[who] = closer;
            prop_assert!(!s.is_captured() || moved.is_captured());
        }
    }
}
