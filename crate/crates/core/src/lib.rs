//! Logic-distillation planning pipeline and its pursuit-game testbed.
//!
//! A planner solves each step of a task by running a fixed sequence of
//! stages. At every stage a retriever ranks the functions of a
//! [`FunctionBase`] against a stage query, a selector picks one, and the
//! picked function transforms the previous stage's value. Baselines that
//! imitate final moves instead of selecting functions run on the same
//! harness so the approaches can be compared on success rate, rule
//! violations and steps to capture.

pub mod entropy;
pub mod error;
pub mod function_base;
pub mod grid;
pub mod harness;
pub mod planner;
pub mod policies;
pub mod retriever;

pub use error::{Error, Result};
pub use function_base::{
    build_default_base, FunctionBase, FunctionSpec, ManualEntry, StageTag, StageValue, TaskContext,
};
pub use grid::{
    manhattan_distance, Agent, BoardConfig, GameOutcome, GameState, GridPoint, MoveVerdict,
    OutcomeKind, Rect,
};
pub use harness::{run_tournament, MetricsReport, TournamentConfig};
pub use planner::{Controller, EpisodeTrace, Planner, TaskSpec};
pub use policies::{MemorizedCorpus, MoveEncoding, PolicySpec};
pub use retriever::{EmbeddingVector, RankedCandidates, RetrievalQuery, Retriever};
