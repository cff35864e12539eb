//! QPROP node state and its three phases: exploration, barrier and
//! propagation.

mod propagation;
mod state;

use thiserror::Error;

use crate::ids::NodeId;

pub use propagation::{
    candidate_combinations, glitch_free_filter, merge_sclocks, select_last_match, Combination,
};
pub use state::{NodeConfig, NodeState, DEFAULT_SEARCH_BUDGET, STORE_WARNING};
pub(crate) use state::insert_ordered;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{0} already initialised")]
    AlreadyInitialized(NodeId),
    #[error("{node}: {pred} is not a direct predecessor")]
    UnknownPredecessor { node: NodeId, pred: NodeId },
    #[error("{0}: barrier not passed")]
    BarrierNotPassed(NodeId),
    #[error("{0} is not a source")]
    NotASource(NodeId),
    #[error("no glitch-free match to select from")]
    EmptyMatches,
    #[error("arguments disagree on the clock of {source_node} ({a} vs {b})")]
    InconsistentOverlap { source_node: NodeId, a: u64, b: u64 },
    #[error("{node}: argument search exceeded {budget} steps")]
    CombinationCapExceeded { node: NodeId, budget: u64 },
    #[error("{node}: {stored} values stored for {pred}, bound {bound}; stall suspected")]
    StallSuspected { node: NodeId, pred: NodeId, stored: usize, bound: usize },
    #[error("{node}: {pred} is not brittle")]
    NotBrittle { node: NodeId, pred: NodeId },
    #[error("{node}: {pred} is not a predecessor")]
    NotAPredecessor { node: NodeId, pred: NodeId },
    #[error("{node}: protocol violation: {detail}")]
    Protocol { node: NodeId, detail: String },
}
