//! Dynamic dependency addition and removal, the brittle-predecessor
//! pre-propagation layer and its predicates.
//!
//! The functions here are the local halves of each handler. Awaiting replies
//! and relaying requests downstream is done by [`crate::node::QpropNode`].

mod handlers;
mod predicates;
mod prepropagation;

use serde::{Deserialize, Serialize};

use crate::ids::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DynamicOpKind {
    AddDependency,
    RemoveDependency,
    AddNode,
    RemoveNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpPhase {
    Requesting,
    PropagatingTables,
    Done,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicOpStatus {
    pub kind: DynamicOpKind,
    pub initiator: NodeId,
    pub phase: OpPhase,
}
