//! Lowers operator graphs onto the fabric as dependency-carrying command
//! schedules. Compilation is a pure function of (graph, placement, configs):
//! the same inputs always produce the same schedule.

pub mod composite;
pub mod graph;
mod lower;
pub mod schedule;

pub use graph::{
    apply_node, reference_execute, rotate_negacyclic, BufDecl, BufId, BufInit, NodeId, OpKind,
    OpNode, OperatorGraph,
};
pub use lower::{lower, pes_for_pair_block, NttSplit, TopologyConfig};
pub use schedule::{CmdId, CmdKind, Command, CommandSchedule, FuncOp, OpTag, OpTagKind, UopCensus};

use thiserror::Error;

use crate::kernels::KernelError;
use crate::layout::LayoutError;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("malformed graph: {0}")]
    BadGraph(String),
    #[error("layout does not support the operation: {0}")]
    LayoutMismatch(String),
    #[error("reduce operands not co-located: {0}")]
    NotCoLocated(String),
    #[error("no evaluation-key replica on chip pair {0}")]
    KeyMissing(u32),
    #[error("not enough chips: need {need}, have {have}")]
    InsufficientChips { need: u32, have: u32 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}
