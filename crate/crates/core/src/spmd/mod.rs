//! Compilation of (graph, layout, mesh) into a single per-processor program
//! of local slice operations and grouped collectives, and its simulated
//! execution.

mod exec;
mod lower;
mod program;

use thiserror::Error;

pub use exec::{execute, Execution};
pub use lower::{lower, lower_for};
pub use program::{comm_summary, comm_total, BufId, CollectiveOp, Instruction, LoweredNode, LoweredProgram};

use crate::collectives::CollectiveError;
use crate::ir::{IrError, Shape};
use crate::layout::{LayoutError, Violation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LowerError {
    #[error("illegal layout: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    IllegalLayout(Vec<Violation>),
    #[error("reshape {node} cannot be lowered: {reason}")]
    UnsupportedReshape { node: String, reason: String },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("no value bound for {0:?}")]
    MissingBinding(String),
    #[error("program has no node or mesh dimension {0:?}")]
    UnknownNode(String),
    #[error("buffer {buffer} read before definition at step {step}")]
    UndefinedBuffer { buffer: BufId, step: usize },
    #[error("step {step} produced shape {actual}, program expects {expected}")]
    InternalShapeMismatch { step: usize, expected: Shape, actual: Shape },
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Ir(#[from] IrError),
}
