//! Named-dimension tensor graphs: shapes, nodes, shape inference and a
//! single-device reference executor.

mod graph;
pub mod kernels;
mod reference;
mod shape;
mod value;

use thiserror::Error;

pub use graph::{broadcast_shape, infer_shape, union_shape, CwOp, Graph, Node, NodeId, NodeKind, ReduceKind};
pub use reference::{reference_execute, reference_execute_for, Bindings};
pub use shape::{Dimension, Shape};
pub use value::TensorValue;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrError {
    #[error("invalid dimension name {0:?}")]
    InvalidDimName(String),
    #[error("dimension {0:?} has size zero")]
    ZeroSizedDim(String),
    #[error("dimension {0:?} appears twice in one shape")]
    DuplicateDimName(String),
    #[error("dimension {name:?} used with sizes {first} and {second}")]
    DimSizeMismatch { name: String, first: usize, second: usize },
    #[error("cannot broadcast {left} with {right}: neither dimension set contains the other")]
    BroadcastIncompatible { left: Shape, right: Shape },
    #[error("reshape from {from} to {to} changes the element count")]
    ReshapeCountMismatch { from: Shape, to: Shape },
    #[error("einsum output dimension {0:?} does not occur in any input")]
    UnknownOutputDim(String),
    #[error("reduced dimension {0:?} is not in the input shape")]
    ReduceDimMissing(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node name {0:?} is already taken")]
    DuplicateNodeName(String),
    #[error("invalid node name {0:?}")]
    InvalidNodeName(String),
    #[error("{op} takes {expected} inputs, got {actual}")]
    Arity { op: String, expected: usize, actual: usize },
    #[error("this node kind needs an explicit output shape")]
    MissingDeclaredShape,
    #[error("data has {actual} elements, shape needs {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("no value bound for {0:?}")]
    MissingBinding(String),
    #[error("{node}: expected shape {expected}, got {actual}")]
    ShapeMismatch { node: String, expected: Shape, actual: Shape },
}
