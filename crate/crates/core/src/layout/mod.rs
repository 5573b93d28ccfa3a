//! Meshes, computation layouts, legality checks and slice arithmetic.

mod enumerate;
mod layout;
mod mesh;
mod slicing;

use thiserror::Error;

pub use enumerate::{enumerate_layouts, MAX_CANDIDATES};
pub use layout::{restrict, validate_layout, ComputationLayout, TensorLayout, Violation};
pub use mesh::{Mesh, MeshDim, ProcessorCoord};
pub use slicing::{assemble, block_offsets, extract_slice, slice_shape};

use crate::ir::Shape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("invalid mesh dimension {0:?}")]
    InvalidMeshDim(String),
    #[error("mesh dimension {0:?} declared twice")]
    DuplicateMeshDim(String),
    #[error("tensor dimension {0:?} has two layout rules")]
    DuplicateRule(String),
    #[error("mesh has no dimension {0:?}")]
    UnknownMeshDim(String),
    #[error("dimension {dim} of size {size} is not divisible by mesh size {mesh_size}")]
    NotDivisible { dim: String, size: usize, mesh_size: usize },
    #[error("processor coordinate {0} is outside the mesh")]
    CoordOutOfRange(ProcessorCoord),
    #[error("no slice for processor {0}")]
    MissingSlice(ProcessorCoord),
    #[error("slice on processor {coord} has shape {actual}, expected {expected}")]
    SliceShape { coord: ProcessorCoord, expected: Shape, actual: Shape },
    #[error("replica on processor {coord} disagrees at element {index}")]
    ReplicaDivergence { coord: ProcessorCoord, index: usize },
    #[error("too many candidate layouts ({dims} dimensions, mesh rank {mesh_rank})")]
    EnumerationTooLarge { dims: usize, mesh_rank: usize },
}
