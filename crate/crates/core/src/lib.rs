pub mod autodiff;
pub mod check;
pub mod collectives;
pub mod corpus;
pub mod cost;
pub mod gradcheck;
pub mod ir;
pub mod layout;
pub mod models;
pub mod program;
pub mod report;
pub mod rng;
pub mod spmd;

pub use autodiff::{gradients, sgd_update, GradError, GradientMap};
pub use cost::{estimate, estimate_for, rank_layouts, CostError, CostReport, HardwareProfile};
pub use collectives::{CommCounts, CommLedger};
pub use ir::{Bindings, CwOp, Dimension, Graph, IrError, NodeId, NodeKind, ReduceKind, Shape, TensorValue};
pub use layout::{ComputationLayout, LayoutError, Mesh, ProcessorCoord, TensorLayout, Violation};
pub use spmd::{comm_summary, execute, lower, lower_for, LoweredProgram};
