//! Running a laid-out graph on the simulator and on the single-device
//! reference, and comparing the two.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ir::{reference_execute_for, Bindings, Graph, IrError, NodeId};
use crate::layout::{ComputationLayout, Mesh};
use crate::spmd::{execute, lower_for, ExecError, Execution, LowerError, LoweredProgram};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

pub struct Comparison {
    pub program: LoweredProgram,
    pub execution: Execution,
    /// Largest element-wise relative error of every lowered node.
    pub node_errors: BTreeMap<String, f64>,
}

impl Comparison {
    pub fn max_error(&self) -> f64 {
        self.node_errors.values().copied().fold(0.0, f64::max)
    }
}

/// Lowers and executes `outputs` under `layout`, without the reference.
pub fn run(
    graph: &Graph,
    layout: &ComputationLayout,
    mesh: &Mesh,
    outputs: &[NodeId],
    bindings: &Bindings,
) -> Result<(LoweredProgram, Execution), CheckError> {
    let program = lower_for(graph, layout, mesh, outputs)?;
    let execution = execute(&program, bindings)?;
    Ok((program, execution))
}

/// Lowers, executes, and compares every lowered node with the reference.
pub fn compare(
    graph: &Graph,
    layout: &ComputationLayout,
    mesh: &Mesh,
    outputs: &[NodeId],
    bindings: &Bindings,
) -> Result<Comparison, CheckError> {
    let (program, execution) = run(graph, layout, mesh, outputs, bindings)?;
    let reference = reference_execute_for(graph, bindings, outputs)?;
    let mut node_errors = BTreeMap::new();
    for (id, expected) in &reference {
        let name = &graph.node(*id).name;
        let got = execution.assembled(&program, name)?;
        node_errors.insert(name.clone(), got.max_rel_error(expected));
    }
    Ok(Comparison { program, execution, node_errors })
}
