//! JSON run reports. A report is a pure function of the program and its
//! bindings, so two runs with the same seed serialize to the same bytes.
//! Wall time is only included when the caller asks for it.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::check::{compare, run, CheckError};
use crate::collectives::{CommCounts, LedgerEntry};
use crate::program::Program;
use crate::spmd::comm_summary;

/// Relative error accepted between simulated and reference values.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSummary {
    pub name: String,
    pub shape: String,
    pub sum: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommSection {
    /// Elements each processor moves, by mesh dimension, from the lowered
    /// program.
    pub per_mesh_dim: BTreeMap<String, CommCounts>,
    /// The largest per-processor total the simulator recorded.
    pub busiest_processor: CommCounts,
    pub processors: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceCheck {
    pub tolerance: f64,
    pub max_error: f64,
    pub passed: bool,
    pub node_errors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mesh: String,
    pub layout: String,
    pub instructions: usize,
    pub collectives: usize,
    pub outputs: Vec<OutputSummary>,
    pub communication: CommSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub check_against_reference: bool,
    pub timing: bool,
}

/// Lowers and executes a loaded program's outputs.
pub fn run_program(p: &Program, opts: RunOptions) -> Result<RunReport, CheckError> {
    let start = Instant::now();
    let (program, execution, reference) = if opts.check_against_reference {
        let cmp = compare(&p.graph, &p.layout, &p.mesh, &p.outputs, &p.bindings)?;
        let max_error = cmp.max_error();
        let check = ReferenceCheck {
            tolerance: ORACLE_TOLERANCE,
            max_error,
            passed: max_error <= ORACLE_TOLERANCE,
            node_errors: cmp.node_errors,
        };
        (cmp.program, cmp.execution, Some(check))
    } else {
        let (program, execution) = run(&p.graph, &p.layout, &p.mesh, &p.outputs, &p.bindings)?;
        (program, execution, None)
    };

    let mut outputs = Vec::new();
    for id in &p.outputs {
        let name = &p.graph.node(*id).name;
        let v = execution.assembled(&program, name)?;
        outputs.push(OutputSummary {
            name: name.clone(),
            shape: v.shape().to_string(),
            sum: v.data().iter().sum(),
            max_abs: v.data().iter().fold(0.0, |m, x| m.max(x.abs())),
        });
    }

    Ok(RunReport {
        mesh: p.mesh.to_string(),
        layout: p.layout.to_string(),
        instructions: program.instructions.len(),
        collectives: program.collectives().count(),
        outputs,
        communication: CommSection {
            per_mesh_dim: comm_summary(&program),
            busiest_processor: execution.ledger.busiest(),
            processors: execution.ledger.entries(&p.mesh),
        },
        reference,
        wall_time_seconds: opts.timing.then(|| start.elapsed().as_secs_f64()),
    })
}
