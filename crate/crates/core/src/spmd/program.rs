use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::collectives::{CollectiveKind, CommCounts};
use crate::ir::{CwOp, ReduceKind, Shape};
use crate::layout::{ComputationLayout, Mesh, TensorLayout};

/// A processor-local buffer. Every processor owns one instance of each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct BufId(pub usize);

impl fmt::Display for BufId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollectiveOp {
    Allreduce { reduction: ReduceKind },
    Allgather { dim: usize },
    Alltoall { split_dim: usize, concat_dim: usize },
}

impl CollectiveOp {
    pub fn kind(&self) -> CollectiveKind {
        match self {
            CollectiveOp::Allreduce { .. } => CollectiveKind::Allreduce,
            CollectiveOp::Allgather { .. } => CollectiveKind::Allgather,
            CollectiveOp::Alltoall { .. } => CollectiveKind::Alltoall,
        }
    }
}

/// One step of the per-processor program. Operands are local buffers; the
/// only processor-dependent inputs are the processor's own coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "instr", rename_all = "snake_case")]
pub enum Instruction {
    /// The processor's slice of a bound input or variable.
    Load { node: String, output: BufId },
    Fill { value: f64, output: BufId },
    LocalComponentWise { op: CwOp, inputs: Vec<BufId>, output: BufId },
    LocalEinsum { inputs: Vec<BufId>, output: BufId },
    LocalReduce { input: BufId, dims: Vec<String>, reduction: ReduceKind, output: BufId },
    /// Keeps block `coord[mesh_dim]` of dimension position `dim`.
    LocalSlice { input: BufId, dim: usize, mesh_dim: String, output: BufId },
    LocalReshape { input: BufId, output: BufId },
    /// Per-fiber first-argmax key; `split` gives the mesh dimension (if any)
    /// splitting each dimension of `input`.
    LocalArgmaxKey { input: BufId, max: BufId, dims: Vec<String>, split: Vec<Option<String>>, output: BufId },
    LocalArgmaxSelect {
        input: BufId,
        max: BufId,
        key: BufId,
        dims: Vec<String>,
        split: Vec<Option<String>>,
        output: BufId,
    },
    Collective { collective: CollectiveOp, mesh_dim: String, operand: BufId, output: BufId },
}

impl Instruction {
    pub fn output(&self) -> BufId {
        match self {
            Instruction::Load { output, .. }
            | Instruction::Fill { output, .. }
            | Instruction::LocalComponentWise { output, .. }
            | Instruction::LocalEinsum { output, .. }
            | Instruction::LocalReduce { output, .. }
            | Instruction::LocalSlice { output, .. }
            | Instruction::LocalReshape { output, .. }
            | Instruction::LocalArgmaxKey { output, .. }
            | Instruction::LocalArgmaxSelect { output, .. }
            | Instruction::Collective { output, .. } => *output,
        }
    }

    pub fn operands(&self) -> Vec<BufId> {
        match self {
            Instruction::Load { .. } | Instruction::Fill { .. } => vec![],
            Instruction::LocalComponentWise { inputs, .. } | Instruction::LocalEinsum { inputs, .. } => inputs.clone(),
            Instruction::LocalReduce { input, .. }
            | Instruction::LocalSlice { input, .. }
            | Instruction::LocalReshape { input, .. } => vec![*input],
            Instruction::LocalArgmaxKey { input, max, .. } => vec![*input, *max],
            Instruction::LocalArgmaxSelect { input, max, key, .. } => vec![*input, *max, *key],
            Instruction::Collective { operand, .. } => vec![*operand],
        }
    }

    pub fn is_collective(&self) -> bool {
        matches!(self, Instruction::Collective { .. })
    }
}

/// Where a graph node's value lives after lowering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoweredNode {
    pub name: String,
    pub buffer: BufId,
    pub shape: Shape,
    pub layout: TensorLayout,
}

/// The single program every processor runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoweredProgram {
    pub mesh: Mesh,
    pub layout: ComputationLayout,
    /// Local shape of each buffer, indexed by [`BufId`].
    pub buffers: Vec<Shape>,
    pub instructions: Vec<Instruction>,
    /// Lowered graph nodes, in topological order.
    pub nodes: Vec<LoweredNode>,
}

impl LoweredProgram {
    pub fn node(&self, name: &str) -> Option<&LoweredNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn buffer_shape(&self, b: BufId) -> &Shape {
        &self.buffers[b.0]
    }

    pub fn collectives(&self) -> impl Iterator<Item = &Instruction> {
        self.instructions.iter().filter(|i| i.is_collective())
    }

    /// Stable JSON form, used for golden comparisons.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }
}

/// Static per-processor communication volume of a program, keyed by mesh
/// dimension. Every processor sends the same amount, so one table suffices.
pub fn comm_summary(program: &LoweredProgram) -> BTreeMap<String, CommCounts> {
    let mut out: BTreeMap<String, CommCounts> = BTreeMap::new();
    for inst in &program.instructions {
        let Instruction::Collective { collective, mesh_dim, operand, .. } = inst else { continue };
        let g = program.mesh.size(mesh_dim).unwrap_or(1) as u64;
        if g <= 1 {
            continue;
        }
        let slice = program.buffer_shape(*operand).num_elements() as u64;
        let n = match collective {
            CollectiveOp::Allreduce { .. } => slice,
            CollectiveOp::Allgather { .. } => (g - 1) * slice,
            CollectiveOp::Alltoall { .. } => (g - 1) * slice / g,
        };
        out.entry(mesh_dim.clone()).or_default().add(collective.kind(), n);
    }
    out
}

/// Sum of [`comm_summary`] over mesh dimensions.
pub fn comm_total(program: &LoweredProgram) -> CommCounts {
    let mut t = CommCounts::default();
    for c in comm_summary(program).values() {
        t += *c;
    }
    t
}
