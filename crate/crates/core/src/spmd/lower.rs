use std::collections::BTreeMap;

use super::program::{BufId, CollectiveOp, Instruction, LoweredNode, LoweredProgram};
use super::LowerError;
use crate::ir::{union_shape, Graph, Node, NodeId, NodeKind, ReduceKind, Shape};
use crate::layout::{restrict, slice_shape, validate_layout, ComputationLayout, Mesh, TensorLayout};

/// Compiles the whole graph into one SPMD program.
pub fn lower(graph: &Graph, layout: &ComputationLayout, mesh: &Mesh) -> Result<LoweredProgram, LowerError> {
    lower_for(graph, layout, mesh, &graph.sinks())
}

/// Compiles only `outputs` and their transitive inputs.
pub fn lower_for(
    graph: &Graph,
    layout: &ComputationLayout,
    mesh: &Mesh,
    outputs: &[NodeId],
) -> Result<LoweredProgram, LowerError> {
    validate_layout(graph, layout, mesh).map_err(LowerError::IllegalLayout)?;
    let mut b = Builder {
        graph,
        layout,
        mesh,
        program: LoweredProgram {
            mesh: mesh.clone(),
            layout: layout.clone(),
            buffers: Vec::new(),
            instructions: Vec::new(),
            nodes: Vec::new(),
        },
        node_buf: BTreeMap::new(),
    };
    for id in graph.ancestors(outputs) {
        b.lower_node(graph.node(id))?;
    }
    Ok(b.program)
}

struct Builder<'a> {
    graph: &'a Graph,
    layout: &'a ComputationLayout,
    mesh: &'a Mesh,
    program: LoweredProgram,
    node_buf: BTreeMap<NodeId, BufId>,
}

impl Builder<'_> {
    fn buffer(&mut self, shape: Shape) -> BufId {
        self.program.buffers.push(shape);
        BufId(self.program.buffers.len() - 1)
    }

    fn emit(&mut self, inst: Instruction) -> BufId {
        let out = inst.output();
        self.program.instructions.push(inst);
        out
    }

    fn local_shape(&self, shape: &Shape) -> Result<Shape, LowerError> {
        Ok(slice_shape(shape, &restrict(self.layout, shape), self.mesh)?)
    }

    /// Mesh dimensions, in mesh order, that split any of `dims` and have
    /// more than one processor.
    fn mesh_dims_splitting(&self, dims: &[String]) -> Vec<String> {
        self.mesh
            .dims()
            .iter()
            .filter(|m| m.size > 1)
            .filter(|m| dims.iter().any(|d| self.layout.mesh_dim_for(d) == Some(m.name.as_str())))
            .map(|m| m.name.clone())
            .collect()
    }

    fn allreduce_over(&mut self, mut buf: BufId, mesh_dims: &[String], reduction: ReduceKind) -> BufId {
        for m in mesh_dims {
            let out = self.buffer(self.program.buffers[buf.0].clone());
            buf = self.emit(Instruction::Collective {
                collective: CollectiveOp::Allreduce { reduction },
                mesh_dim: m.clone(),
                operand: buf,
                output: out,
            });
        }
        buf
    }

    fn lower_node(&mut self, node: &Node) -> Result<(), LowerError> {
        let inputs: Vec<BufId> = node.inputs.iter().map(|i| self.node_buf[i]).collect();
        let local = self.local_shape(&node.shape)?;
        let result = match &node.kind {
            NodeKind::Input | NodeKind::Variable => {
                let output = self.buffer(local);
                self.emit(Instruction::Load { node: node.name.clone(), output })
            }
            NodeKind::Constant { value } => {
                let output = self.buffer(local);
                self.emit(Instruction::Fill { value: *value, output })
            }
            NodeKind::ComponentWise { op } => {
                let output = self.buffer(local);
                self.emit(Instruction::LocalComponentWise { op: *op, inputs, output })
            }
            NodeKind::Einsum => {
                let output = self.buffer(local);
                let partial = self.emit(Instruction::LocalEinsum { inputs, output });
                let shapes: Vec<&Shape> = node.inputs.iter().map(|i| self.graph.shape(*i)).collect();
                let reduced: Vec<String> = union_shape(&shapes)?
                    .names()
                    .filter(|n| !node.shape.contains(n))
                    .map(String::from)
                    .collect();
                let over = self.mesh_dims_splitting(&reduced);
                self.allreduce_over(partial, &over, ReduceKind::Sum)
            }
            NodeKind::Reduce { dims, reduction } => {
                let output = self.buffer(local);
                let partial = self.emit(Instruction::LocalReduce {
                    input: inputs[0],
                    dims: dims.clone(),
                    reduction: *reduction,
                    output,
                });
                let over = self.mesh_dims_splitting(dims);
                self.allreduce_over(partial, &over, *reduction)
            }
            NodeKind::ArgmaxMask { dims } => {
                let x_shape = self.graph.shape(node.inputs[0]);
                let split = restrict(self.layout, x_shape).assignments;
                let key_shape = self.program.buffers[inputs[1].0].clone();
                let key_buf = self.buffer(key_shape);
                let key = self.emit(Instruction::LocalArgmaxKey {
                    input: inputs[0],
                    max: inputs[1],
                    dims: dims.clone(),
                    split: split.clone(),
                    output: key_buf,
                });
                let over = self.mesh_dims_splitting(dims);
                let key = self.allreduce_over(key, &over, ReduceKind::Max);
                let output = self.buffer(local);
                self.emit(Instruction::LocalArgmaxSelect {
                    input: inputs[0],
                    max: inputs[1],
                    key,
                    dims: dims.clone(),
                    split,
                    output,
                })
            }
            NodeKind::Reshape => self.lower_reshape(node, inputs[0])?,
        };
        debug_assert_eq!(self.program.buffers[result.0], self.local_shape(&node.shape)?);
        self.node_buf.insert(node.id, result);
        self.program.nodes.push(LoweredNode {
            name: node.name.clone(),
            buffer: result,
            shape: node.shape.clone(),
            layout: restrict(self.layout, &node.shape),
        });
        Ok(())
    }

    /// Reshape, decomposed per mesh dimension into the three redistribution
    /// patterns: split in the input only (allgather), split in the output
    /// only (local slice), and different dimensions split across the same
    /// mesh dimension (alltoall). Steps run in the order allgathers,
    /// alltoalls, local reindex, slices.
    fn lower_reshape(&mut self, node: &Node, input: BufId) -> Result<BufId, LowerError> {
        let in_shape = self.graph.shape(node.inputs[0]).clone();
        let out_shape = node.shape.clone();
        let in_layout = restrict(self.layout, &in_shape);
        let out_layout = restrict(self.layout, &out_shape);
        let pairs = one_to_one_pairs(&in_shape, &out_shape);
        let out_of = |i: usize| pairs.iter().find(|p| p.0 == i).map(|p| p.1);
        let in_of = |o: usize| pairs.iter().find(|p| p.1 == o).map(|p| p.0);
        let unsupported = |reason: String| LowerError::UnsupportedReshape { node: node.name.clone(), reason };

        let mut gathers = Vec::new();
        let mut swaps = Vec::new();
        let mut slices = Vec::new();
        // Split state of the output dims after the local reindex.
        let mut mid_layout = TensorLayout::replicated(out_shape.rank());
        for m in self.mesh.dims().iter().filter(|m| m.size > 1) {
            let di = in_layout.position_of(&m.name);
            let d_o = out_layout.position_of(&m.name);
            match (di, d_o) {
                (None, None) => {}
                (Some(di), None) => gathers.push((m.name.clone(), di)),
                (None, Some(d_o)) => slices.push((m.name.clone(), d_o)),
                (Some(di), Some(d_o)) if out_of(di) == Some(d_o) => {
                    mid_layout.assignments[d_o] = Some(m.name.clone());
                }
                (Some(di), Some(d_o)) => {
                    let dk = in_of(d_o).ok_or_else(|| {
                        unsupported(format!(
                            "output dimension {} split on \"{}\" has no matching input dimension",
                            out_shape.dims()[d_o].name,
                            m.name
                        ))
                    })?;
                    if out_of(di).is_none() {
                        return Err(unsupported(format!(
                            "input dimension {} split on \"{}\" has no matching output dimension",
                            in_shape.dims()[di].name,
                            m.name
                        )));
                    }
                    if in_layout.assignments[dk].is_some() {
                        return Err(unsupported(format!(
                            "input dimension {} is already split on \"{}\"",
                            in_shape.dims()[dk].name,
                            in_layout.assignments[dk].as_deref().unwrap_or_default()
                        )));
                    }
                    swaps.push((m.name.clone(), dk, di));
                    mid_layout.assignments[d_o] = Some(m.name.clone());
                }
            }
        }

        let mut cur = input;
        for (m, di) in gathers {
            let size = self.mesh.size(&m).expect("validated");
            let shape = self.program.buffers[cur.0].clone();
            let grown = shape.with_size(di, shape.dims()[di].size * size);
            let out = self.buffer(grown);
            cur = self.emit(Instruction::Collective {
                collective: CollectiveOp::Allgather { dim: di },
                mesh_dim: m,
                operand: cur,
                output: out,
            });
        }
        for (m, dk, di) in swaps {
            let size = self.mesh.size(&m).expect("validated");
            let shape = self.program.buffers[cur.0].clone();
            let moved = shape
                .with_size(dk, shape.dims()[dk].size / size)
                .with_size(di, shape.dims()[di].size * size);
            let out = self.buffer(moved);
            cur = self.emit(Instruction::Collective {
                collective: CollectiveOp::Alltoall { split_dim: dk, concat_dim: di },
                mesh_dim: m,
                operand: cur,
                output: out,
            });
        }
        // Every remaining split sits on a one-to-one dimension pair, so the
        // row-major reinterpretation of the local block is exact.
        let mid_shape = slice_shape(&out_shape, &mid_layout, self.mesh)?;
        if self.program.buffers[cur.0].num_elements() != mid_shape.num_elements() {
            return Err(unsupported("local block sizes do not line up".into()));
        }
        let out = self.buffer(mid_shape);
        cur = self.emit(Instruction::LocalReshape { input: cur, output: out });
        for (m, d_o) in slices {
            let size = self.mesh.size(&m).expect("validated");
            let shape = self.program.buffers[cur.0].clone();
            let out = self.buffer(shape.with_size(d_o, shape.dims()[d_o].size / size));
            cur = self.emit(Instruction::LocalSlice { input: cur, dim: d_o, mesh_dim: m, output: out });
        }
        Ok(cur)
    }
}

/// Pairs `(input position, output position)` of dimensions that a reshape
/// carries over unchanged: factor groups holding exactly one dimension on
/// each side.
pub(crate) fn one_to_one_pairs(input: &Shape, output: &Shape) -> Vec<(usize, usize)> {
    let a = input.sizes();
    let b = output.sizes();
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < a.len() || j < b.len() {
        let (si, sj) = (i, j);
        let (mut pa, mut pb) = (1usize, 1usize);
        if i < a.len() {
            pa *= a[i];
            i += 1;
        }
        if j < b.len() {
            pb *= b[j];
            j += 1;
        }
        while pa != pb {
            if pa < pb && i < a.len() {
                pa *= a[i];
                i += 1;
            } else if j < b.len() {
                pb *= b[j];
                j += 1;
            } else {
                break;
            }
        }
        if i - si == 1 && j - sj == 1 {
            pairs.push((si, sj));
        }
    }
    pairs
}
