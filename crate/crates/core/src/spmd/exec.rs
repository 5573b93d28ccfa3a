use std::collections::BTreeMap;

use super::program::{BufId, CollectiveOp, Instruction, LoweredProgram};
use super::ExecError;
use crate::collectives::{allgather, allreduce, alltoall, groups_for, CommLedger};
use crate::ir::kernels::{self, Placement};
use crate::ir::{Bindings, TensorValue};
use crate::layout::{assemble, extract_slice, Mesh, ProcessorCoord, TensorLayout};

/// Every processor's buffers after a simulated run, plus the ledger.
#[derive(Debug, Clone)]
pub struct Execution {
    coords: Vec<ProcessorCoord>,
    /// `buffers[p][b]` is buffer `b` on processor `p`.
    buffers: Vec<Vec<Option<TensorValue>>>,
    pub ledger: CommLedger,
}

impl Execution {
    /// The value of buffer `buf` on every processor.
    pub fn slices(&self, buf: BufId) -> BTreeMap<ProcessorCoord, TensorValue> {
        self.coords
            .iter()
            .zip(&self.buffers)
            .filter_map(|(c, bs)| bs[buf.0].clone().map(|v| (c.clone(), v)))
            .collect()
    }

    /// Per-processor slices of a lowered graph node.
    pub fn node_slices(
        &self,
        program: &LoweredProgram,
        name: &str,
    ) -> Result<BTreeMap<ProcessorCoord, TensorValue>, ExecError> {
        let node = program.node(name).ok_or_else(|| ExecError::UnknownNode(name.to_string()))?;
        Ok(self.slices(node.buffer))
    }

    /// The full tensor of a lowered graph node, rebuilt from its slices.
    pub fn assembled(&self, program: &LoweredProgram, name: &str) -> Result<TensorValue, ExecError> {
        let node = program.node(name).ok_or_else(|| ExecError::UnknownNode(name.to_string()))?;
        Ok(assemble(&self.slices(node.buffer), &node.layout, &program.mesh, &node.shape)?)
    }
}

fn placement(local: &TensorValue, split: &[Option<String>], mesh: &Mesh, coord: &ProcessorCoord) -> Placement {
    let mut offsets = Vec::with_capacity(split.len());
    let mut extents = Vec::with_capacity(split.len());
    for (d, s) in local.shape().dims().iter().zip(split) {
        match s.as_deref().and_then(|m| mesh.position(m).map(|p| (p, mesh.dims()[p].size))) {
            Some((pos, n)) => {
                offsets.push(coord.along(pos) * d.size);
                extents.push(d.size * n);
            }
            None => {
                offsets.push(0);
                extents.push(d.size);
            }
        }
    }
    Placement { offsets, extents }
}

/// Runs the program on every processor of the mesh in lockstep. Collectives
/// act as barriers for their groups; everything else is processor-local.
pub fn execute(program: &LoweredProgram, bindings: &Bindings) -> Result<Execution, ExecError> {
    let mesh = &program.mesh;
    let coords = mesh.coords();
    let mut buffers: Vec<Vec<Option<TensorValue>>> = vec![vec![None; program.buffers.len()]; coords.len()];
    let mut ledger = CommLedger::new();
    let layouts: BTreeMap<&str, &TensorLayout> = program.nodes.iter().map(|n| (n.name.as_str(), &n.layout)).collect();

    for (step, inst) in program.instructions.iter().enumerate() {
        let out = inst.output();
        if let Instruction::Collective { collective, mesh_dim, operand, .. } = inst {
            let p_index: BTreeMap<&ProcessorCoord, usize> = coords.iter().enumerate().map(|(i, c)| (c, i)).collect();
            for group in groups_for(mesh, mesh_dim)? {
                let members: Vec<usize> = group.members.iter().map(|c| p_index[c]).collect();
                let values: Vec<TensorValue> = members
                    .iter()
                    .map(|&p| take(&buffers[p], *operand, step))
                    .collect::<Result<_, _>>()?;
                let results = match collective {
                    CollectiveOp::Allreduce { reduction } => allreduce(&group, &values, *reduction, &mut ledger)?,
                    CollectiveOp::Allgather { dim } => allgather(&group, &values, *dim, &mut ledger)?,
                    CollectiveOp::Alltoall { split_dim, concat_dim } => {
                        alltoall(&group, &values, *split_dim, *concat_dim, &mut ledger)?
                    }
                };
                for (p, v) in members.into_iter().zip(results) {
                    check(program, out, &v, step)?;
                    buffers[p][out.0] = Some(v);
                }
            }
            continue;
        }
        for (p, coord) in coords.iter().enumerate() {
            let bufs = &buffers[p];
            let arg = |b: BufId| take(bufs, b, step);
            let v = match inst {
                Instruction::Load { node, .. } => {
                    let value = bindings.get(node).ok_or_else(|| ExecError::MissingBinding(node.clone()))?;
                    let layout = layouts.get(node.as_str()).ok_or_else(|| ExecError::UnknownNode(node.clone()))?;
                    extract_slice(value, layout, mesh, coord)?
                }
                Instruction::Fill { value, .. } => TensorValue::filled(program.buffer_shape(out).clone(), *value),
                Instruction::LocalComponentWise { op, inputs, .. } => {
                    let args: Vec<TensorValue> = inputs.iter().map(|b| arg(*b)).collect::<Result<_, _>>()?;
                    let refs: Vec<&TensorValue> = args.iter().collect();
                    kernels::componentwise(*op, &refs)?
                }
                Instruction::LocalEinsum { inputs, .. } => {
                    let args: Vec<TensorValue> = inputs.iter().map(|b| arg(*b)).collect::<Result<_, _>>()?;
                    let refs: Vec<&TensorValue> = args.iter().collect();
                    kernels::einsum(&refs, program.buffer_shape(out))?
                }
                Instruction::LocalReduce { input, dims, reduction, .. } => kernels::reduce(&arg(*input)?, dims, *reduction)?,
                Instruction::LocalSlice { input, dim, mesh_dim, .. } => {
                    let pos = mesh.position(mesh_dim).ok_or_else(|| ExecError::UnknownNode(mesh_dim.clone()))?;
                    let parts = kernels::split(&arg(*input)?, *dim, mesh.dims()[pos].size)?;
                    parts.into_iter().nth(coord.along(pos)).expect("coordinate in range")
                }
                Instruction::LocalReshape { input, .. } => arg(*input)?.reshaped(program.buffer_shape(out).clone())?,
                Instruction::LocalArgmaxKey { input, max, dims, split, .. } => {
                    let x = arg(*input)?;
                    let at = placement(&x, split, mesh, coord);
                    kernels::argmax_key(&x, &arg(*max)?, dims, &at)
                }
                Instruction::LocalArgmaxSelect { input, max, key, dims, split, .. } => {
                    let x = arg(*input)?;
                    let at = placement(&x, split, mesh, coord);
                    kernels::argmax_select(&x, &arg(*max)?, &arg(*key)?, dims, &at)
                }
                Instruction::Collective { .. } => unreachable!(),
            };
            check(program, out, &v, step)?;
            buffers[p][out.0] = Some(v);
        }
    }
    Ok(Execution { coords, buffers, ledger })
}

fn take(bufs: &[Option<TensorValue>], b: BufId, step: usize) -> Result<TensorValue, ExecError> {
    bufs[b.0].clone().ok_or(ExecError::UndefinedBuffer { buffer: b, step })
}

fn check(program: &LoweredProgram, out: BufId, v: &TensorValue, step: usize) -> Result<(), ExecError> {
    let expected = program.buffer_shape(out);
    if v.shape() != expected {
        return Err(ExecError::InternalShapeMismatch {
            step,
            expected: expected.clone(),
            actual: v.shape().clone(),
        });
    }
    Ok(())
}
