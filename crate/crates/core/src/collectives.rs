//! Grouped collectives over mesh dimensions, simulated in-process, with
//! per-processor communication accounting.
//!
//! Accounting follows the bandwidth-optimal convention: an allreduce costs
//! each member one slice, an allgather costs `(g - 1)` slices and an
//! alltoall `(g - 1) / g` of a slice, where `g` is the group size. Groups of
//! one member move nothing and record nothing.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{kernels, IrError, ReduceKind, Shape, TensorValue};
use crate::layout::{Mesh, ProcessorCoord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollectiveError {
    #[error("mesh has no dimension {0:?}")]
    UnknownMeshDim(String),
    #[error("group over {mesh_dim:?} expects {expected} values, got {actual}")]
    WrongMemberCount { mesh_dim: String, expected: usize, actual: usize },
    #[error("member shapes differ across the group: {first} vs {other}")]
    ShapeMismatchAcrossGroup { first: Shape, other: Shape },
    #[error("dimension position {dim} is out of range for {shape}")]
    BadDimension { dim: usize, shape: Shape },
    #[error("alltoall split dimension of size {size} is not divisible by group size {group}")]
    NotDivisible { size: usize, group: usize },
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Processors that differ only in their coordinate along `mesh_dim`,
/// ordered by that coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub mesh_dim: String,
    pub members: Vec<ProcessorCoord>,
}

impl Group {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Partitions the mesh into groups along `mesh_dim`.
pub fn groups_for(mesh: &Mesh, mesh_dim: &str) -> Result<Vec<Group>, CollectiveError> {
    let pos = mesh
        .position(mesh_dim)
        .ok_or_else(|| CollectiveError::UnknownMeshDim(mesh_dim.to_string()))?;
    let mut groups: BTreeMap<Vec<usize>, Vec<ProcessorCoord>> = BTreeMap::new();
    for coord in mesh.coords() {
        let mut key = coord.0.clone();
        key.remove(pos);
        groups.entry(key).or_default().push(coord);
    }
    Ok(groups
        .into_values()
        .map(|mut members| {
            members.sort_by_key(|c| c.along(pos));
            Group { mesh_dim: mesh_dim.to_string(), members }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveKind {
    Allreduce,
    Allgather,
    Alltoall,
}

/// Element counts moved per processor, by collective kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommCounts {
    pub allreduce: u64,
    pub allgather: u64,
    pub alltoall: u64,
}

impl CommCounts {
    pub fn total(&self) -> u64 {
        self.allreduce + self.allgather + self.alltoall
    }

    pub fn add(&mut self, kind: CollectiveKind, elements: u64) {
        match kind {
            CollectiveKind::Allreduce => self.allreduce += elements,
            CollectiveKind::Allgather => self.allgather += elements,
            CollectiveKind::Alltoall => self.alltoall += elements,
        }
    }
}

impl AddAssign for CommCounts {
    fn add_assign(&mut self, o: Self) {
        self.allreduce += o.allreduce;
        self.allgather += o.allgather;
        self.alltoall += o.alltoall;
    }
}

/// Per-processor, per-mesh-dimension communication counters for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLedger {
    entries: BTreeMap<ProcessorCoord, BTreeMap<String, CommCounts>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    pub coord: Vec<usize>,
    pub by_mesh_dim: BTreeMap<String, CommCounts>,
    pub total: CommCounts,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, coord: &ProcessorCoord, mesh_dim: &str, kind: CollectiveKind, elements: u64) {
        if elements == 0 {
            return;
        }
        self.entries
            .entry(coord.clone())
            .or_default()
            .entry(mesh_dim.to_string())
            .or_default()
            .add(kind, elements);
    }

    pub fn by_mesh_dim(&self, coord: &ProcessorCoord) -> BTreeMap<String, CommCounts> {
        self.entries.get(coord).cloned().unwrap_or_default()
    }

    pub fn total(&self, coord: &ProcessorCoord) -> CommCounts {
        let mut t = CommCounts::default();
        for c in self.entries.get(coord).into_iter().flat_map(|m| m.values()) {
            t += *c;
        }
        t
    }

    /// Counts of the processor that communicated the most; the per-processor
    /// figure when all processors are symmetric.
    pub fn busiest(&self) -> CommCounts {
        self.entries
            .keys()
            .map(|c| self.total(c))
            .fold(CommCounts::default(), |best, t| if t.total() > best.total() { t } else { best })
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().flat_map(|m| m.values()).all(|c| c.total() == 0)
    }

    /// One entry per processor of `mesh`, in row-major coordinate order.
    pub fn entries(&self, mesh: &Mesh) -> Vec<LedgerEntry> {
        mesh.coords()
            .into_iter()
            .map(|c| LedgerEntry {
                by_mesh_dim: self.by_mesh_dim(&c),
                total: self.total(&c),
                coord: c.0,
            })
            .collect()
    }
}

fn check_group(group: &Group, values: &[TensorValue]) -> Result<(), CollectiveError> {
    if values.len() != group.len() {
        return Err(CollectiveError::WrongMemberCount {
            mesh_dim: group.mesh_dim.clone(),
            expected: group.len(),
            actual: values.len(),
        });
    }
    if let Some(first) = values.first() {
        for v in values {
            if v.shape() != first.shape() {
                return Err(CollectiveError::ShapeMismatchAcrossGroup {
                    first: first.shape().clone(),
                    other: v.shape().clone(),
                });
            }
        }
    }
    Ok(())
}

fn check_dim(v: &TensorValue, dim: usize) -> Result<(), CollectiveError> {
    if dim >= v.shape().rank() {
        return Err(CollectiveError::BadDimension { dim, shape: v.shape().clone() });
    }
    Ok(())
}

/// Element-wise reduction across the group, folded in ascending member
/// order; every member receives the same result.
pub fn allreduce(
    group: &Group,
    values: &[TensorValue],
    kind: ReduceKind,
    ledger: &mut CommLedger,
) -> Result<Vec<TensorValue>, CollectiveError> {
    check_group(group, values)?;
    if group.len() <= 1 {
        return Ok(values.to_vec());
    }
    let mut acc = values[0].clone();
    for v in &values[1..] {
        for (a, x) in acc.data_mut().iter_mut().zip(v.data()) {
            *a = kind.combine(*a, *x);
        }
    }
    let n = acc.len() as u64;
    for m in &group.members {
        ledger.record(m, &group.mesh_dim, CollectiveKind::Allreduce, n);
    }
    Ok(vec![acc; group.len()])
}

/// Every member receives all members' values concatenated along `concat_dim`.
pub fn allgather(
    group: &Group,
    values: &[TensorValue],
    concat_dim: usize,
    ledger: &mut CommLedger,
) -> Result<Vec<TensorValue>, CollectiveError> {
    check_group(group, values)?;
    if group.len() <= 1 {
        return Ok(values.to_vec());
    }
    check_dim(&values[0], concat_dim)?;
    let refs: Vec<&TensorValue> = values.iter().collect();
    let out = kernels::concat(&refs, concat_dim)?;
    let n = ((group.len() - 1) * values[0].len()) as u64;
    for m in &group.members {
        ledger.record(m, &group.mesh_dim, CollectiveKind::Allgather, n);
    }
    Ok(vec![out; group.len()])
}

/// Member `i` receives block `i` (along `split_dim`) of every member's value,
/// concatenated along `concat_dim` in member order.
pub fn alltoall(
    group: &Group,
    values: &[TensorValue],
    split_dim: usize,
    concat_dim: usize,
    ledger: &mut CommLedger,
) -> Result<Vec<TensorValue>, CollectiveError> {
    check_group(group, values)?;
    if group.len() <= 1 {
        return Ok(values.to_vec());
    }
    check_dim(&values[0], split_dim)?;
    check_dim(&values[0], concat_dim)?;
    let g = group.len();
    let size = values[0].shape().dims()[split_dim].size;
    if !size.is_multiple_of(g) {
        return Err(CollectiveError::NotDivisible { size, group: g });
    }
    let blocks: Vec<Vec<TensorValue>> = values
        .iter()
        .map(|v| kernels::split(v, split_dim, g))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(g);
    for i in 0..g {
        let parts: Vec<&TensorValue> = blocks.iter().map(|b| &b[i]).collect();
        out.push(kernels::concat(&parts, concat_dim)?);
    }
    let n = ((g - 1) * values[0].len() / g) as u64;
    for m in &group.members {
        ledger.record(m, &group.mesh_dim, CollectiveKind::Alltoall, n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(shape: &[(&str, usize)], data: &[&[f64]]) -> Vec<TensorValue> {
        let s = Shape::of(shape).unwrap();
        data.iter().map(|d| TensorValue::new(s.clone(), d.to_vec()).unwrap()).collect()
    }

    fn line(n: usize) -> (Mesh, Group) {
        let mesh = Mesh::of(&[("all", n)]).unwrap();
        let g = groups_for(&mesh, "all").unwrap().remove(0);
        (mesh, g)
    }

    #[test]
    fn groups_partition_the_mesh() {
        let mesh = Mesh::of(&[("rows", 2), ("cols", 3)]).unwrap();
        let gs = groups_for(&mesh, "cols").unwrap();
        assert_eq!(gs.len(), 2);
        assert!(gs.iter().all(|g| g.len() == 3));
        let mut all: Vec<_> = gs.iter().flat_map(|g| g.members.clone()).collect();
        all.sort();
        assert_eq!(all, mesh.coords());
        for g in &gs {
            assert!(g.members.iter().all(|m| m.0[0] == g.members[0].0[0]));
        }
        assert_eq!(groups_for(&Mesh::of(&[("all", 5)]).unwrap(), "all").unwrap().len(), 1);
        assert!(groups_for(&mesh, "planes").is_err());
    }

    #[test]
    fn size_one_dimension_gives_singletons() {
        let mesh = Mesh::of(&[("a", 3), ("b", 1)]).unwrap();
        let gs = groups_for(&mesh, "b").unwrap();
        assert_eq!(gs.len(), 3);
        let mut ledger = CommLedger::new();
        let v = vals(&[("x", 2)], &[&[1., 2.]]);
        assert_eq!(allreduce(&gs[0], &v, ReduceKind::Sum, &mut ledger).unwrap(), v);
        assert_eq!(allgather(&gs[0], &v, 0, &mut ledger).unwrap(), v);
        assert_eq!(alltoall(&gs[0], &v, 0, 0, &mut ledger).unwrap(), v);
        assert!(ledger.is_zero());
    }

    #[test]
    fn allreduce_sum_pair() {
        let (_, g) = line(2);
        let mut ledger = CommLedger::new();
        let out = allreduce(&g, &vals(&[("x", 2)], &[&[1., 2.], &[3., 4.]]), ReduceKind::Sum, &mut ledger).unwrap();
        assert_eq!(out[0].data(), &[4., 6.]);
        assert_eq!(out[1].data(), &[4., 6.]);
        assert_eq!(ledger.total(&g.members[0]).allreduce, 2);
    }

    #[test]
    fn allreduce_rejects_mixed_shapes() {
        let (_, g) = line(2);
        let a = TensorValue::zeros(Shape::of(&[("x", 2)]).unwrap());
        let b = TensorValue::zeros(Shape::of(&[("x", 3)]).unwrap());
        assert!(matches!(
            allreduce(&g, &[a, b], ReduceKind::Sum, &mut CommLedger::new()),
            Err(CollectiveError::ShapeMismatchAcrossGroup { .. })
        ));
    }

    #[test]
    fn allgather_pair() {
        let (_, g) = line(2);
        let mut ledger = CommLedger::new();
        let out = allgather(&g, &vals(&[("a", 2)], &[&[0., 1.], &[2., 3.]]), 0, &mut ledger).unwrap();
        assert_eq!(out[0].data(), &[0., 1., 2., 3.]);
        assert_eq!(out[0], out[1]);
        assert_eq!(ledger.total(&g.members[1]).allgather, 2);
    }

    #[test]
    fn alltoall_pair_exchanges_blocks() {
        let (_, g) = line(2);
        let mut ledger = CommLedger::new();
        let v = vals(&[("a", 2), ("b", 1)], &[&[10., 11.], &[20., 21.]]);
        let out = alltoall(&g, &v, 0, 1, &mut ledger).unwrap();
        // Member 0 gets [A[0], B[0]] along b, member 1 gets [A[1], B[1]].
        assert_eq!(out[0].shape(), &Shape::of(&[("a", 1), ("b", 2)]).unwrap());
        assert_eq!(out[0].data(), &[10., 20.]);
        assert_eq!(out[1].data(), &[11., 21.]);
        assert_eq!(ledger.total(&g.members[0]).alltoall, 1);
    }
}
