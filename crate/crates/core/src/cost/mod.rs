//! Per-processor cost estimates for a laid-out graph.
//!
//! Every quantity is computed twice from the same lowered program: once as
//! an exact count for the concrete sizes, and once as a [`Poly`] over the
//! dimension and mesh sizes. The symbolic form is split into leading terms
//! and lower-order terms so asymptotic formulas can be compared directly.
//!
//! FLOPs count einsums only, two per multiply-add. Communication uses the
//! same per-processor element convention as the simulator's ledger, so the
//! static figure equals the measured one. Memory is the peak of live local
//! buffers over the program's instruction order.

mod poly;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use poly::{Monomial, Poly, Symbol};

use crate::collectives::CommCounts;
use crate::ir::{union_shape, Graph, NodeId, NodeKind, Shape};
use crate::layout::{ComputationLayout, Mesh};
use crate::spmd::{comm_summary, lower_for, BufId, CollectiveOp, Instruction, LowerError, LoweredProgram};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),
}

/// Seconds per FLOP and seconds per communicated element per link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardwareProfile {
    pub seconds_per_flop: f64,
    pub seconds_per_element: f64,
}

impl HardwareProfile {
    pub fn new(seconds_per_flop: f64, seconds_per_element: f64) -> Result<Self, CostError> {
        for (name, v) in [("seconds per flop", seconds_per_flop), ("seconds per element", seconds_per_element)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostError::InvalidProfile(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { seconds_per_flop, seconds_per_element })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Seconds {
    pub compute: f64,
    pub communication: f64,
    /// Compute plus communication, with no overlap.
    pub total: f64,
}

/// A symbolic quantity split into its asymptotically dominant part and the
/// rest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Terms {
    pub leading: Poly,
    pub lower_order: Poly,
}

impl Terms {
    fn of(p: Poly) -> Self {
        Self { leading: p.leading(), lower_order: p.lower_order() }
    }

    pub fn total(&self) -> Poly {
        self.leading.clone() + self.lower_order.clone()
    }
}

/// Peak memory in two symbolic forms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryCost {
    /// Buffers live at the instruction attaining the peak for these sizes.
    pub at_peak: Terms,
    /// Leading terms of the envelope of all live sets: the peak's growth
    /// whichever instruction attains it.
    pub asymptotic: Poly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolicCost {
    pub flops: Terms,
    pub comm: Terms,
    pub memory: MemoryCost,
    pub memory_forward: MemoryCost,
    /// Leading communication over leading computation, available when the
    /// leading FLOP count is a single term.
    pub ratio: Option<Poly>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub layout: ComputationLayout,
    pub mesh: Mesh,
    pub flops_per_processor: u64,
    pub comm_elements_per_processor: BTreeMap<String, CommCounts>,
    pub comm_total: u64,
    pub peak_memory_elements_per_processor: u64,
    /// Peak memory of the part of the graph before any gradient nodes.
    pub peak_memory_forward: u64,
    pub ratio: f64,
    pub symbolic: SymbolicCost,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<Seconds>,
}

/// Estimates the cost of computing every sink of `graph`.
pub fn estimate(
    graph: &Graph,
    layout: &ComputationLayout,
    mesh: &Mesh,
    profile: Option<&HardwareProfile>,
) -> Result<CostReport, CostError> {
    estimate_for(graph, layout, mesh, &graph.sinks(), profile)
}

/// Estimates the cost of computing `outputs` and their transitive inputs.
pub fn estimate_for(
    graph: &Graph,
    layout: &ComputationLayout,
    mesh: &Mesh,
    outputs: &[NodeId],
    profile: Option<&HardwareProfile>,
) -> Result<CostReport, CostError> {
    let program = lower_for(graph, layout, mesh, outputs)?;
    let sym = Sizer { graph, layout, mesh };

    let flops_poly = flops(&program, &sym);
    let comm_poly = comm(&program, &sym);
    let (memory, memory_poly) = peak_memory(&program, graph, outputs, &sym);
    let forward_outputs = forward_sinks(graph, outputs);
    let (memory_forward, memory_forward_poly) = if forward_outputs.as_slice() == outputs {
        (memory, memory_poly.clone())
    } else {
        let fwd = lower_for(graph, layout, mesh, &forward_outputs)?;
        peak_memory(&fwd, graph, &forward_outputs, &sym)
    };

    let values = sym.values();
    let flops_n = flops_poly.eval(&values).round() as u64;
    let comm_by_dim = comm_summary(&program);
    let comm_total: u64 = comm_by_dim.values().map(CommCounts::total).sum();
    let ratio = match (comm_total, flops_n) {
        (0, _) => 0.0,
        (c, 0) => c as f64 * f64::INFINITY,
        (c, f) => c as f64 / f as f64,
    };
    let flops_terms = Terms::of(flops_poly);
    let comm_terms = Terms::of(comm_poly);
    let ratio_poly = match flops_terms.leading.terms().collect::<Vec<_>>().as_slice() {
        [(m, c)] => Some(comm_terms.leading.div_monomial(m).scale(1.0 / c)),
        _ => None,
    };
    let seconds = profile.map(|p| {
        let compute = p.seconds_per_flop * flops_n as f64;
        let communication = p.seconds_per_element * comm_total as f64;
        Seconds { compute, communication, total: compute + communication }
    });
    Ok(CostReport {
        layout: layout.clone(),
        mesh: mesh.clone(),
        flops_per_processor: flops_n,
        comm_elements_per_processor: comm_by_dim,
        comm_total,
        peak_memory_elements_per_processor: memory,
        peak_memory_forward: memory_forward,
        ratio,
        symbolic: SymbolicCost {
            flops: flops_terms,
            comm: comm_terms,
            memory: memory_poly,
            memory_forward: memory_forward_poly,
            ratio: ratio_poly,
        },
        seconds,
    })
}

/// Sinks of the forward part of the computation needed for `outputs`.
fn forward_sinks(graph: &Graph, outputs: &[NodeId]) -> Vec<NodeId> {
    let Some(start) = graph.backward_start() else { return outputs.to_vec() };
    let needed = graph.ancestors(outputs);
    let forward: BTreeSet<NodeId> = needed.iter().copied().filter(|id| id.0 < start).collect();
    let consumed: BTreeSet<NodeId> = forward.iter().flat_map(|id| graph.node(*id).inputs.clone()).collect();
    forward.into_iter().filter(|id| !consumed.contains(id)).collect()
}

/// Translates local buffer shapes into symbolic sizes.
struct Sizer<'a> {
    graph: &'a Graph,
    layout: &'a ComputationLayout,
    mesh: &'a Mesh,
}

impl Sizer<'_> {
    fn shape(&self, local: &Shape) -> Poly {
        let mut m = Monomial::one();
        let mut coef = 1.0;
        for d in local.dims() {
            let Some(&global) = self.graph.dim_sizes().get(&d.name) else {
                coef *= d.size as f64;
                continue;
            };
            m = m.mul(&Monomial::symbol(Symbol::Dim(d.name.clone())));
            let ratio = global / d.size;
            let by_rule = self.layout.mesh_dim_for(&d.name).filter(|md| self.mesh.size(md) == Some(ratio));
            let splitter = by_rule.or_else(|| {
                (ratio > 1).then(|| self.mesh.dims().iter().find(|md| md.size == ratio).map(|md| md.name.as_str()))?
            });
            match splitter {
                Some(md) => m = m.div(&Monomial::symbol(Symbol::Mesh(md.to_string()))),
                None => coef /= ratio as f64,
            }
        }
        Poly::term(coef, m)
    }

    fn buffer(&self, program: &LoweredProgram, b: BufId) -> Poly {
        self.shape(program.buffer_shape(b))
    }

    fn mesh_size(&self, name: &str) -> Poly {
        Poly::symbol(Symbol::Mesh(name.to_string()))
    }

    fn values(&self) -> impl Fn(&Symbol) -> f64 + '_ {
        move |s| match s {
            Symbol::Dim(d) => self.graph.dim_sizes().get(d).copied().unwrap_or(1) as f64,
            Symbol::Mesh(m) => self.mesh.size(m).unwrap_or(1) as f64,
        }
    }
}

fn flops(program: &LoweredProgram, sym: &Sizer) -> Poly {
    program
        .instructions
        .iter()
        .filter_map(|inst| match inst {
            Instruction::LocalEinsum { inputs, .. } => {
                let shapes: Vec<&Shape> = inputs.iter().map(|b| program.buffer_shape(*b)).collect();
                let union = union_shape(&shapes).expect("lowered einsum operands are consistent");
                Some(sym.shape(&union).scale(2.0))
            }
            _ => None,
        })
        .sum()
}

fn comm(program: &LoweredProgram, sym: &Sizer) -> Poly {
    program
        .instructions
        .iter()
        .filter_map(|inst| {
            let Instruction::Collective { collective, mesh_dim, operand, .. } = inst else { return None };
            if program.mesh.size(mesh_dim).unwrap_or(1) <= 1 {
                return None;
            }
            let slice = sym.buffer(program, *operand);
            let g = sym.mesh_size(mesh_dim);
            Some(match collective {
                CollectiveOp::Allreduce { .. } => slice,
                CollectiveOp::Allgather { .. } => &slice * &(g - Poly::constant(1.0)),
                CollectiveOp::Alltoall { .. } => {
                    slice.clone() - slice.div_monomial(&Monomial::symbol(Symbol::Mesh(mesh_dim.clone())))
                }
            })
        })
        .sum()
}

/// Peak of live buffer sizes over the instruction sequence. Loaded inputs
/// and parameters stay resident for the whole program, as do the buffers
/// holding `outputs`; every other buffer is live from the instruction that
/// writes it to its last reader. Returns the exact peak and its symbolic
/// forms; the live set is taken at the first instruction attaining it.
fn peak_memory(program: &LoweredProgram, graph: &Graph, outputs: &[NodeId], sym: &Sizer) -> (u64, MemoryCost) {
    let n = program.instructions.len();
    let mut def = vec![usize::MAX; program.buffers.len()];
    let mut last = vec![0usize; program.buffers.len()];
    for (i, inst) in program.instructions.iter().enumerate() {
        let out = inst.output().0;
        def[out] = i;
        last[out] = last[out].max(i);
        if matches!(inst, Instruction::Load { .. }) {
            last[out] = n;
        }
        for b in inst.operands() {
            last[b.0] = last[b.0].max(i);
        }
    }
    for id in outputs {
        if let Some(node) = program.node(&graph.node(*id).name) {
            last[node.buffer.0] = n;
        }
    }
    let sizes: Vec<u64> = program.buffers.iter().map(|s| s.num_elements() as u64).collect();
    let (def, last) = (&def, &last);
    let live_at = |i: usize| (0..program.buffers.len()).filter(move |&b| def[b] <= i && i <= last[b]);
    let buffer_polys: Vec<Poly> = (0..program.buffers.len()).map(|b| sym.buffer(program, BufId(b))).collect();
    let mut best = (0u64, Poly::zero());
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let total: u64 = live_at(i).map(|b| sizes[b]).sum();
        let poly: Poly = live_at(i).map(|b| buffer_polys[b].clone()).sum();
        if total > best.0 {
            best = (total, poly.clone());
        }
        steps.push(poly);
    }
    let asymptotic = Poly::envelope(&steps).leading();
    (best.0, MemoryCost { at_peak: Terms::of(best.1), asymptotic })
}

/// A candidate layout with its estimate and the replicated-einsum warning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedLayout {
    pub layout: ComputationLayout,
    pub report: CostReport,
    pub inefficient: bool,
    /// One line per (expensive einsum, mesh dimension) left replicated.
    pub warnings: Vec<String>,
}

/// Einsums whose full FLOP count is at least this fraction of the largest
/// one count as expensive for the replication warning.
pub const EXPENSIVE_FRACTION: f64 = 0.1;

/// Describes every expensive einsum among the ancestors of `outputs` that
/// does not touch some mesh dimension with more than one processor, and
/// therefore repeats its work across that mesh dimension.
pub fn replication_warnings(graph: &Graph, layout: &ComputationLayout, mesh: &Mesh, outputs: &[NodeId]) -> Vec<String> {
    let einsums: Vec<(NodeId, Shape, f64)> = graph
        .ancestors(outputs)
        .into_iter()
        .filter(|id| graph.node(*id).kind == NodeKind::Einsum)
        .map(|id| {
            let shapes: Vec<&Shape> = graph.node(id).inputs.iter().map(|i| graph.shape(*i)).collect();
            let union = union_shape(&shapes).expect("graph einsums are consistent");
            let f = 2.0 * union.num_elements() as f64;
            (id, union, f)
        })
        .collect();
    let max = einsums.iter().map(|e| e.2).fold(0.0, f64::max);
    let mut out = Vec::new();
    for (id, union, f) in &einsums {
        if *f < EXPENSIVE_FRACTION * max {
            continue;
        }
        for m in mesh.dims().iter().filter(|m| m.size > 1) {
            if !union.names().any(|d| layout.mesh_dim_for(d) == Some(m.name.as_str())) {
                out.push(format!(
                    "einsum {} is replicated across mesh dimension \"{}\"",
                    graph.node(*id).name,
                    m.name
                ));
            }
        }
    }
    out
}

/// Estimates every candidate and orders them best first: layouts without
/// replication warnings, then by communication/computation ratio, peak
/// memory, and finally the layout's rule list.
pub fn rank_layouts(
    graph: &Graph,
    mesh: &Mesh,
    candidates: &[ComputationLayout],
    outputs: &[NodeId],
) -> Result<Vec<RankedLayout>, CostError> {
    let mut ranked = candidates
        .iter()
        .map(|layout| {
            let report = estimate_for(graph, layout, mesh, outputs, None)?;
            let warnings = replication_warnings(graph, layout, mesh, outputs);
            Ok(RankedLayout { layout: layout.clone(), report, inefficient: !warnings.is_empty(), warnings })
        })
        .collect::<Result<Vec<_>, CostError>>()?;
    ranked.sort_by(|a, b| {
        a.inefficient
            .cmp(&b.inefficient)
            .then_with(|| a.report.ratio.total_cmp(&b.report.ratio))
            .then_with(|| {
                a.report
                    .peak_memory_elements_per_processor
                    .cmp(&b.report.peak_memory_elements_per_processor)
            })
            .then_with(|| a.layout.rule_list().cmp(&b.layout.rule_list()))
    });
    Ok(ranked)
}

/// Plain-text table with one row per report: layout, computation,
/// communication, their ratio and memory, each as leading terms.
pub fn render_table(reports: &[&CostReport]) -> String {
    let header = ["layout", "flops", "comm", "comm/comp", "memory"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            let s = &r.symbolic;
            [
                r.layout.to_string(),
                format!("{} = {}", s.flops.leading, r.flops_per_processor),
                format!("{} = {}", s.comm.leading, r.comm_total),
                match &s.ratio {
                    Some(p) => format!("{p} ~ {:.4}", r.ratio),
                    None => format!("{:.4}", r.ratio),
                },
                format!("{} ~ {}", s.memory_forward.asymptotic, r.peak_memory_forward),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("-+-"));
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}
