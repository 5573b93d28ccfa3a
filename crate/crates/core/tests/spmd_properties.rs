//! Properties of lowering and simulated execution over random graphs,
//! meshes of up to 16 processors, and random legal layouts.

use std::collections::BTreeMap;

use meshtensor::autodiff::gradients;
use meshtensor::check::compare;
use meshtensor::cost::estimate_for;
use meshtensor::layout::validate_layout;
use meshtensor::rng::random_bindings;
use meshtensor::spmd::comm_summary;
use meshtensor::{ComputationLayout, CwOp, Graph, Mesh, NodeId, ReduceKind, Shape};
use proptest::prelude::*;

const DIMS: [(&str, usize); 4] = [("a", 4), ("b", 8), ("c", 4), ("d", 4)];

fn shape_from_mask(mask: u8) -> Shape {
    let picked: Vec<(&str, usize)> = DIMS.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, d)| *d).collect();
    Shape::of(&picked).unwrap()
}

/// One random step; indices are reduced modulo the nodes built so far.
#[derive(Debug, Clone)]
struct Step {
    op: u8,
    x: usize,
    y: usize,
    mask: u8,
}

fn step() -> impl Strategy<Value = Step> {
    (0u8..5, any::<usize>(), any::<usize>(), any::<u8>()).prop_map(|(op, x, y, mask)| Step { op, x, y, mask })
}

fn build(inputs: &[u8], steps: &[Step]) -> Graph {
    let mut g = Graph::new();
    for (i, m) in inputs.iter().enumerate() {
        g.input(&format!("in{i}"), shape_from_mask(m | 1 << (i % 4))).unwrap();
    }
    for (k, s) in steps.iter().enumerate() {
        let name = format!("n{k}");
        let x = NodeId(s.x % g.len());
        let y = NodeId(s.y % g.len());
        let xs = g.shape(x).clone();
        match s.op {
            0 => {
                let union: Vec<String> = xs.names().chain(g.shape(y).names()).map(str::to_string).collect();
                let mut out = Vec::new();
                for (i, (n, size)) in DIMS.iter().enumerate() {
                    if union.iter().any(|u| u == n) && s.mask & (1 << i) != 0 {
                        out.push((*n, *size));
                    }
                }
                g.einsum(&name, &[x, y], Shape::of(&out).unwrap()).unwrap();
            }
            1 if !xs.is_scalar() => {
                let dims: Vec<&str> =
                    xs.names().enumerate().filter(|(i, _)| s.mask & (1 << i) != 0 || *i == 0).map(|(_, n)| n).collect();
                let kind = if s.mask & 0x80 != 0 { ReduceKind::Max } else { ReduceKind::Sum };
                g.reduce(&name, x, &dims, kind).unwrap();
            }
            2 => {
                let op = if s.mask & 1 == 0 { CwOp::Relu } else { CwOp::Neg };
                g.componentwise(&name, op, &[x]).unwrap();
            }
            3 | 4 => {
                let ys = g.shape(y);
                let other = if ys.is_subset_of(&xs) || xs.is_subset_of(ys) { y } else { x };
                let op = if s.op == 3 { CwOp::Mul } else { CwOp::Add };
                g.componentwise(&name, op, &[x, other]).unwrap();
            }
            _ => {
                g.componentwise(&name, CwOp::Neg, &[x]).unwrap();
            }
        }
    }
    g
}

fn graph() -> impl Strategy<Value = Graph> {
    (prop::collection::vec(any::<u8>(), 1..4), prop::collection::vec(step(), 1..7)).prop_map(|(i, s)| build(&i, &s))
}

/// Meshes of rank 1 to 3 with sizes in {1, 2, 4} and at most 16 processors.
fn mesh() -> impl Strategy<Value = Mesh> {
    prop::collection::vec(prop::sample::select(vec![1usize, 2, 4]), 1..=3).prop_map(|mut sizes| {
        while sizes.iter().product::<usize>() > 16 {
            *sizes.last_mut().unwrap() = 1;
        }
        let dims: Vec<(String, usize)> = sizes.iter().enumerate().map(|(i, s)| (format!("m{i}"), *s)).collect();
        Mesh::new(dims).unwrap()
    })
}

/// Each mesh dimension picks at most one tensor dimension, and no tensor
/// dimension is picked twice, so every such layout is legal.
fn layout_for(mesh: &Mesh, picks: &[usize]) -> ComputationLayout {
    let mut rules: Vec<(String, String)> = Vec::new();
    for (m, p) in mesh.dims().iter().zip(picks) {
        if let Some((dim, _)) = DIMS.get(*p) {
            if !rules.iter().any(|(t, _)| t == dim) {
                rules.push((dim.to_string(), m.name.clone()));
            }
        }
    }
    ComputationLayout::new(rules).unwrap()
}

fn picks() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..6, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn simulated_execution_matches_the_reference(g in graph(), mesh in mesh(), picks in picks(), seed in any::<u64>()) {
        let layout = layout_for(&mesh, &picks);
        prop_assert!(validate_layout(&g, &layout, &mesh).is_ok());
        let bindings = random_bindings(&g, seed, -1.0, 1.0);
        let cmp = compare(&g, &layout, &mesh, &g.sinks(), &bindings).unwrap();
        prop_assert!(cmp.max_error() <= 1e-9, "{layout} on {mesh}: {:?}", cmp.node_errors);
    }

    #[test]
    fn results_do_not_depend_on_the_layout(
        g in graph(), mesh in mesh(), first in picks(), second in picks(), seed in any::<u64>()
    ) {
        let bindings = random_bindings(&g, seed, -1.0, 1.0);
        let sinks = g.sinks();
        let run = |picks: &[usize]| {
            let cmp = compare(&g, &layout_for(&mesh, picks), &mesh, &sinks, &bindings).unwrap();
            sinks.iter()
                .map(|id| cmp.execution.assembled(&cmp.program, &g.node(*id).name).unwrap())
                .collect::<Vec<_>>()
        };
        for (a, b) in run(&first).iter().zip(run(&second)) {
            prop_assert!(a.max_rel_error(&b) <= 2e-9);
        }
    }

    #[test]
    fn replicated_copies_are_bitwise_identical(g in graph(), mesh in mesh(), picks in picks(), seed in any::<u64>()) {
        let layout = layout_for(&mesh, &picks);
        let bindings = random_bindings(&g, seed, -1.0, 1.0);
        let cmp = compare(&g, &layout, &mesh, &g.sinks(), &bindings).unwrap();
        for node in &cmp.program.nodes {
            let image = node.layout.image();
            let used: Vec<usize> = mesh.dims().iter().enumerate()
                .filter(|(_, d)| image.contains(d.name.as_str())).map(|(i, _)| i).collect();
            let mut by_block: BTreeMap<Vec<usize>, Vec<u64>> = BTreeMap::new();
            for (coord, slice) in cmp.execution.node_slices(&cmp.program, &node.name).unwrap() {
                let key: Vec<usize> = used.iter().map(|&i| coord.along(i)).collect();
                let bits: Vec<u64> = slice.data().iter().map(|v| v.to_bits()).collect();
                if let Some(prev) = by_block.get(&key) {
                    prop_assert_eq!(prev, &bits, "{} at {}", node.name, coord);
                } else {
                    by_block.insert(key, bits);
                }
            }
        }
    }

    #[test]
    fn static_comm_equals_every_processors_ledger(g in graph(), mesh in mesh(), picks in picks()) {
        let layout = layout_for(&mesh, &picks);
        let bindings = random_bindings(&g, 0, -1.0, 1.0);
        let sinks = g.sinks();
        let cmp = compare(&g, &layout, &mesh, &sinks, &bindings).unwrap();
        let nonzero = |m: BTreeMap<String, meshtensor::CommCounts>| -> BTreeMap<String, meshtensor::CommCounts> {
            m.into_iter().filter(|(_, c)| c.total() > 0).collect()
        };
        let expected = nonzero(comm_summary(&cmp.program));
        let estimated = estimate_for(&g, &layout, &mesh, &sinks, None).unwrap();
        prop_assert_eq!(nonzero(estimated.comm_elements_per_processor), expected.clone());
        for entry in cmp.execution.ledger.entries(&mesh) {
            prop_assert_eq!(nonzero(entry.by_mesh_dim), expected.clone());
        }
    }

    #[test]
    fn lowering_is_deterministic(g in graph(), mesh in mesh(), picks in picks()) {
        let layout = layout_for(&mesh, &picks);
        let a = meshtensor::lower(&g, &layout, &mesh).unwrap().to_json();
        let b = meshtensor::lower(&g, &layout, &mesh).unwrap().to_json();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gradients_have_primal_shapes_and_survive_lowering(
        g in graph(), mesh in mesh(), picks in picks(), seed in any::<u64>()
    ) {
        let mut g = g;
        let last = NodeId(g.len() - 1);
        let loss = g.reduce_sum_all("loss", last).unwrap();
        let wrt: Vec<NodeId> = g.inputs().map(|n| n.id).collect();
        let (gg, grads) = gradients(&g, loss, &wrt).unwrap();
        for w in &wrt {
            prop_assert_eq!(gg.shape(grads[w]), g.shape(*w));
        }
        let layout = layout_for(&mesh, &picks);
        let bindings = random_bindings(&gg, seed, -1.0, 1.0);
        let outputs: Vec<NodeId> = grads.values().copied().collect();
        let cmp = compare(&gg, &layout, &mesh, &outputs, &bindings).unwrap();
        prop_assert!(cmp.max_error() <= 1e-9, "{layout} on {mesh}: {:?}", cmp.node_errors);
    }
}
