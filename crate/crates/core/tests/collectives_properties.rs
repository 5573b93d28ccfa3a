use meshtensor::collectives::{allgather, allreduce, alltoall, groups_for, CollectiveKind, Group};
use meshtensor::ir::kernels::split;
use meshtensor::rng::uniform;
use meshtensor::{CommLedger, Mesh, ReduceKind, Shape, TensorValue};
use proptest::prelude::*;

fn group(n: usize) -> Group {
    let mesh = Mesh::of(&[("g", n)]).unwrap();
    groups_for(&mesh, "g").unwrap().remove(0)
}

fn member_values(n: usize, shape: &Shape, seed: u64) -> Vec<TensorValue> {
    (0..n as u64).map(|i| uniform(shape.clone(), seed.wrapping_add(i), -1.0, 1.0)).collect()
}

fn slice_shape() -> impl Strategy<Value = Shape> {
    (1usize..=4, 1usize..=3).prop_map(|(a, b)| Shape::of(&[("a", a), ("b", b)]).unwrap())
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn allreduce_is_order_insensitive_and_uniform(
        (n, perm) in (1usize..=6).prop_flat_map(|n| (Just(n), permutation(n))),
        shape in slice_shape(),
        seed in any::<u64>(),
        max in any::<bool>(),
    ) {
        let kind = if max { ReduceKind::Max } else { ReduceKind::Sum };
        let values = member_values(n, &shape, seed);
        let permuted: Vec<TensorValue> = perm.iter().map(|&i| values[i].clone()).collect();
        let out = allreduce(&group(n), &values, kind, &mut CommLedger::new()).unwrap();
        let again = allreduce(&group(n), &values, kind, &mut CommLedger::new()).unwrap();
        let other = allreduce(&group(n), &permuted, kind, &mut CommLedger::new()).unwrap();
        prop_assert_eq!(&out, &again);
        for v in &out {
            prop_assert_eq!(v, &out[0]);
        }
        prop_assert!(out[0].max_rel_error(&other[0]) <= 1e-12);
    }

    #[test]
    fn allgather_then_own_block_is_identity(n in 1usize..=5, shape in slice_shape(), seed in any::<u64>(), dim in 0usize..2) {
        let values = member_values(n, &shape, seed);
        let mut ledger = CommLedger::new();
        let g = group(n);
        let out = allgather(&g, &values, dim, &mut ledger).unwrap();
        for (i, v) in out.iter().enumerate() {
            prop_assert_eq!(v.shape(), out[0].shape());
            prop_assert_eq!(&split(v, dim, n).unwrap()[i], &values[i]);
        }
        // Conservation: each member receives (n - 1) slices.
        let total: u64 = g.members.iter().map(|m| ledger.total(m).allgather).sum();
        prop_assert_eq!(total, (n * (n - 1) * shape.num_elements()) as u64);
    }

    #[test]
    fn alltoall_results_share_a_shape(n in 1usize..=4, b in 1usize..=3, seed in any::<u64>()) {
        let shape = Shape::of(&[("a", 2 * n), ("b", b)]).unwrap();
        let values = member_values(n, &shape, seed);
        let out = alltoall(&group(n), &values, 0, 1, &mut CommLedger::new()).unwrap();
        prop_assert_eq!(out.len(), n);
        for v in &out {
            prop_assert_eq!(v.shape(), out[0].shape());
        }
    }

    #[test]
    fn ledger_counters_never_decrease(events in prop::collection::vec((0usize..3, 0u64..100, 0usize..2), 1..30)) {
        let mesh = Mesh::of(&[("g", 2)]).unwrap();
        let coords = mesh.coords();
        let mut ledger = CommLedger::new();
        let mut previous = [ledger.total(&coords[0]), ledger.total(&coords[1])];
        for (kind, n, who) in events {
            let kind = [CollectiveKind::Allreduce, CollectiveKind::Allgather, CollectiveKind::Alltoall][kind];
            ledger.record(&coords[who], "g", kind, n);
            for (c, prev) in coords.iter().zip(previous.iter_mut()) {
                let now = ledger.total(c);
                prop_assert!(now.allreduce >= prev.allreduce && now.allgather >= prev.allgather && now.alltoall >= prev.alltoall);
                *prev = now;
            }
        }
    }
}
