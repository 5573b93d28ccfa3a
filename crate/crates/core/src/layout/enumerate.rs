use super::{validate_layout, ComputationLayout, LayoutError, Mesh};
use crate::ir::kernels::for_each_index;
use crate::ir::Graph;

/// Upper bound on candidate maps examined by [`enumerate_layouts`].
pub const MAX_CANDIDATES: usize = 1 << 16;

/// Every legal computation layout of `graph` on `mesh`, sorted by rule list.
///
/// Brute force over all partial maps from the graph's dimension names to
/// mesh dimensions, so only small instances are accepted.
pub fn enumerate_layouts(graph: &Graph, mesh: &Mesh) -> Result<Vec<ComputationLayout>, LayoutError> {
    let names: Vec<&String> = graph.dim_sizes().keys().collect();
    let choices = mesh.rank() + 1;
    let total = (0..names.len()).try_fold(1usize, |acc, _| acc.checked_mul(choices));
    match total {
        Some(t) if t <= MAX_CANDIDATES => {}
        _ => return Err(LayoutError::EnumerationTooLarge { dims: names.len(), mesh_rank: mesh.rank() }),
    }
    let mut out = Vec::new();
    for_each_index(&vec![choices; names.len()], |pick| {
        let rules = names
            .iter()
            .zip(pick)
            .filter(|(_, &p)| p > 0)
            .map(|(n, &p)| ((*n).clone(), mesh.dims()[p - 1].name.clone()))
            .collect();
        let layout = ComputationLayout::new(rules).expect("names are distinct");
        if validate_layout(graph, &layout, mesh).is_ok() {
            out.push(layout);
        }
    });
    out.sort_by_key(|l| l.rule_list());
    out.dedup();
    Ok(out)
}
