use std::collections::BTreeMap;

use super::{LayoutError, Mesh, ProcessorCoord, TensorLayout};
use crate::ir::kernels::for_each_index;
use crate::ir::{Shape, TensorValue};

/// Local shape of one processor's slice: split dimensions shrink by the
/// size of their mesh dimension.
pub fn slice_shape(shape: &Shape, layout: &TensorLayout, mesh: &Mesh) -> Result<Shape, LayoutError> {
    let mut out = shape.clone();
    for (pos, a) in layout.assignments.iter().enumerate() {
        let Some(m) = a else { continue };
        let n = mesh.size(m).ok_or_else(|| LayoutError::UnknownMeshDim(m.clone()))?;
        let size = shape.dims()[pos].size;
        if !size.is_multiple_of(n) {
            return Err(LayoutError::NotDivisible { dim: shape.dims()[pos].name.clone(), size, mesh_size: n });
        }
        out = out.with_size(pos, size / n);
    }
    Ok(out)
}

/// Start offset of each dimension's block on processor `coord`.
pub fn block_offsets(
    shape: &Shape,
    layout: &TensorLayout,
    mesh: &Mesh,
    coord: &ProcessorCoord,
) -> Result<Vec<usize>, LayoutError> {
    mesh.check_coord(coord)?;
    let local = slice_shape(shape, layout, mesh)?;
    Ok(layout
        .assignments
        .iter()
        .zip(local.dims())
        .map(|(a, d)| match a {
            Some(m) => coord.along(mesh.position(m).expect("checked by slice_shape")) * d.size,
            None => 0,
        })
        .collect())
}

/// Copies a rectangular block of `full` starting at `offsets` with `local` extents.
fn copy_block(full: &TensorValue, local: &Shape, offsets: &[usize]) -> TensorValue {
    let strides = full.shape().strides();
    let mut data = Vec::with_capacity(local.num_elements());
    for_each_index(&local.sizes(), |idx| {
        let o: usize = idx.iter().zip(offsets).zip(&strides).map(|((i, b), s)| (i + b) * s).sum();
        data.push(full.data()[o]);
    });
    TensorValue::new(local.clone(), data).expect("block size matches local shape")
}

/// The contiguous block of `value` held by processor `coord`.
pub fn extract_slice(
    value: &TensorValue,
    layout: &TensorLayout,
    mesh: &Mesh,
    coord: &ProcessorCoord,
) -> Result<TensorValue, LayoutError> {
    let offsets = block_offsets(value.shape(), layout, mesh, coord)?;
    let local = slice_shape(value.shape(), layout, mesh)?;
    Ok(copy_block(value, &local, &offsets))
}

/// Rebuilds a full tensor from every processor's slice. Replicated copies
/// must agree to within `1e-9` relative.
pub fn assemble(
    slices: &BTreeMap<ProcessorCoord, TensorValue>,
    layout: &TensorLayout,
    mesh: &Mesh,
    full_shape: &Shape,
) -> Result<TensorValue, LayoutError> {
    let local = slice_shape(full_shape, layout, mesh)?;
    let strides = full_shape.strides();
    let mut data = vec![0.0; full_shape.num_elements()];
    let mut written = vec![false; data.len()];
    for coord in mesh.coords() {
        let slice = slices.get(&coord).ok_or_else(|| LayoutError::MissingSlice(coord.clone()))?;
        if slice.shape() != &local {
            return Err(LayoutError::SliceShape { coord, expected: local, actual: slice.shape().clone() });
        }
        let offsets = block_offsets(full_shape, layout, mesh, &coord)?;
        let mut k = 0;
        let mut diverged = None;
        for_each_index(&local.sizes(), |idx| {
            let o: usize = idx.iter().zip(&offsets).zip(&strides).map(|((i, b), s)| (i + b) * s).sum();
            let v = slice.data()[k];
            k += 1;
            if written[o] {
                let prev = data[o];
                let agree = prev == v || (prev - v).abs() <= 1e-9 * prev.abs().max(v.abs());
                if !agree && diverged.is_none() {
                    diverged = Some(o);
                }
            } else {
                data[o] = v;
                written[o] = true;
            }
        });
        if let Some(index) = diverged {
            return Err(LayoutError::ReplicaDivergence { coord, index });
        }
    }
    Ok(TensorValue::new(full_shape.clone(), data).expect("full shape"))
}
