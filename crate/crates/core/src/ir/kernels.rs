//! Dense kernels over named-dimension tensors. Operands are matched by
//! dimension name, so they work equally on full tensors and on local slices.

use super::graph::{broadcast_shape, union_shape};
use super::{CwOp, IrError, ReduceKind, Shape, TensorValue};

/// Calls `f` with every multi-index of `sizes` in row-major order.
pub(crate) fn for_each_index(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    if sizes.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; sizes.len()];
    loop {
        f(&idx);
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Strides of `operand` laid over the dimensions of `target`; zero where
/// the operand lacks a dimension (broadcast).
fn projected_strides(operand: &Shape, target: &Shape) -> Vec<usize> {
    let strides = operand.strides();
    target
        .dims()
        .iter()
        .map(|d| operand.position(&d.name).map_or(0, |p| strides[p]))
        .collect()
}

fn offset(idx: &[usize], strides: &[usize]) -> usize {
    idx.iter().zip(strides).map(|(i, s)| i * s).sum()
}

pub fn unary(op: CwOp, a: &TensorValue) -> TensorValue {
    a.map(|x| op.apply_unary(x))
}

/// Binary component-wise op with implicit broadcasting by dimension name.
pub fn binary(op: CwOp, a: &TensorValue, b: &TensorValue) -> Result<TensorValue, IrError> {
    let out = broadcast_shape(a.shape(), b.shape())?;
    let sa = projected_strides(a.shape(), &out);
    let sb = projected_strides(b.shape(), &out);
    let mut data = Vec::with_capacity(out.num_elements());
    for_each_index(&out.sizes(), |idx| {
        data.push(op.apply_binary(a.data()[offset(idx, &sa)], b.data()[offset(idx, &sb)]));
    });
    TensorValue::new(out, data)
}

pub fn componentwise(op: CwOp, args: &[&TensorValue]) -> Result<TensorValue, IrError> {
    match (op.arity(), args) {
        (1, [a]) => Ok(unary(op, a)),
        (2, [a, b]) => binary(op, a, b),
        _ => Err(IrError::Arity { op: op.name().into(), expected: op.arity(), actual: args.len() }),
    }
}

/// N-ary einsum: iterate the union of input dimensions (output dims first),
/// multiply, accumulate into the output. Each output element sums its terms
/// in row-major order over the reduced dimensions.
pub fn einsum(inputs: &[&TensorValue], out: &Shape) -> Result<TensorValue, IrError> {
    let shapes: Vec<&Shape> = inputs.iter().map(|t| t.shape()).collect();
    let union = union_shape(&shapes)?;
    let mut dims = out.dims().to_vec();
    for d in union.dims() {
        if !out.contains(&d.name) {
            dims.push(d.clone());
        }
    }
    let full = Shape::new(dims)?;
    for d in out.dims() {
        if union.get(&d.name).map(|u| u.size) != Some(d.size) {
            return Err(IrError::UnknownOutputDim(d.name.clone()));
        }
    }
    let strides: Vec<Vec<usize>> = shapes.iter().map(|s| projected_strides(s, &full)).collect();
    let reduced = full.num_elements() / out.num_elements().max(1);
    let mut data = vec![0.0; out.num_elements()];
    let mut linear = 0usize;
    for_each_index(&full.sizes(), |idx| {
        let mut p = 1.0;
        for (t, s) in inputs.iter().zip(&strides) {
            p *= t.data()[offset(idx, s)];
        }
        data[linear / reduced] += p;
        linear += 1;
    });
    TensorValue::new(out.clone(), data)
}

pub fn reduce(a: &TensorValue, dims: &[String], kind: ReduceKind) -> Result<TensorValue, IrError> {
    for d in dims {
        if !a.shape().contains(d) {
            return Err(IrError::ReduceDimMissing(d.clone()));
        }
    }
    let out = a.shape().without(dims);
    let mut order = out.dims().to_vec();
    order.extend(a.shape().dims().iter().filter(|d| dims.contains(&d.name)).cloned());
    let full = Shape::new(order)?;
    let sa = projected_strides(a.shape(), &full);
    let reduced = full.num_elements() / out.num_elements().max(1);
    let mut data = vec![kind.identity(); out.num_elements()];
    let mut linear = 0usize;
    for_each_index(&full.sizes(), |idx| {
        let slot = &mut data[linear / reduced];
        *slot = kind.combine(*slot, a.data()[offset(idx, &sa)]);
        linear += 1;
    });
    TensorValue::new(out, data)
}

/// Global placement of a (possibly sliced) tensor: for each local dimension,
/// the offset of the local block and the full extent of the dimension.
#[derive(Debug, Clone)]
pub struct Placement {
    pub offsets: Vec<usize>,
    pub extents: Vec<usize>,
}

impl Placement {
    pub fn whole(shape: &Shape) -> Self {
        Self { offsets: vec![0; shape.rank()], extents: shape.sizes() }
    }
}

/// Walks every element of `x` and reports (element offset in `x`, offset of
/// its fiber in the reduced tensor, global row-major index of the element
/// within its fiber).
fn for_each_fiber_element(
    x: &Shape,
    dims: &[String],
    placement: &Placement,
    mut f: impl FnMut(usize, usize, usize),
) {
    let reduced_shape = x.without(dims);
    let rs = projected_strides(&reduced_shape, x);
    let xs = x.strides();
    let reduced_pos: Vec<usize> = (0..x.rank())
        .filter(|&p| dims.contains(&x.dims()[p].name))
        .collect();
    for_each_index(&x.sizes(), |idx| {
        let mut g = 0usize;
        for &p in &reduced_pos {
            g = g * placement.extents[p] + placement.offsets[p] + idx[p];
        }
        f(offset(idx, &xs), offset(idx, &rs), g);
    });
}

/// Per-fiber key `-(global index of the first element equal to the max)`,
/// or `-inf` when the local block holds no maximal element. Combining keys
/// with `max` across blocks yields the global first argmax.
pub fn argmax_key(
    x: &TensorValue,
    max: &TensorValue,
    dims: &[String],
    placement: &Placement,
) -> TensorValue {
    let mut key = TensorValue::filled(max.shape().clone(), f64::NEG_INFINITY);
    for_each_fiber_element(x.shape(), dims, placement, |xo, ro, g| {
        if x.data()[xo] == max.data()[ro] {
            let k = -(g as f64);
            let slot = &mut key.data_mut()[ro];
            *slot = slot.max(k);
        }
    });
    key
}

/// One where an element is the global first argmax of its fiber.
pub fn argmax_select(
    x: &TensorValue,
    max: &TensorValue,
    key: &TensorValue,
    dims: &[String],
    placement: &Placement,
) -> TensorValue {
    let mut out = TensorValue::zeros(x.shape().clone());
    for_each_fiber_element(x.shape(), dims, placement, |xo, ro, g| {
        if x.data()[xo] == max.data()[ro] && key.data()[ro] == -(g as f64) {
            out.data_mut()[xo] = 1.0;
        }
    });
    out
}

pub fn argmax_mask(x: &TensorValue, max: &TensorValue, dims: &[String]) -> TensorValue {
    let whole = Placement::whole(x.shape());
    let key = argmax_key(x, max, dims, &whole);
    argmax_select(x, max, &key, dims, &whole)
}

/// Reorders `a` so its dimensions follow `target`'s order. Both must hold
/// the same dimension set.
pub fn transpose_to(a: &TensorValue, target: &Shape) -> Result<TensorValue, IrError> {
    if !a.shape().same_dims(target) {
        return Err(IrError::ShapeMismatch {
            node: "transpose".into(),
            expected: target.clone(),
            actual: a.shape().clone(),
        });
    }
    einsum(&[a], target)
}

/// Concatenates equally-shaped `parts` along dimension position `dim`.
pub fn concat(parts: &[&TensorValue], dim: usize) -> Result<TensorValue, IrError> {
    let first = parts.first().ok_or(IrError::Arity { op: "concat".into(), expected: 1, actual: 0 })?;
    for p in parts {
        if p.shape() != first.shape() {
            return Err(IrError::ShapeMismatch {
                node: "concat".into(),
                expected: first.shape().clone(),
                actual: p.shape().clone(),
            });
        }
    }
    let local = first.shape().dims()[dim].size;
    let out = first.shape().with_size(dim, local * parts.len());
    let strides = first.shape().strides();
    let mut data = Vec::with_capacity(out.num_elements());
    let mut li = vec![0usize; out.rank()];
    for_each_index(&out.sizes(), |idx| {
        li.copy_from_slice(idx);
        let member = idx[dim] / local;
        li[dim] = idx[dim] % local;
        data.push(parts[member].data()[offset(&li, &strides)]);
    });
    TensorValue::new(out, data)
}

/// Splits `value` into `parts` equal contiguous blocks along position `dim`.
pub fn split(value: &TensorValue, dim: usize, parts: usize) -> Result<Vec<TensorValue>, IrError> {
    let size = value.shape().dims()[dim].size;
    if parts == 0 || !size.is_multiple_of(parts) {
        return Err(IrError::ShapeMismatch {
            node: "split".into(),
            expected: value.shape().with_size(dim, size / parts.max(1) * parts.max(1)),
            actual: value.shape().clone(),
        });
    }
    let block = size / parts;
    let local = value.shape().with_size(dim, block);
    let strides = value.shape().strides();
    let mut gi = vec![0usize; local.rank()];
    Ok((0..parts)
        .map(|k| {
            let mut data = Vec::with_capacity(local.num_elements());
            for_each_index(&local.sizes(), |idx| {
                gi.copy_from_slice(idx);
                gi[dim] += k * block;
                data.push(value.data()[offset(&gi, &strides)]);
            });
            TensorValue::new(local.clone(), data).expect("block shape")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(p: &[(&str, usize)], data: &[f64]) -> TensorValue {
        TensorValue::new(Shape::of(p).unwrap(), data.to_vec()).unwrap()
    }

    #[test]
    fn einsum_identity_matrix() {
        let a = t(&[("i", 2), ("j", 2)], &[1., 2., 3., 4.]);
        let id = t(&[("j", 2), ("k", 2)], &[1., 0., 0., 1.]);
        let out = einsum(&[&a, &id], &Shape::of(&[("i", 2), ("k", 2)]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn reduce_max_over_inner_dim() {
        let a = t(&[("a", 2), ("b", 2)], &[1., 5., 3., 2.]);
        let out = reduce(&a, &["b".into()], ReduceKind::Max).unwrap();
        assert_eq!(out.data(), &[5., 3.]);
    }

    #[test]
    fn reduce_over_outer_dim() {
        let a = t(&[("a", 2), ("b", 3)], &[1., 2., 3., 4., 5., 6.]);
        let out = reduce(&a, &["a".into()], ReduceKind::Sum).unwrap();
        assert_eq!(out.data(), &[5., 7., 9.]);
    }

    #[test]
    fn broadcast_add_bias() {
        let x = t(&[("batch", 2), ("hidden", 3)], &[0., 0., 0., 1., 1., 1.]);
        let bias = t(&[("hidden", 3)], &[1., 2., 3.]);
        let out = binary(CwOp::Add, &bias, &x).unwrap();
        assert_eq!(out.data(), &[1., 2., 3., 2., 3., 4.]);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = t(&[("r", 2), ("c", 2)], &[0., 1., 2., 3.]);
        let b = t(&[("r", 2), ("c", 2)], &[4., 5., 6., 7.]);
        let cat = concat(&[&a, &b], 1).unwrap();
        assert_eq!(cat.data(), &[0., 1., 4., 5., 2., 3., 6., 7.]);
        assert_eq!(split(&cat, 1, 2).unwrap(), vec![a, b]);
    }

    #[test]
    fn transpose_by_names() {
        let a = t(&[("i", 2), ("j", 3)], &[0., 1., 2., 3., 4., 5.]);
        let out = transpose_to(&a, &Shape::of(&[("j", 3), ("i", 2)]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn argmax_mask_breaks_ties_to_first() {
        let x = t(&[("a", 2), ("b", 3)], &[1., 4., 4., 2., 2., 0.]);
        let m = reduce(&x, &["b".into()], ReduceKind::Max).unwrap();
        let mask = argmax_mask(&x, &m, &["b".into()]);
        assert_eq!(mask.data(), &[0., 1., 0., 1., 0., 0.]);
    }

    #[test]
    fn argmax_key_combines_across_blocks() {
        // Fiber [3, 7, 7, 1] split in two blocks of two.
        let full = t(&[("b", 4)], &[3., 7., 7., 1.]);
        let m = TensorValue::scalar(7.0);
        let dims = vec!["b".to_string()];
        let lo = t(&[("b", 2)], &[3., 7.]);
        let hi = t(&[("b", 2)], &[7., 1.]);
        let p_lo = Placement { offsets: vec![0], extents: vec![4] };
        let p_hi = Placement { offsets: vec![2], extents: vec![4] };
        let k = argmax_key(&lo, &m, &dims, &p_lo).data()[0]
            .max(argmax_key(&hi, &m, &dims, &p_hi).data()[0]);
        assert_eq!(k, -1.0);
        let key = TensorValue::scalar(k);
        assert_eq!(argmax_select(&hi, &m, &key, &dims, &p_hi).data(), &[0., 0.]);
        assert_eq!(argmax_select(&lo, &m, &key, &dims, &p_lo).data(), &[0., 1.]);
        assert_eq!(argmax_mask(&full, &m, &dims).data(), &[0., 1., 0., 0.]);
    }
}
