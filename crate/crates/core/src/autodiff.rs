//! Reverse-mode gradient construction. Gradients are ordinary graph nodes,
//! so they are lowered and laid out like any other computation: an einsum's
//! gradient is another einsum, and one that sums out a split dimension picks
//! up an allreduce.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ir::{union_shape, CwOp, Graph, IrError, NodeId, NodeKind, ReduceKind, Shape};

/// Maps each differentiated node to the node holding its gradient.
pub type GradientMap = BTreeMap<NodeId, NodeId>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Appends gradient nodes of `loss` with respect to each node in `wrt`.
///
/// Multiple contributions to one gradient are summed left to right in the
/// order they are discovered. A `wrt` node that does not influence the loss
/// gets a zero gradient.
pub fn gradients(graph: &Graph, loss: NodeId, wrt: &[NodeId]) -> Result<(Graph, GradientMap), GradError> {
    let loss_shape = graph.try_node(loss)?.shape.clone();
    if !loss_shape.is_scalar() {
        return Err(GradError::NonScalarLoss(loss_shape));
    }
    for w in wrt {
        graph.try_node(*w)?;
    }
    let n = graph.len();
    let mut needs = vec![false; n];
    for node in graph.nodes() {
        needs[node.id.0] = wrt.contains(&node.id) || node.inputs.iter().any(|i| needs[i.0]);
    }

    let mut g = graph.clone();
    g.mark_backward_start();
    let mut contributions: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut totals = GradientMap::new();
    if needs[loss.0] {
        let seed = g.constant(&g.fresh_name("grad/seed"), Shape::scalar(), 1.0)?;
        contributions.insert(loss, vec![seed]);
    }

    for idx in (0..=loss.0).rev() {
        let id = NodeId(idx);
        let Some(parts) = contributions.remove(&id) else { continue };
        let name = graph.node(id).name.clone();
        let mut total = parts[0];
        for p in &parts[1..] {
            let sum_name = g.fresh_name(&format!("grad/{name}_sum"));
            total = g.add(&sum_name, total, *p)?;
        }
        totals.insert(id, total);
        let node = graph.node(id).clone();
        for (k, input) in node.inputs.iter().enumerate() {
            if !needs[input.0] {
                continue;
            }
            if let Some(c) = input_gradient(&mut g, &node.kind, &node.inputs, id, total, k)? {
                contributions.entry(*input).or_default().push(c);
            }
        }
    }

    let mut map = GradientMap::new();
    for w in wrt {
        let grad = match totals.get(w) {
            Some(t) => *t,
            None => {
                let shape = graph.shape(*w).clone();
                let name = g.fresh_name(&format!("grad/{}", graph.node(*w).name));
                g.constant(&name, shape, 0.0)?
            }
        };
        map.insert(*w, grad);
    }
    Ok((g, map))
}

/// Gradient flowing from node `out` (gradient `grad`) into its `k`-th input.
fn input_gradient(
    g: &mut Graph,
    kind: &NodeKind,
    inputs: &[NodeId],
    out: NodeId,
    grad: NodeId,
    k: usize,
) -> Result<Option<NodeId>, IrError> {
    let x = inputs[k];
    let x_shape = g.shape(x).clone();
    let base = format!("grad/{}", g.node(x).name);
    let name = |g: &Graph, tag: &str| g.fresh_name(&format!("{base}/{tag}"));
    let result = match kind {
        NodeKind::Input | NodeKind::Variable | NodeKind::Constant { .. } | NodeKind::ArgmaxMask { .. } => None,
        NodeKind::Einsum => {
            let mut operands = vec![grad];
            operands.extend(inputs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, i)| *i));
            let shapes: Vec<&Shape> = operands.iter().map(|o| g.shape(*o)).collect();
            let have = union_shape(&shapes)?;
            let missing: Vec<_> = x_shape.dims().iter().filter(|d| !have.contains(&d.name)).cloned().collect();
            if !missing.is_empty() {
                let ones = g.constant(&name(g, "ones"), Shape::new(missing)?, 1.0)?;
                operands.push(ones);
            }
            Some(g.einsum(&g.fresh_name(&base), &operands, x_shape)?)
        }
        NodeKind::Reduce { reduction: ReduceKind::Sum, .. } => {
            let ones = g.constant(&name(g, "ones"), x_shape, 1.0)?;
            Some(g.mul(&g.fresh_name(&base), ones, grad)?)
        }
        NodeKind::Reduce { dims, reduction: ReduceKind::Max } => {
            let mask = g.argmax_mask(&name(g, "argmax"), x, out, dims)?;
            Some(g.mul(&g.fresh_name(&base), mask, grad)?)
        }
        NodeKind::Reshape => Some(g.reshape(&g.fresh_name(&base), grad, x_shape)?),
        NodeKind::ComponentWise { op } => {
            let local = match (op, k) {
                (CwOp::Add, _) | (CwOp::Sub, 0) => grad,
                (CwOp::Sub, _) => g.componentwise(&name(g, "neg"), CwOp::Neg, &[grad])?,
                (CwOp::Mul, _) => g.mul(&name(g, "mul"), grad, inputs[1 - k])?,
                (CwOp::Div, 0) => g.div(&name(g, "div"), grad, inputs[1])?,
                (CwOp::Div, _) => {
                    let t = g.mul(&name(g, "mul"), grad, out)?;
                    let t = g.div(&name(g, "div"), t, inputs[1])?;
                    g.componentwise(&name(g, "neg"), CwOp::Neg, &[t])?
                }
                (CwOp::Neg, _) => g.componentwise(&name(g, "neg"), CwOp::Neg, &[grad])?,
                (CwOp::Relu, _) => {
                    let step = g.componentwise(&name(g, "step"), CwOp::Step, &[x])?;
                    g.mul(&name(g, "mul"), grad, step)?
                }
                (CwOp::Exp, _) => g.mul(&name(g, "mul"), grad, out)?,
                (CwOp::Step, _) => return Ok(None),
            };
            Some(unbroadcast(g, local, &x_shape, &base)?)
        }
    };
    Ok(result)
}

/// Sums `t` over dimensions absent from `shape` and orders it like `shape`.
fn unbroadcast(g: &mut Graph, t: NodeId, shape: &Shape, base: &str) -> Result<NodeId, IrError> {
    if g.shape(t) == shape {
        return Ok(t);
    }
    g.einsum(&g.fresh_name(base), &[t], shape.clone())
}

/// Appends one plain SGD step `p - lr * grad(p)` for each parameter.
pub fn sgd_update(graph: &Graph, grads: &GradientMap, learning_rate: f64) -> Result<(Graph, BTreeMap<NodeId, NodeId>), IrError> {
    let mut g = graph.clone();
    let lr = g.constant(&g.fresh_name("update/learning_rate"), Shape::scalar(), learning_rate)?;
    let mut out = BTreeMap::new();
    for (&p, &grad) in grads {
        let pname = graph.node(p).name.clone();
        let step = g.mul(&g.fresh_name(&format!("update/{pname}/step")), lr, grad)?;
        let new = g.sub(&g.fresh_name(&format!("update/{pname}")), p, step)?;
        out.insert(p, new);
    }
    Ok((g, out))
}
