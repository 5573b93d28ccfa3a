use std::collections::BTreeMap;

use super::{kernels, Graph, IrError, Node, NodeId, NodeKind, TensorValue};

/// Values bound to the graph's `Input` and `Variable` nodes, keyed by node name.
pub type Bindings = BTreeMap<String, TensorValue>;

/// Single-device dense evaluation of every node in topological order.
pub fn reference_execute(graph: &Graph, bindings: &Bindings) -> Result<Vec<TensorValue>, IrError> {
    let mut values: Vec<TensorValue> = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        let v = evaluate(node, &values, bindings)?;
        values.push(v);
    }
    Ok(values)
}

/// Evaluates only the ancestors of `outputs`.
pub fn reference_execute_for(
    graph: &Graph,
    bindings: &Bindings,
    outputs: &[NodeId],
) -> Result<BTreeMap<NodeId, TensorValue>, IrError> {
    let mut values: BTreeMap<NodeId, TensorValue> = BTreeMap::new();
    for id in graph.ancestors(outputs) {
        let node = graph.node(id);
        let args: Vec<&TensorValue> = node.inputs.iter().map(|i| &values[i]).collect();
        let v = evaluate_with(node, &args, bindings)?;
        values.insert(id, v);
    }
    values.retain(|k, _| outputs.contains(k));
    Ok(values)
}

fn evaluate(node: &Node, values: &[TensorValue], bindings: &Bindings) -> Result<TensorValue, IrError> {
    let args: Vec<&TensorValue> = node.inputs.iter().map(|i| &values[i.0]).collect();
    evaluate_with(node, &args, bindings)
}

fn bound_value<'a>(node: &Node, bindings: &'a Bindings) -> Result<&'a TensorValue, IrError> {
    let v = bindings
        .get(&node.name)
        .ok_or_else(|| IrError::MissingBinding(node.name.clone()))?;
    if v.shape() != &node.shape {
        return Err(IrError::ShapeMismatch {
            node: node.name.clone(),
            expected: node.shape.clone(),
            actual: v.shape().clone(),
        });
    }
    Ok(v)
}

fn evaluate_with(node: &Node, args: &[&TensorValue], bindings: &Bindings) -> Result<TensorValue, IrError> {
    match &node.kind {
        NodeKind::Input | NodeKind::Variable => bound_value(node, bindings).cloned(),
        NodeKind::Constant { value } => Ok(TensorValue::filled(node.shape.clone(), *value)),
        NodeKind::ComponentWise { op } => kernels::componentwise(*op, args),
        NodeKind::Einsum => kernels::einsum(args, &node.shape),
        NodeKind::Reduce { dims, reduction } => kernels::reduce(args[0], dims, *reduction),
        NodeKind::Reshape => args[0].reshaped(node.shape.clone()),
        NodeKind::ArgmaxMask { dims } => Ok(kernels::argmax_mask(args[0], args[1], dims)),
    }
}
