use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{IrError, Shape};

/// Index of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Component-wise operations. Binary ops broadcast when one operand's
/// dimensions are a subset of the other's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CwOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Relu,
    /// Heaviside step, `1` where the input is positive. The derivative of relu.
    Step,
    Exp,
}

impl CwOp {
    pub fn arity(self) -> usize {
        match self {
            CwOp::Add | CwOp::Sub | CwOp::Mul | CwOp::Div => 2,
            CwOp::Neg | CwOp::Relu | CwOp::Step | CwOp::Exp => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CwOp::Add => "add",
            CwOp::Sub => "sub",
            CwOp::Mul => "mul",
            CwOp::Div => "div",
            CwOp::Neg => "neg",
            CwOp::Relu => "relu",
            CwOp::Step => "step",
            CwOp::Exp => "exp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "add" => CwOp::Add,
            "sub" => CwOp::Sub,
            "mul" => CwOp::Mul,
            "div" => CwOp::Div,
            "neg" => CwOp::Neg,
            "relu" => CwOp::Relu,
            "step" => CwOp::Step,
            "exp" => CwOp::Exp,
            _ => return None,
        })
    }

    pub(crate) fn apply_unary(self, x: f64) -> f64 {
        match self {
            CwOp::Neg => -x,
            CwOp::Relu => x.max(0.0),
            CwOp::Step => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            CwOp::Exp => x.exp(),
            _ => unreachable!("{} is binary", self.name()),
        }
    }

    pub(crate) fn apply_binary(self, a: f64, b: f64) -> f64 {
        match self {
            CwOp::Add => a + b,
            CwOp::Sub => a - b,
            CwOp::Mul => a * b,
            CwOp::Div => a / b,
            _ => unreachable!("{} is unary", self.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceKind {
    Sum,
    Max,
}

impl ReduceKind {
    pub fn identity(self) -> f64 {
        match self {
            ReduceKind::Sum => 0.0,
            ReduceKind::Max => f64::NEG_INFINITY,
        }
    }

    pub fn combine(self, acc: f64, x: f64) -> f64 {
        match self {
            ReduceKind::Sum => acc + x,
            ReduceKind::Max => acc.max(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Variable,
    /// A tensor filled with one value.
    Constant { value: f64 },
    ComponentWise { op: CwOp },
    /// Broadcast inputs to the union of their dimensions, multiply, and sum
    /// out every dimension absent from the node's shape.
    Einsum,
    Reduce { dims: Vec<String>, reduction: ReduceKind },
    /// Row-major reinterpretation under a new shape of equal element count.
    Reshape,
    /// One-hot selector of the first maximal element (lowest linear index
    /// over `dims`) of `inputs[0]`, given its reduced max `inputs[1]`.
    ArgmaxMask { dims: Vec<String> },
}

impl NodeKind {
    pub fn label(&self) -> String {
        match self {
            NodeKind::Input => "input".into(),
            NodeKind::Variable => "variable".into(),
            NodeKind::Constant { .. } => "constant".into(),
            NodeKind::ComponentWise { op } => op.name().into(),
            NodeKind::Einsum => "einsum".into(),
            NodeKind::Reduce { reduction: ReduceKind::Sum, .. } => "reduce_sum".into(),
            NodeKind::Reduce { reduction: ReduceKind::Max, .. } => "reduce_max".into(),
            NodeKind::Reshape => "reshape".into(),
            NodeKind::ArgmaxMask { .. } => "argmax_mask".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    #[serde(flatten)]
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub shape: Shape,
}

/// Output shape of an operation given its input shapes.
///
/// `declared` is the user-supplied shape for kinds that carry one (leaves,
/// einsum, reshape) and is ignored otherwise.
pub fn infer_shape(
    kind: &NodeKind,
    inputs: &[&Shape],
    declared: Option<&Shape>,
) -> Result<Shape, IrError> {
    let need_declared = || declared.cloned().ok_or(IrError::MissingDeclaredShape);
    let expect_arity = |n: usize| {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(IrError::Arity { op: kind.label(), expected: n, actual: inputs.len() })
        }
    };
    match kind {
        NodeKind::Input | NodeKind::Variable | NodeKind::Constant { .. } => {
            expect_arity(0)?;
            need_declared()
        }
        NodeKind::ComponentWise { op } => {
            expect_arity(op.arity())?;
            if op.arity() == 1 {
                return Ok(inputs[0].clone());
            }
            broadcast_shape(inputs[0], inputs[1])
        }
        NodeKind::Reduce { dims, .. } => {
            expect_arity(1)?;
            for d in dims {
                if !inputs[0].contains(d) {
                    return Err(IrError::ReduceDimMissing(d.clone()));
                }
            }
            Ok(inputs[0].without(dims))
        }
        NodeKind::Einsum => {
            if inputs.is_empty() {
                return Err(IrError::Arity { op: kind.label(), expected: 1, actual: 0 });
            }
            let out = need_declared()?;
            let union = union_shape(inputs)?;
            for d in out.dims() {
                match union.get(&d.name) {
                    None => return Err(IrError::UnknownOutputDim(d.name.clone())),
                    Some(u) if u.size != d.size => {
                        return Err(IrError::DimSizeMismatch {
                            name: d.name.clone(),
                            first: u.size,
                            second: d.size,
                        })
                    }
                    Some(_) => {}
                }
            }
            Ok(out)
        }
        NodeKind::Reshape => {
            expect_arity(1)?;
            let out = need_declared()?;
            if out.num_elements() != inputs[0].num_elements() {
                return Err(IrError::ReshapeCountMismatch { from: inputs[0].clone(), to: out });
            }
            Ok(out)
        }
        NodeKind::ArgmaxMask { dims } => {
            expect_arity(2)?;
            let reduced = inputs[0].without(dims);
            if dims.iter().any(|d| !inputs[0].contains(d)) || &reduced != inputs[1] {
                return Err(IrError::ShapeMismatch {
                    node: "argmax_mask".into(),
                    expected: reduced,
                    actual: inputs[1].clone(),
                });
            }
            Ok(inputs[0].clone())
        }
    }
}

fn check_sizes(a: &Shape, b: &Shape) -> Result<(), IrError> {
    for d in a.dims() {
        if let Some(o) = b.get(&d.name) {
            if o.size != d.size {
                return Err(IrError::DimSizeMismatch {
                    name: d.name.clone(),
                    first: d.size,
                    second: o.size,
                });
            }
        }
    }
    Ok(())
}

/// Result shape of a binary component-wise op with implicit broadcasting.
pub fn broadcast_shape(a: &Shape, b: &Shape) -> Result<Shape, IrError> {
    check_sizes(a, b)?;
    if b.is_subset_of(a) {
        Ok(a.clone())
    } else if a.is_subset_of(b) {
        Ok(b.clone())
    } else {
        Err(IrError::BroadcastIncompatible { left: a.clone(), right: b.clone() })
    }
}

/// Union of the inputs' dimensions in order of first appearance.
pub fn union_shape(inputs: &[&Shape]) -> Result<Shape, IrError> {
    let mut dims = Vec::new();
    for s in inputs {
        for d in s.dims() {
            match dims.iter().find(|u: &&super::Dimension| u.name == d.name) {
                Some(u) if u.size != d.size => {
                    return Err(IrError::DimSizeMismatch {
                        name: d.name.clone(),
                        first: u.size,
                        second: d.size,
                    })
                }
                Some(_) => {}
                None => dims.push(d.clone()),
            }
        }
    }
    Shape::new(dims)
}

/// A DAG of named-dimension tensor operations, stored in topological order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    nodes: Vec<Node>,
    dim_sizes: BTreeMap<String, usize>,
    /// Index of the first node appended by gradient construction, if any.
    backward_start: Option<usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn try_node(&self, id: NodeId) -> Result<&Node, IrError> {
        self.nodes.get(id.0).ok_or_else(|| IrError::UnknownNode(id.to_string()))
    }

    pub fn shape(&self, id: NodeId) -> &Shape {
        &self.nodes[id.0].shape
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn lookup(&self, name: &str) -> Result<NodeId, IrError> {
        self.find(name).ok_or_else(|| IrError::UnknownNode(name.to_string()))
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Input)
    }

    pub fn variables(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Variable)
    }

    /// Every distinct dimension name used in the graph, with its size.
    pub fn dim_sizes(&self) -> &BTreeMap<String, usize> {
        &self.dim_sizes
    }

    pub fn backward_start(&self) -> Option<usize> {
        self.backward_start
    }

    pub(crate) fn mark_backward_start(&mut self) {
        if self.backward_start.is_none() {
            self.backward_start = Some(self.nodes.len());
        }
    }

    /// Nodes with no consumers.
    pub fn sinks(&self) -> Vec<NodeId> {
        let mut used = vec![false; self.nodes.len()];
        for n in &self.nodes {
            for i in &n.inputs {
                used[i.0] = true;
            }
        }
        self.nodes.iter().filter(|n| !used[n.id.0]).map(|n| n.id).collect()
    }

    /// Ids of `outputs` and all their transitive inputs, in topological order.
    pub fn ancestors(&self, outputs: &[NodeId]) -> Vec<NodeId> {
        let mut keep = vec![false; self.nodes.len()];
        for o in outputs {
            keep[o.0] = true;
        }
        for n in self.nodes.iter().rev() {
            if keep[n.id.0] {
                for i in &n.inputs {
                    keep[i.0] = true;
                }
            }
        }
        self.nodes.iter().filter(|n| keep[n.id.0]).map(|n| n.id).collect()
    }

    /// Returns `base` if unused, otherwise `base_2`, `base_3`, ...
    pub fn fresh_name(&self, base: &str) -> String {
        if self.find(base).is_none() {
            return base.to_string();
        }
        (2..)
            .map(|i| format!("{base}_{i}"))
            .find(|n| self.find(n).is_none())
            .expect("unbounded")
    }

    /// Appends a node after validating its inputs and inferring its shape.
    pub fn add_node(
        &mut self,
        name: impl Into<String>,
        kind: NodeKind,
        inputs: &[NodeId],
        declared: Option<Shape>,
    ) -> Result<NodeId, IrError> {
        let name = name.into();
        if name.is_empty() {
            return Err(IrError::InvalidNodeName(name));
        }
        if self.find(&name).is_some() {
            return Err(IrError::DuplicateNodeName(name));
        }
        for i in inputs {
            self.try_node(*i)?;
        }
        let input_shapes: Vec<&Shape> = inputs.iter().map(|i| self.shape(*i)).collect();
        let shape = infer_shape(&kind, &input_shapes, declared.as_ref())?;
        for d in shape.dims() {
            if let Some(&size) = self.dim_sizes.get(&d.name) {
                if size != d.size {
                    return Err(IrError::DimSizeMismatch {
                        name: d.name.clone(),
                        first: size,
                        second: d.size,
                    });
                }
            }
        }
        for d in shape.dims() {
            self.dim_sizes.insert(d.name.clone(), d.size);
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { id, name, kind, inputs: inputs.to_vec(), shape });
        Ok(id)
    }

    pub fn input(&mut self, name: &str, shape: Shape) -> Result<NodeId, IrError> {
        self.add_node(name, NodeKind::Input, &[], Some(shape))
    }

    pub fn variable(&mut self, name: &str, shape: Shape) -> Result<NodeId, IrError> {
        self.add_node(name, NodeKind::Variable, &[], Some(shape))
    }

    pub fn constant(&mut self, name: &str, shape: Shape, value: f64) -> Result<NodeId, IrError> {
        self.add_node(name, NodeKind::Constant { value }, &[], Some(shape))
    }

    pub fn einsum(&mut self, name: &str, inputs: &[NodeId], output: Shape) -> Result<NodeId, IrError> {
        self.add_node(name, NodeKind::Einsum, inputs, Some(output))
    }

    pub fn reduce(
        &mut self,
        name: &str,
        input: NodeId,
        dims: &[&str],
        reduction: ReduceKind,
    ) -> Result<NodeId, IrError> {
        let dims = dims.iter().map(|d| d.to_string()).collect();
        self.add_node(name, NodeKind::Reduce { dims, reduction }, &[input], None)
    }

    /// Sums out every dimension of `input`, producing a scalar.
    pub fn reduce_sum_all(&mut self, name: &str, input: NodeId) -> Result<NodeId, IrError> {
        let dims: Vec<String> = self.shape(input).names().map(String::from).collect();
        let refs: Vec<&str> = dims.iter().map(String::as_str).collect();
        self.reduce(name, input, &refs, ReduceKind::Sum)
    }

    pub fn componentwise(&mut self, name: &str, op: CwOp, inputs: &[NodeId]) -> Result<NodeId, IrError> {
        self.add_node(name, NodeKind::ComponentWise { op }, inputs, None)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId, IrError> {
        self.componentwise(name, CwOp::Add, &[a, b])
    }

    pub fn sub(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId, IrError> {
        self.componentwise(name, CwOp::Sub, &[a, b])
    }

    pub fn mul(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId, IrError> {
        self.componentwise(name, CwOp::Mul, &[a, b])
    }

    pub fn div(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId, IrError> {
        self.componentwise(name, CwOp::Div, &[a, b])
    }

    pub fn relu(&mut self, name: &str, a: NodeId) -> Result<NodeId, IrError> {
        self.componentwise(name, CwOp::Relu, &[a])
    }

    pub fn exp(&mut self, name: &str, a: NodeId) -> Result<NodeId, IrError> {
        self.componentwise(name, CwOp::Exp, &[a])
    }

    pub fn reshape(&mut self, name: &str, input: NodeId, shape: Shape) -> Result<NodeId, IrError> {
        self.add_node(name, NodeKind::Reshape, &[input], Some(shape))
    }

    pub fn argmax_mask(
        &mut self,
        name: &str,
        input: NodeId,
        max: NodeId,
        dims: &[String],
    ) -> Result<NodeId, IrError> {
        self.add_node(name, NodeKind::ArgmaxMask { dims: dims.to_vec() }, &[input, max], None)
    }
}
