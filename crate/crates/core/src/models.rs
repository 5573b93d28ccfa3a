//! Ready-made graphs used by the examples, the CLI corpus and the tests.

use crate::autodiff::{gradients, sgd_update, GradError, GradientMap};
use crate::ir::{Graph, IrError, NodeId, ReduceKind, Shape};
use crate::layout::{ComputationLayout, LayoutError, Mesh};

/// Two fully-connected layers, `y = relu(x·w + bias)·v`, with a linear
/// loss `sum(y * dy)` so that `dy` plays the role of the upstream gradient.
#[derive(Debug, Clone)]
pub struct TwoLayer {
    pub graph: Graph,
    pub x: NodeId,
    pub w: NodeId,
    pub bias: NodeId,
    pub v: NodeId,
    pub h: NodeId,
    pub y: NodeId,
    pub dy: NodeId,
    pub loss: NodeId,
    /// Gradients of `loss` with respect to `w`, `bias`, `v` and `x`.
    pub grads: GradientMap,
}

impl TwoLayer {
    /// Forward output and every gradient: what one training step computes.
    pub fn outputs(&self) -> Vec<NodeId> {
        let mut out = vec![self.y];
        out.extend(self.grads.values());
        out
    }

    pub fn params(&self) -> [NodeId; 3] {
        [self.w, self.bias, self.v]
    }
}

/// Builds the forward graph only.
pub fn two_layer_forward(b: usize, d_io: usize, d_h: usize) -> Result<Graph, IrError> {
    Ok(two_layer_parts(b, d_io, d_h)?.0)
}

fn two_layer_parts(b: usize, d_io: usize, d_h: usize) -> Result<(Graph, [NodeId; 8]), IrError> {
    let mut g = Graph::new();
    let x = g.input("x", Shape::of(&[("batch", b), ("io", d_io)])?)?;
    let w = g.variable("w", Shape::of(&[("io", d_io), ("hidden", d_h)])?)?;
    let bias = g.variable("bias", Shape::of(&[("hidden", d_h)])?)?;
    let v = g.variable("v", Shape::of(&[("hidden", d_h), ("io", d_io)])?)?;
    let xw = g.einsum("xw", &[x, w], Shape::of(&[("batch", b), ("hidden", d_h)])?)?;
    let pre = g.add("pre", xw, bias)?;
    let h = g.relu("h", pre)?;
    let y = g.einsum("y", &[h, v], Shape::of(&[("batch", b), ("io", d_io)])?)?;
    let dy = g.input("dy", Shape::of(&[("batch", b), ("io", d_io)])?)?;
    let t = g.mul("y_dy", y, dy)?;
    let loss = g.reduce_sum_all("loss", t)?;
    Ok((g, [x, w, bias, v, h, y, dy, loss]))
}

/// Builds the network with its loss and gradient nodes.
pub fn two_layer(b: usize, d_io: usize, d_h: usize) -> Result<TwoLayer, GradError> {
    let (graph, [x, w, bias, v, h, y, dy, loss]) = two_layer_parts(b, d_io, d_h)?;
    let (graph, grads) = gradients(&graph, loss, &[w, bias, v, x])?;
    Ok(TwoLayer { graph, x, w, bias, v, h, y, dy, loss, grads })
}

/// One step of synchronous SGD on the two-layer network: the parameters
/// after the update, in the order `w`, `bias`, `v`.
pub fn two_layer_sgd_step(
    b: usize,
    d_io: usize,
    d_h: usize,
    learning_rate: f64,
) -> Result<(TwoLayer, Graph, Vec<NodeId>), GradError> {
    let net = two_layer(b, d_io, d_h)?;
    let param_grads: GradientMap = net.params().iter().map(|p| (*p, net.grads[p])).collect();
    let (graph, updated) = sgd_update(&net.graph, &param_grads, learning_rate)?;
    let outs = net.params().iter().map(|p| updated[p]).collect();
    Ok((net, graph, outs))
}

/// A named layout for the two-layer network together with a mesh shape.
#[derive(Debug, Clone)]
pub struct NamedLayout {
    pub name: &'static str,
    pub layout: ComputationLayout,
    pub mesh: Mesh,
}

/// The five standard layouts of the two-layer network: replicated,
/// batch-split, hidden-split, a 2D batch×hidden tiling and a 3D tiling that
/// also splits `io`. `mesh_sizes` is `[n, r, c, p]`.
pub fn two_layer_layouts(n: usize, r: usize, c: usize, p: usize) -> Result<Vec<NamedLayout>, LayoutError> {
    let all = Mesh::of(&[("all", n)])?;
    Ok(vec![
        NamedLayout { name: "replicated", layout: ComputationLayout::empty(), mesh: all.clone() },
        NamedLayout { name: "data-parallel", layout: ComputationLayout::of(&[("batch", "all")])?, mesh: all.clone() },
        NamedLayout { name: "model-parallel", layout: ComputationLayout::of(&[("hidden", "all")])?, mesh: all },
        NamedLayout {
            name: "2d",
            layout: ComputationLayout::of(&[("batch", "rows"), ("hidden", "cols")])?,
            mesh: Mesh::of(&[("rows", r), ("cols", c)])?,
        },
        NamedLayout {
            name: "3d",
            layout: ComputationLayout::of(&[("batch", "rows"), ("hidden", "cols"), ("io", "planes")])?,
            mesh: Mesh::of(&[("rows", r), ("cols", c), ("planes", p)])?,
        },
    ])
}

/// Sizes of the toy Transformer block.
#[derive(Debug, Clone, Copy)]
pub struct TransformerSizes {
    pub batch: usize,
    pub length: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    pub vocab: usize,
}

impl Default for TransformerSizes {
    fn default() -> Self {
        Self { batch: 2, length: 4, d_model: 8, heads: 4, d_k: 2, d_ff: 16, vocab: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub graph: Graph,
    pub loss: NodeId,
    /// The input `x` followed by every weight.
    pub wrt: Vec<NodeId>,
}

/// One self-attention layer and one feed-forward layer, both residual,
/// followed by a vocabulary projection and a linear loss against `target`.
/// Keys and values see the input under a separate `memory_length`
/// dimension, obtained by a reshape that only renames `length`.
pub fn transformer_block(s: TransformerSizes) -> Result<Transformer, IrError> {
    let mut g = Graph::new();
    let bld = [("batch", s.batch), ("length", s.length), ("d_model", s.d_model)];
    let x = g.input("x", Shape::of(&bld)?)?;
    let xm = g.reshape(
        "x_memory",
        x,
        Shape::of(&[("batch", s.batch), ("memory_length", s.length), ("d_model", s.d_model)])?,
    )?;
    let proj = Shape::of(&[("d_model", s.d_model), ("heads", s.heads), ("d_k", s.d_k)])?;
    let wq = g.variable("wq", proj.clone())?;
    let wk = g.variable("wk", proj.clone())?;
    let wv = g.variable("wv", proj)?;
    let wo = g.variable("wo", Shape::of(&[("heads", s.heads), ("d_k", s.d_k), ("d_model", s.d_model)])?)?;
    let q = g.einsum(
        "q",
        &[x, wq],
        Shape::of(&[("batch", s.batch), ("length", s.length), ("heads", s.heads), ("d_k", s.d_k)])?,
    )?;
    let mem = Shape::of(&[("batch", s.batch), ("memory_length", s.length), ("heads", s.heads), ("d_k", s.d_k)])?;
    let k = g.einsum("k", &[xm, wk], mem.clone())?;
    let v = g.einsum("v", &[xm, wv], mem)?;
    let logits = g.einsum(
        "logits",
        &[q, k],
        Shape::of(&[("batch", s.batch), ("heads", s.heads), ("length", s.length), ("memory_length", s.length)])?,
    )?;
    let peak = g.reduce("logits_max", logits, &["memory_length"], ReduceKind::Max)?;
    let shifted = g.sub("logits_shifted", logits, peak)?;
    let e = g.exp("weights_unnormalized", shifted)?;
    let z = g.reduce("normalizer", e, &["memory_length"], ReduceKind::Sum)?;
    let weights = g.div("weights", e, z)?;
    let o = g.einsum(
        "attended",
        &[weights, v],
        Shape::of(&[("batch", s.batch), ("length", s.length), ("heads", s.heads), ("d_k", s.d_k)])?,
    )?;
    let attn = g.einsum("attention", &[o, wo], Shape::of(&bld)?)?;
    let r1 = g.add("residual1", x, attn)?;

    let w1 = g.variable("w1", Shape::of(&[("d_model", s.d_model), ("d_ff", s.d_ff)])?)?;
    let w2 = g.variable("w2", Shape::of(&[("d_ff", s.d_ff), ("d_model", s.d_model)])?)?;
    let f = g.einsum("ff_in", &[r1, w1], Shape::of(&[("batch", s.batch), ("length", s.length), ("d_ff", s.d_ff)])?)?;
    let f = g.relu("ff_hidden", f)?;
    let f = g.einsum("ff_out", &[f, w2], Shape::of(&bld)?)?;
    let r2 = g.add("residual2", r1, f)?;

    let emb = g.variable("embedding", Shape::of(&[("d_model", s.d_model), ("vocab", s.vocab)])?)?;
    let out_shape = Shape::of(&[("batch", s.batch), ("length", s.length), ("vocab", s.vocab)])?;
    let scores = g.einsum("vocab_logits", &[r2, emb], out_shape.clone())?;
    let target = g.input("target", out_shape)?;
    let t = g.mul("scored", scores, target)?;
    let loss = g.reduce_sum_all("loss", t)?;
    Ok(Transformer { graph: g, loss, wrt: vec![x, wq, wk, wv, wo, w1, w2, emb] })
}

/// The block's standard layout: vocabulary, feed-forward hidden units and
/// attention heads all split across one mesh dimension.
pub fn transformer_layout() -> ComputationLayout {
    ComputationLayout::of(&[("vocab", "all"), ("d_ff", "all"), ("heads", "all")]).expect("distinct rules")
}
