//! JSON program files: a graph, a mesh, a layout and input bindings in one
//! document.
//!
//! ```json
//! {
//!   "dims": {"batch": 8, "io": 4},
//!   "mesh": [["all", 2]],
//!   "layout": [["batch", "all"]],
//!   "graph": [
//!     {"id": "x", "kind": "input", "shape": ["batch", "io"]},
//!     {"id": "s", "kind": "reduce_sum", "inputs": ["x"], "dims": ["batch"]}
//!   ],
//!   "bindings": {
//!     "x": {"seed": 1, "rng": "splitmix64", "distribution": {"uniform": [-1.0, 1.0]}}
//!   },
//!   "outputs": ["s"]
//! }
//! ```
//!
//! Node kinds are `input`, `variable`, `constant` (with `value`), `einsum`,
//! `reshape`, `reduce_sum`, `reduce_max`, `argmax_mask` (with `dims`), and
//! the component-wise ops `add`, `sub`, `mul`, `div`, `neg`, `relu`,
//! `step`, `exp`. Bindings are either a seeded uniform distribution or an inline
//! array, flat or nested, in row-major order.
//!
//! Optional sections: `loss` and `wrt` append gradient nodes, and `train`
//! (`{"learning_rate": 0.1}`) appends an SGD update of every `wrt` variable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::autodiff::{gradients, sgd_update, GradientMap};
use crate::ir::{Bindings, CwOp, Dimension, Graph, NodeId, NodeKind, ReduceKind, Shape, TensorValue};
use crate::layout::{ComputationLayout, Mesh};
use crate::rng;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl ToString) -> ProgramError {
    ProgramError::Invalid { path: path.into(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramFile {
    pub dims: BTreeMap<String, usize>,
    pub mesh: Vec<(String, usize)>,
    #[serde(default)]
    pub layout: Vec<(String, String)>,
    pub graph: Vec<NodeRecord>,
    #[serde(default)]
    pub bindings: BTreeMap<String, Binding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wrt: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Train>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Binding {
    Seeded(Seeded),
    Inline(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeded {
    pub seed: u64,
    #[serde(default = "default_rng")]
    pub rng: String,
    pub distribution: Distribution,
}

fn default_rng() -> String {
    rng::ALGORITHM.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum Distribution {
    Uniform([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Train {
    pub learning_rate: f64,
}

/// A loaded program, ready to validate, lower or run.
#[derive(Debug, Clone)]
pub struct Program {
    /// The graph as written, before gradient or update nodes.
    pub forward: Graph,
    /// The forward graph plus any gradient and update nodes.
    pub graph: Graph,
    pub mesh: Mesh,
    pub layout: ComputationLayout,
    pub bindings: Bindings,
    pub loss: Option<NodeId>,
    pub wrt: Vec<NodeId>,
    pub grads: GradientMap,
    /// Updated value of each trained parameter.
    pub updates: BTreeMap<NodeId, NodeId>,
    /// Everything a run computes: the listed outputs, then gradients, then
    /// updates.
    pub outputs: Vec<NodeId>,
}

impl ProgramFile {
    pub fn parse(text: &str) -> Result<Self, ProgramError> {
        serde_json::from_str(text).map_err(|e| ProgramError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ProgramError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ProgramError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Indented JSON where any value that fits in one short line stays on
    /// one line.
    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("program files serialize");
        let mut out = String::new();
        write_compact(&v, 0, &mut out);
        out
    }

    /// Replaces every seeded binding's seed by `seed + i`, `i` being the
    /// binding's position in name order.
    pub fn reseed(&mut self, seed: u64) {
        for (i, b) in self.bindings.values_mut().enumerate() {
            if let Binding::Seeded(s) = b {
                s.seed = seed.wrapping_add(i as u64);
            }
        }
    }

    /// Describes an existing graph, binding every input and variable to a
    /// seeded uniform stream. Seeds count up from `seed` in node order.
    pub fn from_graph(graph: &Graph, mesh: &Mesh, layout: &ComputationLayout, seed: u64) -> Self {
        let mut dims = BTreeMap::new();
        let mut records = Vec::new();
        let mut bindings = BTreeMap::new();
        let names = |s: &Shape| s.names().map(String::from).collect::<Vec<_>>();
        for node in graph.nodes() {
            for d in node.shape.dims() {
                dims.insert(d.name.clone(), d.size);
            }
            let inputs = node.inputs.iter().map(|i| graph.node(*i).name.clone()).collect();
            let mut r = NodeRecord { id: node.name.clone(), kind: String::new(), inputs, shape: None, dims: None, value: None };
            match &node.kind {
                NodeKind::Input | NodeKind::Variable => {
                    r.kind = if node.kind == NodeKind::Input { "input" } else { "variable" }.into();
                    r.shape = Some(names(&node.shape));
                    let n = bindings.len() as u64;
                    bindings.insert(
                        node.name.clone(),
                        Binding::Seeded(Seeded {
                            seed: seed + n,
                            rng: default_rng(),
                            distribution: Distribution::Uniform([-1.0, 1.0]),
                        }),
                    );
                }
                NodeKind::Constant { value } => {
                    r.kind = "constant".into();
                    r.shape = Some(names(&node.shape));
                    r.value = Some(*value);
                }
                NodeKind::ComponentWise { op } => r.kind = op.name().into(),
                NodeKind::Einsum => {
                    r.kind = "einsum".into();
                    r.shape = Some(names(&node.shape));
                }
                NodeKind::Reshape => {
                    r.kind = "reshape".into();
                    r.shape = Some(names(&node.shape));
                }
                NodeKind::Reduce { dims, reduction } => {
                    r.kind = match reduction {
                        ReduceKind::Sum => "reduce_sum",
                        ReduceKind::Max => "reduce_max",
                    }
                    .into();
                    r.dims = Some(dims.clone());
                }
                NodeKind::ArgmaxMask { dims } => {
                    r.kind = "argmax_mask".into();
                    r.dims = Some(dims.clone());
                }
            }
            records.push(r);
        }
        ProgramFile {
            dims,
            mesh: mesh.dims().iter().map(|d| (d.name.clone(), d.size)).collect(),
            layout: layout.rule_list(),
            graph: records,
            bindings,
            outputs: None,
            loss: None,
            wrt: Vec::new(),
            train: None,
        }
    }

    fn shape(&self, names: &[String], path: &str) -> Result<Shape, ProgramError> {
        let dims = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let size = *self
                    .dims
                    .get(n)
                    .ok_or_else(|| invalid(format!("{path}[{i}]"), format!("dimension {n:?} is not declared in dims")))?;
                Dimension::new(n, size).map_err(|e| invalid(format!("{path}[{i}]"), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Shape::new(dims).map_err(|e| invalid(path, e))
    }

    /// Builds the graph, mesh, layout and bindings. Layout legality is not
    /// checked here.
    pub fn load(&self) -> Result<Program, ProgramError> {
        for (name, size) in &self.dims {
            Dimension::new(name, *size).map_err(|e| invalid(format!("dims.{name}"), e))?;
        }
        let mesh = Mesh::new(self.mesh.clone()).map_err(|e| invalid("mesh", e))?;
        let layout = ComputationLayout::new(self.layout.clone()).map_err(|e| invalid("layout", e))?;

        let mut g = Graph::new();
        for (i, rec) in self.graph.iter().enumerate() {
            let path = format!("graph[{i}]");
            let inputs = rec
                .inputs
                .iter()
                .enumerate()
                .map(|(j, name)| {
                    g.find(name).ok_or_else(|| {
                        invalid(format!("{path}.inputs[{j}]"), format!("unknown node {name:?}; inputs must be defined earlier"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let shape = rec.shape.as_ref().map(|s| self.shape(s, &format!("{path}.shape"))).transpose()?;
            let dims = || -> Result<Vec<String>, ProgramError> {
                rec.dims.clone().ok_or_else(|| invalid(format!("{path}.dims"), format!("{} needs dims", rec.kind)))
            };
            let kind = match rec.kind.as_str() {
                "input" => NodeKind::Input,
                "variable" => NodeKind::Variable,
                "constant" => NodeKind::Constant {
                    value: rec.value.ok_or_else(|| invalid(format!("{path}.value"), "constant needs a value"))?,
                },
                "einsum" => NodeKind::Einsum,
                "reshape" => NodeKind::Reshape,
                "reduce_sum" => NodeKind::Reduce { dims: dims()?, reduction: ReduceKind::Sum },
                "reduce_max" => NodeKind::Reduce { dims: dims()?, reduction: ReduceKind::Max },
                "argmax_mask" => NodeKind::ArgmaxMask { dims: dims()? },
                other => match CwOp::from_name(other) {
                    Some(op) => NodeKind::ComponentWise { op },
                    None => return Err(invalid(format!("{path}.kind"), format!("unknown node kind {other:?}"))),
                },
            };
            g.add_node(&rec.id, kind, &inputs, shape).map_err(|e| invalid(&path, e))?;
        }

        let lookup = |name: &str, path: String| g.find(name).ok_or_else(|| invalid(path, format!("unknown node {name:?}")));
        let mut bindings = Bindings::new();
        for (name, b) in &self.bindings {
            let path = format!("bindings.{name}");
            let id = lookup(name, path.clone())?;
            let shape = g.shape(id).clone();
            let value = match b {
                Binding::Seeded(s) => {
                    if s.rng != rng::ALGORITHM {
                        return Err(invalid(format!("{path}.rng"), format!("unsupported generator {:?}", s.rng)));
                    }
                    let Distribution::Uniform([lo, hi]) = s.distribution;
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(invalid(format!("{path}.distribution"), "uniform bounds must satisfy lo <= hi"));
                    }
                    rng::uniform(shape, s.seed, lo, hi)
                }
                Binding::Inline(v) => {
                    let mut data = Vec::new();
                    flatten(v, &mut data).map_err(|m| invalid(&path, m))?;
                    TensorValue::new(shape, data).map_err(|e| invalid(&path, e))?
                }
            };
            bindings.insert(name.clone(), value);
        }

        let forward = g.clone();
        let mut outputs = match &self.outputs {
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, n)| lookup(n, format!("outputs[{i}]")))
                .collect::<Result<Vec<_>, _>>()?,
            None => forward.sinks(),
        };
        let loss = self.loss.as_ref().map(|n| lookup(n, "loss".into())).transpose()?;
        let wrt = self
            .wrt
            .iter()
            .enumerate()
            .map(|(i, n)| lookup(n, format!("wrt[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;

        let mut graph = forward.clone();
        let mut grads = GradientMap::new();
        let mut updates = BTreeMap::new();
        if let Some(loss) = loss {
            let (gg, gm) = gradients(&forward, loss, &wrt).map_err(|e| invalid("loss", e))?;
            graph = gg;
            grads = gm;
            outputs.extend(wrt.iter().map(|w| grads[w]));
        } else if !wrt.is_empty() {
            return Err(invalid("wrt", "gradients need a loss"));
        }
        if let Some(train) = &self.train {
            if loss.is_none() {
                return Err(invalid("train", "training needs a loss and wrt"));
            }
            let params: GradientMap = grads
                .iter()
                .filter(|(p, _)| forward.node(**p).kind == NodeKind::Variable)
                .map(|(p, g)| (*p, *g))
                .collect();
            let (ug, up) = sgd_update(&graph, &params, train.learning_rate).map_err(|e| invalid("train", e))?;
            graph = ug;
            updates = up;
            outputs.extend(wrt.iter().filter_map(|w| updates.get(w)));
        }
        let mut seen = std::collections::BTreeSet::new();
        outputs.retain(|o| seen.insert(*o));
        Ok(Program { forward, graph, mesh, layout, bindings, loss, wrt, grads, updates, outputs })
    }
}

impl Program {
    /// Leaves of the graph with no binding, in node order.
    pub fn unbound(&self) -> Vec<String> {
        self.graph
            .nodes()
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Input | NodeKind::Variable) && !self.bindings.contains_key(&n.name))
            .map(|n| n.name.clone())
            .collect()
    }
}

const LINE: usize = 96;

fn one_line(v: &Value) -> String {
    match v {
        Value::Object(map) => {
            let items: Vec<String> =
                map.iter().map(|(k, x)| format!("{}: {}", Value::String(k.clone()), one_line(x))).collect();
            format!("{{{}}}", items.join(", "))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(one_line).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

fn write_compact(v: &Value, indent: usize, out: &mut String) {
    let flat = one_line(v);
    if flat.len() + indent <= LINE {
        out.push_str(&flat);
        return;
    }
    let pad = "  ".repeat(indent + 1);
    match v {
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                out.push_str(&pad);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_compact(item, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push('}');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad);
                write_compact(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push(']');
        }
        _ => out.push_str(&flat),
    }
}

fn flatten(v: &Value, out: &mut Vec<f64>) -> Result<(), String> {
    match v {
        Value::Number(n) => out.push(n.as_f64().ok_or("number out of range")?),
        Value::Array(items) => {
            for item in items {
                flatten(item, out)?;
            }
        }
        other => return Err(format!("expected numbers or arrays of numbers, found {other}")),
    }
    Ok(())
}
