use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{LayoutError, Mesh};
use crate::ir::{union_shape, Graph, NodeKind, Shape};

/// Global partial map from tensor-dimension names to mesh-dimension names.
/// Equality is set-based; iteration and serialization are sorted by tensor
/// dimension name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, String)>", into = "Vec<(String, String)>")]
pub struct ComputationLayout {
    rules: BTreeMap<String, String>,
}

impl ComputationLayout {
    pub fn new(rules: Vec<(String, String)>) -> Result<Self, LayoutError> {
        let mut map = BTreeMap::new();
        for (t, m) in rules {
            if map.insert(t.clone(), m).is_some() {
                return Err(LayoutError::DuplicateRule(t));
            }
        }
        Ok(Self { rules: map })
    }

    /// ```
    /// use meshtensor::ComputationLayout;
    /// let layout = ComputationLayout::of(&[("batch", "rows"), ("hidden", "cols")]).unwrap();
    /// assert_eq!(layout.mesh_dim_for("hidden"), Some("cols"));
    /// ```
    pub fn of(pairs: &[(&str, &str)]) -> Result<Self, LayoutError> {
        Self::new(pairs.iter().map(|&(t, m)| (t.to_string(), m.to_string())).collect())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = (&str, &str)> {
        self.rules.iter().map(|(t, m)| (t.as_str(), m.as_str()))
    }

    pub fn rule_list(&self) -> Vec<(String, String)> {
        self.rules.iter().map(|(t, m)| (t.clone(), m.clone())).collect()
    }

    pub fn mesh_dim_for(&self, tensor_dim: &str) -> Option<&str> {
        self.rules.get(tensor_dim).map(String::as_str)
    }
}

impl TryFrom<Vec<(String, String)>> for ComputationLayout {
    type Error = LayoutError;
    fn try_from(v: Vec<(String, String)>) -> Result<Self, LayoutError> {
        Self::new(v)
    }
}

impl From<ComputationLayout> for Vec<(String, String)> {
    fn from(l: ComputationLayout) -> Self {
        l.rule_list()
    }
}

impl fmt::Display for ComputationLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (t, m)) in self.rules().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "(\"{t}\", \"{m}\")")?;
        }
        f.write_str("]")
    }
}

/// Per-position mesh assignment for one tensor: `assignments[i]` is the mesh
/// dimension splitting the tensor's i-th dimension, if any.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorLayout {
    pub assignments: Vec<Option<String>>,
}

impl TensorLayout {
    pub fn replicated(rank: usize) -> Self {
        Self { assignments: vec![None; rank] }
    }

    pub fn is_replicated(&self) -> bool {
        self.assignments.iter().all(Option::is_none)
    }

    pub fn mesh_dim_at(&self, pos: usize) -> Option<&str> {
        self.assignments[pos].as_deref()
    }

    /// Position of the tensor dimension split across `mesh_dim`.
    pub fn position_of(&self, mesh_dim: &str) -> Option<usize> {
        self.assignments.iter().position(|a| a.as_deref() == Some(mesh_dim))
    }

    /// Mesh dimensions used by this layout.
    pub fn image(&self) -> BTreeSet<&str> {
        self.assignments.iter().flatten().map(String::as_str).collect()
    }

    /// Mesh dimensions that split more than one tensor dimension.
    pub fn doubly_used(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut dup = BTreeSet::new();
        for m in self.assignments.iter().flatten() {
            if !seen.insert(m.as_str()) {
                dup.insert(m.as_str());
            }
        }
        dup.into_iter().collect()
    }

    pub fn is_injective(&self) -> bool {
        self.doubly_used().is_empty()
    }
}

/// Restricts the computation layout to the dimensions of one tensor. An
/// empty result means the tensor is fully replicated.
pub fn restrict(layout: &ComputationLayout, shape: &Shape) -> TensorLayout {
    TensorLayout {
        assignments: shape
            .names()
            .map(|n| layout.mesh_dim_for(n).map(str::to_string))
            .collect(),
    }
}

/// A reason a layout cannot be used for a graph on a mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation")]
pub enum Violation {
    /// Two dimensions of one tensor map to the same mesh dimension.
    DoubleSplit { tensor: String, mesh_dim: String, dims: Vec<String> },
    /// The operands of an einsum jointly split two dimensions across one
    /// mesh dimension, so no processor holds matching blocks.
    EinsumDoubleSplit { tensor: String, mesh_dim: String, dims: Vec<String> },
    NotDivisible { tensor: String, dim: String, dim_size: usize, mesh_dim: String, mesh_size: usize },
    UnknownMeshDim { name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DoubleSplit { tensor, mesh_dim, dims } => write!(
                f,
                "DoubleSplit: tensor {tensor} splits dimensions {} across mesh dimension \"{mesh_dim}\"",
                dims.join(", ")
            ),
            Violation::EinsumDoubleSplit { tensor, mesh_dim, dims } => write!(
                f,
                "EinsumDoubleSplit: operands of einsum {tensor} split dimensions {} across mesh dimension \"{mesh_dim}\"",
                dims.join(", ")
            ),
            Violation::NotDivisible { tensor, dim, dim_size, mesh_dim, mesh_size } => write!(
                f,
                "NotDivisible: tensor {tensor} dimension {dim} of size {dim_size} is not divisible by mesh dimension \"{mesh_dim}\" of size {mesh_size}"
            ),
            Violation::UnknownMeshDim { name } => write!(f, "UnknownMeshDim: mesh has no dimension \"{name}\""),
        }
    }
}

fn double_splits(shape: &Shape, tl: &TensorLayout) -> Vec<(String, Vec<String>)> {
    tl.doubly_used()
        .into_iter()
        .map(|m| {
            let dims = shape
                .names()
                .zip(&tl.assignments)
                .filter(|(_, a)| a.as_deref() == Some(m))
                .map(|(n, _)| n.to_string())
                .collect();
            (m.to_string(), dims)
        })
        .collect()
}

/// Checks every tensor of the graph against the layout. All violations are
/// returned, not just the first.
pub fn validate_layout(graph: &Graph, layout: &ComputationLayout, mesh: &Mesh) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let mut unknown = BTreeSet::new();
    for (_, m) in layout.rules() {
        if mesh.position(m).is_none() && unknown.insert(m.to_string()) {
            violations.push(Violation::UnknownMeshDim { name: m.to_string() });
        }
    }
    for node in graph.nodes() {
        let tl = restrict(layout, &node.shape);
        for (mesh_dim, dims) in double_splits(&node.shape, &tl) {
            violations.push(Violation::DoubleSplit { tensor: node.name.clone(), mesh_dim, dims });
        }
        for (d, a) in node.shape.dims().iter().zip(&tl.assignments) {
            let Some(m) = a else { continue };
            let Some(mesh_size) = mesh.size(m) else { continue };
            if d.size % mesh_size != 0 {
                violations.push(Violation::NotDivisible {
                    tensor: node.name.clone(),
                    dim: d.name.clone(),
                    dim_size: d.size,
                    mesh_dim: m.clone(),
                    mesh_size,
                });
            }
        }
        if node.kind == NodeKind::Einsum {
            let shapes: Vec<&Shape> = node.inputs.iter().map(|i| graph.shape(*i)).collect();
            if let Ok(union) = union_shape(&shapes) {
                let utl = restrict(layout, &union);
                let per_tensor: BTreeSet<String> = node
                    .inputs
                    .iter()
                    .chain(std::iter::once(&node.id))
                    .flat_map(|i| {
                        let s = graph.shape(*i);
                        restrict(layout, s).doubly_used().into_iter().map(str::to_string).collect::<Vec<_>>()
                    })
                    .collect();
                for (mesh_dim, dims) in double_splits(&union, &utl) {
                    if !per_tensor.contains(&mesh_dim) {
                        violations.push(Violation::EinsumDoubleSplit { tensor: node.name.clone(), mesh_dim, dims });
                    }
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restrict_keeps_only_present_dims() {
        let layout = ComputationLayout::of(&[("batch", "all")]).unwrap();
        let s = Shape::of(&[("io", 6), ("hidden", 8)]).unwrap();
        assert!(restrict(&layout, &s).is_replicated());
        let l2 = ComputationLayout::of(&[("batch", "rows"), ("hidden", "cols")]).unwrap();
        let h = Shape::of(&[("batch", 4), ("hidden", 8)]).unwrap();
        assert_eq!(
            restrict(&l2, &h).assignments,
            vec![Some("rows".to_string()), Some("cols".to_string())]
        );
        assert!(restrict(&ComputationLayout::empty(), &h).is_replicated());
    }

    #[test]
    fn duplicate_rule_rejected() {
        assert!(ComputationLayout::of(&[("a", "x"), ("a", "y")]).is_err());
    }

    #[test]
    fn equality_ignores_rule_order() {
        let a = ComputationLayout::of(&[("a", "x"), ("b", "y")]).unwrap();
        let b = ComputationLayout::of(&[("b", "y"), ("a", "x")]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "[(\"a\", \"x\"), (\"b\", \"y\")]");
    }

    #[test]
    fn einsum_operands_jointly_double_split() {
        let mut g = Graph::new();
        let a = g.input("a", Shape::of(&[("i", 2), ("j", 2)]).unwrap()).unwrap();
        let b = g.input("b", Shape::of(&[("k", 2)]).unwrap()).unwrap();
        g.einsum("c", &[a, b], Shape::of(&[("i", 2), ("k", 2)]).unwrap()).unwrap();
        let layout = ComputationLayout::of(&[("j", "m"), ("k", "m")]).unwrap();
        let mesh = Mesh::of(&[("m", 2)]).unwrap();
        let v = validate_layout(&g, &layout, &mesh).unwrap_err();
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::EinsumDoubleSplit { tensor, .. } if tensor == "c"));
    }

    #[test]
    fn unknown_mesh_dim_reported_once() {
        let mut g = Graph::new();
        g.input("a", Shape::of(&[("i", 2)]).unwrap()).unwrap();
        let layout = ComputationLayout::of(&[("i", "nope")]).unwrap();
        let v = validate_layout(&g, &layout, &Mesh::of(&[("m", 2)]).unwrap()).unwrap_err();
        assert_eq!(v, vec![Violation::UnknownMeshDim { name: "nope".into() }]);
    }
}
