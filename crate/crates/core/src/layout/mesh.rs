use std::fmt;

use serde::{Deserialize, Serialize};

use super::LayoutError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeshDim {
    pub name: String,
    pub size: usize,
}

/// An n-dimensional array of identical processors with named dimensions.
/// The names carry no physical topology.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, usize)>", into = "Vec<(String, usize)>")]
pub struct Mesh {
    dims: Vec<MeshDim>,
}

impl Mesh {
    pub fn new(dims: Vec<(String, usize)>) -> Result<Self, LayoutError> {
        let mut out: Vec<MeshDim> = Vec::with_capacity(dims.len());
        for (name, size) in dims {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(LayoutError::InvalidMeshDim(name));
            }
            if size == 0 {
                return Err(LayoutError::InvalidMeshDim(name));
            }
            if out.iter().any(|d| d.name == name) {
                return Err(LayoutError::DuplicateMeshDim(name));
            }
            out.push(MeshDim { name, size });
        }
        Ok(Self { dims: out })
    }

    /// ```
    /// use meshtensor::Mesh;
    /// let mesh = Mesh::of(&[("rows", 2), ("cols", 3)]).unwrap();
    /// assert_eq!(mesh.num_processors(), 6);
    /// ```
    pub fn of(pairs: &[(&str, usize)]) -> Result<Self, LayoutError> {
        Self::new(pairs.iter().map(|&(n, s)| (n.to_string(), s)).collect())
    }

    pub fn dims(&self) -> &[MeshDim] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn size(&self, name: &str) -> Option<usize> {
        self.dims.iter().find(|d| d.name == name).map(|d| d.size)
    }

    pub fn num_processors(&self) -> usize {
        self.dims.iter().map(|d| d.size).product()
    }

    /// All processor coordinates in row-major order over the mesh dimensions.
    pub fn coords(&self) -> Vec<ProcessorCoord> {
        let mut out = Vec::with_capacity(self.num_processors());
        let sizes: Vec<usize> = self.dims.iter().map(|d| d.size).collect();
        crate::ir::kernels::for_each_index(&sizes, |idx| out.push(ProcessorCoord(idx.to_vec())));
        out
    }

    pub fn linear_index(&self, coord: &ProcessorCoord) -> usize {
        coord
            .0
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (c, d)| acc * d.size + c)
    }

    pub fn check_coord(&self, coord: &ProcessorCoord) -> Result<(), LayoutError> {
        let ok = coord.0.len() == self.rank()
            && coord.0.iter().zip(&self.dims).all(|(c, d)| *c < d.size);
        if ok {
            Ok(())
        } else {
            Err(LayoutError::CoordOutOfRange(coord.clone()))
        }
    }
}

impl TryFrom<Vec<(String, usize)>> for Mesh {
    type Error = LayoutError;
    fn try_from(v: Vec<(String, usize)>) -> Result<Self, LayoutError> {
        Mesh::new(v)
    }
}

impl From<Mesh> for Vec<(String, usize)> {
    fn from(m: Mesh) -> Self {
        m.dims.into_iter().map(|d| (d.name, d.size)).collect()
    }
}

impl fmt::Display for Mesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", d.name, d.size)?;
        }
        f.write_str("]")
    }
}

/// One coordinate per mesh dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProcessorCoord(pub Vec<usize>);

impl ProcessorCoord {
    pub fn along(&self, mesh_pos: usize) -> usize {
        self.0[mesh_pos]
    }
}

impl fmt::Display for ProcessorCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}
