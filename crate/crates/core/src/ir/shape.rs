use std::fmt;

use serde::{Deserialize, Serialize};

use super::IrError;

/// A named tensor dimension. Identity is by name; sizes must agree wherever
/// the name is used.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub size: usize,
}

impl Dimension {
    pub fn new(name: impl Into<String>, size: usize) -> Result<Self, IrError> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(IrError::InvalidDimName(name));
        }
        if size == 0 {
            return Err(IrError::ZeroSizedDim(name));
        }
        Ok(Self { name, size })
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.size)
    }
}

/// An ordered tuple of distinctly-named dimensions. The empty shape is a scalar.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dimension>", into = "Vec<Dimension>")]
pub struct Shape {
    dims: Vec<Dimension>,
}

impl Shape {
    pub fn new(dims: Vec<Dimension>) -> Result<Self, IrError> {
        for (i, d) in dims.iter().enumerate() {
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(IrError::DuplicateDimName(d.name.clone()));
            }
        }
        Ok(Self { dims })
    }

    /// Convenience constructor from `(name, size)` pairs.
    ///
    /// ```
    /// use meshtensor::Shape;
    /// let s = Shape::of(&[("batch", 4), ("io", 6)]).unwrap();
    /// assert_eq!(s.num_elements(), 24);
    /// ```
    pub fn of(pairs: &[(&str, usize)]) -> Result<Self, IrError> {
        let dims = pairs
            .iter()
            .map(|&(n, s)| Dimension::new(n, s))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dims)
    }

    pub fn scalar() -> Self {
        Self::default()
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().map(|d| d.size).product()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.size).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Dimension> {
        self.dims.iter().find(|d| d.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    /// True when every dimension of `self` appears (by name and size) in `other`.
    pub fn is_subset_of(&self, other: &Shape) -> bool {
        self.dims.iter().all(|d| other.get(&d.name) == Some(d))
    }

    /// Same dimension set, possibly in a different order.
    pub fn same_dims(&self, other: &Shape) -> bool {
        self.rank() == other.rank() && self.is_subset_of(other)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.rank()];
        for i in (0..self.rank().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1].size;
        }
        strides
    }

    /// Returns a copy with the dimension at `pos` resized.
    pub fn with_size(&self, pos: usize, size: usize) -> Shape {
        let mut dims = self.dims.clone();
        dims[pos].size = size;
        Shape { dims }
    }

    /// Shape with the named dimensions removed, order preserved.
    pub fn without(&self, names: &[String]) -> Shape {
        Shape {
            dims: self
                .dims
                .iter()
                .filter(|d| !names.contains(&d.name))
                .cloned()
                .collect(),
        }
    }
}

impl TryFrom<Vec<Dimension>> for Shape {
    type Error = IrError;
    fn try_from(dims: Vec<Dimension>) -> Result<Self, IrError> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<Dimension> {
    fn from(s: Shape) -> Self {
        s.dims
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}
