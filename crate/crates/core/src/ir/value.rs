use serde::{Deserialize, Serialize};

use super::{IrError, Shape};

/// A dense row-major `f64` tensor with named dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    shape: Shape,
    data: Vec<f64>,
}

impl TensorValue {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, IrError> {
        if data.len() != shape.num_elements() {
            return Err(IrError::DataLength {
                expected: shape.num_elements(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.num_elements();
        Self { shape, data: vec![value; n] }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Reinterprets the row-major buffer under a new shape of equal element count.
    pub fn reshaped(&self, shape: Shape) -> Result<Self, IrError> {
        if shape.num_elements() != self.data.len() {
            return Err(IrError::ReshapeCountMismatch {
                from: self.shape.clone(),
                to: shape,
            });
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    /// Element at a multi-index given in this tensor's dimension order.
    pub fn at(&self, index: &[usize]) -> f64 {
        let offset: usize = index
            .iter()
            .zip(self.shape.strides())
            .map(|(i, s)| i * s)
            .sum();
        self.data[offset]
    }

    /// Applies `f` element-wise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Largest element-wise relative error against `other`. Magnitudes below
    /// `1e-6` are measured against that floor instead of themselves.
    pub fn max_rel_error(&self, other: &TensorValue) -> f64 {
        if self.data.len() != other.data.len() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_is_checked() {
        let s = Shape::of(&[("a", 2)]).unwrap();
        assert!(TensorValue::new(s, vec![1.0]).is_err());
    }

    #[test]
    fn at_uses_row_major_offsets() {
        let s = Shape::of(&[("i", 2), ("j", 3)]).unwrap();
        let t = TensorValue::new(s, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(&[1, 2]), 5.0);
        assert_eq!(t.at(&[0, 1]), 1.0);
    }
}
