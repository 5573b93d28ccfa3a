//! Portable seeded values: SplitMix64 with the top 53 bits mapped to
//! `[0, 1)`, so the same seed gives the same tensors on every platform.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::ir::{Bindings, Graph, NodeKind, Shape, TensorValue};

/// Identifier stored in program files next to each seed.
pub const ALGORITHM: &str = "splitmix64";

/// A stream of uniform doubles.
pub struct Uniform {
    rng: SplitMix64,
    lo: f64,
    hi: f64,
}

impl Uniform {
    pub fn new(seed: u64, lo: f64, hi: f64) -> Self {
        Self { rng: SplitMix64::seed_from_u64(seed), lo, hi }
    }

    pub fn next(&mut self) -> f64 {
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.lo + (self.hi - self.lo) * u
    }

    pub fn tensor(&mut self, shape: Shape) -> TensorValue {
        let data = (0..shape.num_elements()).map(|_| self.next()).collect();
        TensorValue::new(shape, data).expect("length matches shape")
    }
}

/// Uniform values for one tensor.
pub fn uniform(shape: Shape, seed: u64, lo: f64, hi: f64) -> TensorValue {
    Uniform::new(seed, lo, hi).tensor(shape)
}

/// Binds every input and variable of `graph`, in node order, from one
/// stream.
pub fn random_bindings(graph: &Graph, seed: u64, lo: f64, hi: f64) -> Bindings {
    let mut u = Uniform::new(seed, lo, hi);
    graph
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::Input | NodeKind::Variable))
        .map(|n| (n.name.clone(), u.tensor(n.shape.clone())))
        .collect()
}
