//! Minimal f64 tensor engine with reverse-mode differentiation.
//!
//! The whole network runs at desk scale on CPU, so the engine favors
//! reproducibility over throughput: plain `Vec<f64>` storage, a fixed
//! evaluation order, and no hidden parallelism. Identical inputs produce
//! bit-identical outputs on a given platform.

mod adam;
mod conv;
mod tape;

pub use adam::Adam;
pub use conv::{conv2d_bias_grad, conv2d_forward, conv2d_input_grad, conv2d_weight_grad};
pub use tape::{NodeId, Tape};

use rand::RngExt;
use rand_chacha::ChaCha12Rng;

/// Dense tensor: row-major data plus an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Array { shape, data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named parameter arrays in a fixed registration order. The order defines
/// both the checkpoint layout and the optimizer state alignment.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, array: Array) -> usize {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.arrays.push(array);
        self.arrays.len() - 1
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn array(&self, idx: usize) -> &Array {
        &self.arrays[idx]
    }

    pub fn array_mut(&mut self, idx: usize) -> &mut Array {
        &mut self.arrays[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(|n| n.as_str()).zip(self.arrays.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }
}

/// Fan-in scaled uniform init: U(-b, b) with b = sqrt(6 / fan_in), scaled
/// by `gain`.
pub fn fan_in_uniform(shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut ChaCha12Rng) -> Array {
    let bound = gain * (6.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
        .collect();
    Array::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn param_store_preserves_order() {
        let mut store = ParamStore::new();
        let a = store.add("a", Array::zeros(vec![2, 2]));
        let b = store.add("b", Array::zeros(vec![3]));
        assert_eq!((a, b), (0, 1));
        assert_eq!(store.name(1), "b");
        assert_eq!(store.scalar_count(), 7);
        assert_eq!(store.index_of("a"), Some(0));
    }

    #[test]
    fn fan_in_uniform_is_bounded_and_seeded() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let arr = fan_in_uniform(vec![8, 8], 64, 1.0, &mut rng);
        let bound = (6.0 / 64.0_f64).sqrt();
        assert!(arr.data.iter().all(|v| v.abs() <= bound));

        let mut rng2 = ChaCha12Rng::seed_from_u64(7);
        let arr2 = fan_in_uniform(vec![8, 8], 64, 1.0, &mut rng2);
        assert_eq!(arr, arr2);
    }
}
