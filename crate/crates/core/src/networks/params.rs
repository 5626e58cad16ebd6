use std::collections::BTreeMap;

use autodiff::{Array, Tensor};
use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Named parameter arrays of one network component.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    /// Wraps every array as a graph leaf; `trainable` leaves accept gradients.
    pub fn bind(&self, trainable: bool) -> Bound {
        let tensors = self
            .entries
            .iter()
            .map(|(k, v)| {
                let t = if trainable { Tensor::variable(v.clone()) } else { Tensor::constant(v.clone()) };
                (k.clone(), t)
            })
            .collect();
        Bound { tensors }
    }

    /// Order-stable FNV-1a digest over names and exact value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (k, v) in &self.entries {
            eat(k.as_bytes());
            for d in v.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for x in v.iter() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub(crate) fn init_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) {
        let normal = Normal::new(0.0, std).expect("finite std");
        let arr = Array::from_shape_simple_fn(IxDyn(shape), || normal.sample(rng));
        self.insert(name, arr);
    }

    pub(crate) fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Array::zeros(IxDyn(shape)));
    }
}

/// A [`ParamSet`] materialised as graph leaves for one forward pass.
pub struct Bound {
    tensors: BTreeMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors.get(name).unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }
}
