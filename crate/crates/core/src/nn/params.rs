use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered, named parameter tensors.
///
/// Values are kept in `f64` for computation but always hold numbers that are
/// exactly representable as `f32`, so the 32-bit weight file round-trips
/// bit-exactly. [`ParamSet::push`] and the optimizer both maintain this.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

/// Gradients aligned index-for-index with a [`ParamSet`].
pub type ParamGrads = Vec<Vec<f64>>;

#[inline]
pub fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor `{name}` size");
        assert!(!self.index.contains_key(&name), "duplicate tensor `{name}`");
        self.index.insert(name.clone(), self.tensors.len());
        let data = data.into_iter().map(to_f32_grid).collect();
        self.tensors.push(ParamTensor { name, shape, data });
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.tensors[self.index_of(name)].data
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let i = self.index_of(name);
        &mut self.tensors[i].data
    }

    pub fn zero_grads(&self) -> ParamGrads {
        self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    /// Shape list `(name, shape)` in declaration order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect()
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &t.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn assign(&mut self, other: &ParamSet) {
        assert_eq!(self.layout(), other.layout());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data.copy_from_slice(&b.data);
        }
    }
}

/// Fan-in scaled uniform initialization: U(−√(6/fan_in), √(6/fan_in)).
pub fn fan_in_uniform(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub fn add_grads(acc: &mut ParamGrads, other: &ParamGrads) {
    for (a, b) in acc.iter_mut().zip(other) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

pub fn scale_grads(g: &mut ParamGrads, s: f64) {
    for t in g.iter_mut() {
        for v in t.iter_mut() {
            *v *= s;
        }
    }
}
