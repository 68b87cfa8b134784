use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
///
/// Tensors are reference counted so graphs can bind them without copying;
/// mutation goes through copy-on-write and is free once graphs are dropped.
#[derive(Debug, Clone)]
pub struct ParamSet {
    uid: u64,
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(Arc::new(tensor));
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor with entries drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape product matches"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.tensors[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name:?}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| &**t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        if tensor.shape() != self.get(id).shape() {
            return Err(Error::shape(
                "param set",
                format!("{}: {:?} vs {:?}", self.name(id), self.get(id).shape(), tensor.shape()),
            ));
        }
        self.tensors[id.0] = Arc::new(tensor);
        Ok(())
    }

    /// Bit patterns of every value, for exact before/after comparisons.
    pub fn bit_snapshot(&self) -> Vec<u64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn copy_on_write_leaves_shared_handles_intact() {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::vector(vec![1.0, 2.0]));
        let held = p.shared(id);
        p.get_mut(id).data_mut()[0] = 5.0;
        assert_eq!(held.data(), &[1.0, 2.0]);
        assert_eq!(p.get(id).data(), &[5.0, 2.0]);
    }

    #[test]
    fn uniform_init_in_range_and_seeded() {
        let mut a = ParamSet::new();
        let mut b = ParamSet::new();
        let ia = a.add_uniform("w", &[4, 5], 0.08, &mut ChaCha8Rng::seed_from_u64(3));
        b.add_uniform("w", &[4, 5], 0.08, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(a.get(ia).data().iter().all(|v| v.abs() <= 0.08));
        assert_eq!(a, b);
        assert_eq!(a.bit_snapshot(), b.bit_snapshot());
        assert!(a.require("nope").is_err());
    }
}
