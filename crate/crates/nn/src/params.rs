use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::graph::{Grads, Graph};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) grad: Vec<T>,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
}

impl<T: Real> Param<T> {
    fn new(value: Tensor<T>) -> Self {
        let n = value.numel();
        Self { value: Arc::new(value), grad: vec![T::zero(); n], m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }
}

/// Named parameters together with their gradients, Adam moments and a
/// freeze mask.
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    params: BTreeMap<String, Param<T>>,
    frozen: BTreeSet<String>,
    step: u64,
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new(), frozen: BTreeSet::new(), step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    /// Insert or overwrite, resetting gradient and moments.
    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        self.params.insert(name.to_string(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &*p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub(crate) fn shared_value(&self, name: &str) -> Result<Arc<Tensor<T>>> {
        self.params
            .get(name)
            .map(|p| Arc::clone(&p.value))
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let p = self.params.get_mut(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        Ok(Arc::make_mut(&mut p.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over names starting with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, p)| p.value.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Freeze every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        let names: Vec<String> = self.params.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        self.frozen.extend(names);
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Add the gradients of every bound parameter node into `grad`.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, grads: &Grads<T>) {
        for (var, name) in graph.param_nodes() {
            let (Some(g), Some(p)) = (grads.get(var), self.params.get_mut(name)) else { continue };
            p.grad.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }

    /// L2 norm over the gradients of all trainable parameters.
    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .filter(|(k, _)| !self.frozen.contains(*k))
            .flat_map(|(_, p)| p.grad.iter())
            .map(|&g| g * g)
            .sum::<T>()
            .sqrt()
    }

    /// Rescale gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / (norm + T::lit(1e-6));
            for p in self.params.values_mut() {
                p.grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    /// FNV-1a digest over names and parameter bits, restricted to `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        let mut buf = Vec::new();
        for (name, p) in self.params.iter().filter(|(k, _)| k.starts_with(prefix)) {
            feed(name.as_bytes());
            buf.clear();
            for &x in p.value.data() {
                x.write_le(&mut buf);
            }
            feed(&buf);
        }
        h
    }

    /// Copy of the parameters whose names start with `prefix`, moments included.
    pub fn extract(&self, prefix: &str) -> Self {
        let params = self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect();
        let frozen = self.frozen.iter().filter(|k| k.starts_with(prefix)).cloned().collect();
        Self { params, frozen, step: self.step }
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        let conv = |xs: &[T]| xs.iter().map(|&x| U::lit(x.as_f64())).collect::<Vec<U>>();
        let params = self
            .params
            .iter()
            .map(|(k, p)| {
                let q = Param { value: Arc::new(p.value.cast()), grad: conv(&p.grad), m: conv(&p.m), v: conv(&p.v) };
                (k.clone(), q)
            })
            .collect();
        ParameterSet { params, frozen: self.frozen.clone(), step: self.step }
    }

    /// Whether every parameter value is finite.
    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.all_finite())
    }

    pub(crate) fn insert_raw(&mut self, name: String, param: Param<T>) {
        self.params.insert(name, param);
    }

    pub(crate) fn raw_parts(value: Tensor<T>, m: Vec<T>, v: Vec<T>) -> Param<T> {
        let n = value.numel();
        Param { value: Arc::new(value), grad: vec![T::zero(); n], m, v }
    }
}
