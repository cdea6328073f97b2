//! Named parameter storage shared by every model component.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::{math, Error, Result, Tensor};

/// Stable 64-bit digest of a string, used to derive per-tensor seeds.
pub fn name_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]])
}

/// Named tensors in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(String::from(name), t);
    }

    /// Adds a trainable tensor drawn from U(−1/√fan_in, 1/√fan_in).
    ///
    /// The draw depends only on `seed` and `name`, so adding or removing other
    /// parameters never changes this one's initial value.
    pub fn init_uniform(&mut self, seed: u64, name: &str, shape: &[usize], fan_in: usize) {
        self.init_uniform_bound(seed, name, shape, 1.0 / math::sqrt(fan_in.max(1) as f64));
    }

    /// He-uniform variant, U(−√(6/fan_in), √(6/fan_in)), for layers feeding or fed by ReLUs.
    pub fn init_he_uniform(&mut self, seed: u64, name: &str, shape: &[usize], fan_in: usize) {
        self.init_uniform_bound(seed, name, shape, math::sqrt(6.0 / fan_in.max(1) as f64));
    }

    fn init_uniform_bound(&mut self, seed: u64, name: &str, shape: &[usize], bound: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let t = Tensor::new(shape, data).expect("shape product matches").with_grad();
        self.insert(name, t);
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape).with_grad());
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Records `name` on the tape (once per tape).
    pub fn bind(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        tape.named(name, self.get(name)?)
    }

    /// Sets trainability of every tensor whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, on: bool) {
        for (k, t) in self.tensors.iter_mut() {
            if k.starts_with(prefix) {
                t.set_requires_grad(on);
            }
        }
    }

    /// Sets trainability of every tensor.
    pub fn set_all_trainable(&mut self, on: bool) {
        self.tensors.values_mut().for_each(|t| t.set_requires_grad(on));
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds `scale ·` gradients of the tape's named leaves into the stored grad buffers.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients, scale: f64) -> Result<()> {
        for (name, var) in tape.named_vars() {
            let Some(g) = grads.get(var) else { continue };
            let t = self.get_mut(name)?;
            if let Some(buf) = t.grad_mut() {
                if buf.len() != g.len() {
                    return Err(Error::shape("accumulate", &[buf.len()], &[g.len()]));
                }
                buf.iter_mut().zip(g).for_each(|(o, x)| *o += scale * x);
            }
        }
        Ok(())
    }

    /// Mutable gradient buffers of all trainable tensors.
    pub fn grads_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.tensors
            .values_mut()
            .filter_map(|t| t.grad_mut().map(|g| g.as_mut_slice()))
    }

    /// Copies every tensor of `other` into `self`, replacing same-named entries.
    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in other.iter() {
            self.insert(k, v.clone());
        }
    }

    /// Names and values of tensors whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.iter().filter(move |(k, _)| k.starts_with(prefix))
    }
}
