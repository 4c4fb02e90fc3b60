use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named collection of trainable tensors.
///
/// Names are unique (map keys) and a tensor's shape never changes once it is
/// inserted: updates go through [`ParamSet::update`], which checks extents.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    seed: u64,
    entries: BTreeMap<String, Tensor>,
}

/// How a freshly created parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Uniform(f64),
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            entries: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Adds a parameter, drawing its initial values from a generator keyed
    /// by `(seed, name)` so that insertion order does not matter.
    pub fn init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Ones => t.data_mut().fill(1.0),
            Init::Xavier => {
                let (fan_in, fan_out) = if shape.len() >= 2 {
                    (shape[0], shape[1])
                } else {
                    (shape[0], shape[0])
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                fill_uniform(&mut t, bound, self.seed, name);
            }
            Init::Uniform(bound) => fill_uniform(&mut t, bound, self.seed, name),
        }
        self.entries.insert(name.to_string(), t);
        Ok(())
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    /// Replaces the values of an existing parameter with a same-shaped tensor.
    pub fn update(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim("param update", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.entries.get_mut(name).map(|t| t.data_mut())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

fn fill_uniform(t: &mut Tensor, bound: f64, seed: u64, name: &str) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// FNV-1a, used to derive per-parameter generator streams.
pub(crate) fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// One gradient tensor per parameter of the set it was computed against.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            entries: params
                .iter()
                .map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub(crate) fn from_map(entries: BTreeMap<String, Tensor>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that key set and shapes match `params`.
    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        if self.entries.len() != params.len() {
            return Err(Error::Contract(format!(
                "gradient key set has {} entries, parameters have {}",
                self.entries.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter() {
            let g = self
                .entries
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::dim("gradients", p.shape(), g.shape()));
            }
        }
        Ok(())
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in &other.entries {
            let slot = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("unknown gradient `{name}`")))?;
            if slot.shape() != g.shape() {
                return Err(Error::dim("gradient accumulate", slot.shape(), g.shape()));
            }
            slot.add_assign(g);
        }
        Ok(())
    }

    pub(crate) fn add_to(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown gradient `{name}`")))?;
        if slot.len() != g.len() {
            return Err(Error::dim("gradient accumulate", slot.shape(), g.shape()));
        }
        slot.add_assign(g);
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.entries.values_mut() {
            g.scale_assign(k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}
