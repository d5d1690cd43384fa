use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape, Error, Result};

/// Index of an entry inside one [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub(crate) first_moment: Vec<f64>,
    pub(crate) second_moment: Vec<f64>,
    pub frozen: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named, shaped trainable tensors with gradient slots and AdamW moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    pub step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        if value.len() != n {
            return Err(crate::error::shape(format!(
                "parameter {name}: {} values for shape {shape:?}",
                value.len()
            )));
        }
        if self.index.contains_key(name) {
            return Err(invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            value,
            frozen: false,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add_filled(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![v; n])
    }

    /// Normal init with the given standard deviation.
    pub fn add_normal(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        self.add(name, shape, values)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.len()).sum()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry> {
        self.id(name).map(|id| self.entry(id))
    }

    /// Overwrites the values of an existing entry.
    pub fn set_value(&mut self, name: &str, shape: &[usize], value: &[f64]) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
        let e = &mut self.entries[id.0];
        if e.shape != shape || e.value.len() != value.len() {
            return Err(crate::error::shape(format!(
                "parameter {name}: stored shape {:?}, got {shape:?}",
                e.shape
            )));
        }
        e.value.copy_from_slice(value);
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.frozen = true;
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.entries.iter().all(|e| e.frozen)
    }

    pub fn has_trainable(&self) -> bool {
        self.entries.iter().any(|e| !e.frozen)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale · g` into the gradient slots addressed by `grads`.
    pub fn accumulate(&mut self, grads: &[(ParamId, Vec<f64>)], scale: f64) -> Result<()> {
        for (id, g) in grads {
            let e = self
                .entries
                .get_mut(id.0)
                .ok_or_else(|| invalid(format!("gradient for unknown parameter {}", id.0)))?;
            if e.frozen {
                return Err(Error::Frozen(e.name.clone()));
            }
            if g.len() != e.grad.len() {
                return Err(shape(format!(
                    "gradient for {} has {} values, expected {}",
                    e.name,
                    g.len(),
                    e.grad.len()
                )));
            }
            for (dst, &v) in e.grad.iter_mut().zip(g) {
                *dst += scale * v;
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        crate::math::sqrt(
            self.entries
                .iter()
                .filter(|e| !e.frozen)
                .flat_map(|e| e.grad.iter())
                .map(|g| g * g)
                .sum(),
        )
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            for v in &mut e.value {
                *v = *v as f32 as f64;
            }
        }
    }

    /// FNV-1a over names, shapes and value bits. Equal fingerprints mean
    /// bitwise-equal values for practical purposes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for e in &self.entries {
            h.write(e.name.as_bytes());
            for &d in &e.shape {
                h.write(&(d as u64).to_le_bytes());
            }
            for v in &e.value {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Copies values for every name present in both stores.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in &other.entries {
            self.set_value(&e.name, &e.shape, &e.value)?;
        }
        Ok(())
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub const fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = Fnv64::new();
    h.write(bytes);
    h.finish()
}
