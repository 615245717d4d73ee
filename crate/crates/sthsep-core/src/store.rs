//! Named parameter storage. A `BTreeMap` keeps iteration order stable so
//! optimizer sweeps and checkpoint serialization are deterministic.

use std::collections::BTreeMap;

use crate::error::{CoreError, CoreResult};
use crate::tensor::TensorF;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: TensorF,
    pub grad: TensorF,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: TensorF) -> CoreResult<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(CoreError::DuplicateParam(name));
        }
        let grad = TensorF::zeros(value.shape());
        self.entries.insert(
            name,
            ParamEntry {
                value,
                grad,
                frozen: false,
            },
        );
        Ok(())
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

    fn entry(&self, name: &str) -> CoreResult<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    fn entry_mut(&mut self, name: &str) -> CoreResult<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> CoreResult<&TensorF> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> CoreResult<&TensorF> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn is_frozen(&self, name: &str) -> CoreResult<bool> {
        Ok(self.entry(name)?.frozen)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> CoreResult<()> {
        self.entry_mut(name)?.frozen = frozen;
        Ok(())
    }

    /// Replaces a value; the shape must match the registered one.
    pub fn set_value(&mut self, name: &str, value: TensorF) -> CoreResult<()> {
        let e = self.entry_mut(name)?;
        if e.value.shape() != value.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "set_value",
                lhs: e.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    /// Adds `delta` to one coordinate of a parameter (finite differences).
    pub fn bump(&mut self, name: &str, index: usize, delta: f64) -> CoreResult<()> {
        let e = self.entry_mut(name)?;
        if index >= e.value.len() {
            return Err(CoreError::InvalidArgument(format!(
                "index {} out of range for `{}` with {} elements",
                index,
                name,
                e.value.len()
            )));
        }
        e.value.data_mut()[index] += delta;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Accumulates scaled gradients. Frozen entries are skipped, which is how
    /// "frozen parameters receive zero gradient updates" is enforced.
    pub fn accumulate(&mut self, grads: &[(String, TensorF)], scale: f64) -> CoreResult<()> {
        for (name, g) in grads {
            let e = self.entry_mut(name)?;
            if e.frozen {
                continue;
            }
            if e.grad.shape() != g.shape() {
                return Err(CoreError::ShapeMismatch {
                    op: "accumulate",
                    lhs: e.grad.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            for (dst, src) in e.grad.data_mut().iter_mut().zip(g.data()) {
                *dst += scale * src;
            }
        }
        Ok(())
    }

    pub fn global_grad_norm(&self) -> f64 {
        let ss: f64 = self
            .entries
            .values()
            .flat_map(|e| e.grad.data())
            .map(|v| v * v)
            .sum();
        ss.sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Deterministic (sorted) iteration over entries.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}
