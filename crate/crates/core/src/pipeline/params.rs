use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{checkpoint, Tape, Tensor, Var};

/// Named parameter tensors of one network, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.entries.push((name.into(), t.trainable()));
        self.entries.len() - 1
    }

    /// He-style Gaussian initialisation for a `fan_in × fan_out` weight.
    pub fn push_weight<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> usize {
        let std = (2.0 / fan_in as f64).sqrt();
        self.push(name, Tensor::randn(&[fan_in, fan_out], std, rng))
    }

    pub fn push_xavier<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> usize {
        let std = (1.0 / fan_in as f64).sqrt();
        self.push(name, Tensor::randn(&[fan_in, fan_out], std, rng))
    }

    pub fn push_const(&mut self, name: &str, len: usize, value: f64) -> usize {
        self.push(name, Tensor::full(&[len], value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every tensor on the tape, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.leaf(t)).collect()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for (_, t) in &mut self.entries {
            t.requires_grad = trainable;
            t.grad = None;
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.entries.iter().any(|(_, t)| t.requires_grad)
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    pub fn write_grads(&mut self, tape: &Tape, vars: &[Var]) {
        tape.write_grads(self.entries.iter_mut().map(|(_, t)| t).zip(vars.iter().copied()));
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(checkpoint::encode(&self.entries));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.entries)
    }

    /// Loads values into an already shaped parameter set; names and shapes
    /// must match exactly.
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let loaded = checkpoint::load(path)?;
        if loaded.len() != self.entries.len() {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("expected {} tensors, found {}", self.entries.len(), loaded.len()),
            });
        }
        for ((name, t), (lname, lt)) in self.entries.iter_mut().zip(loaded) {
            if *name != lname || t.shape() != lt.shape() {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("tensor {lname} {:?} does not match {name} {:?}", lt.shape(), t.shape()),
                });
            }
            let trainable = t.requires_grad;
            *t = lt;
            t.requires_grad = trainable;
        }
        Ok(())
    }
}
