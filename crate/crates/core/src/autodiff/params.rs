//! Learnable parameter storage and the Adam update rule.
//!
//! Parameters live outside any graph so one set of weights can serve many
//! forward passes. Registration order is the canonical order used for
//! checkpoint layout, which keeps save → load → save byte-identical.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::io::NamedTensor;

use super::Tensor;

/// Handle to one entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A named learnable tensor. The gradient buffer on `tensor` accumulates
/// between [`ParamStore::zero_grads`] calls.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Registry of all learnable tensors, keyed both by id and by unique name.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name; duplicate names are an error
    /// because checkpoints address parameters by name.
    pub fn register(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::BadConfig(format!("duplicate parameter name {name:?}")));
        }
        let tensor = Tensor::new(shape, data)?.with_grad();
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.to_string(), id.0);
        self.entries.push(Param { name: name.to_string(), tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f32]> {
        self.entries[id.0].tensor.grad.as_deref()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[f32]) {
        self.entries[id.0].tensor.accumulate_grad(delta);
    }

    /// Clears every gradient buffer (to absent, so a step without a backward
    /// pass is detectable).
    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.tensor.grad = None;
        }
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Snapshot in registration order, ready for checkpoint serialization.
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        self.entries
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                dims: p.tensor.shape.clone(),
                data: p.tensor.data.clone(),
            })
            .collect()
    }

    /// Loads values from a checkpoint snapshot. The name set and per-name
    /// shapes must match this store exactly; anything else means the
    /// checkpoint belongs to a different architecture.
    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} tensors, model has {}",
                tensors.len(),
                self.entries.len()
            )));
        }
        for nt in tensors {
            let id = self.lookup(&nt.name).ok_or_else(|| {
                Error::ConfigMismatch(format!("checkpoint tensor {:?} not in model", nt.name))
            })?;
            let want = &self.entries[id.0].tensor.shape;
            if nt.dims != *want {
                return Err(Error::ConfigMismatch(format!(
                    "tensor {:?} has shape {:?} in checkpoint, {:?} in model",
                    nt.name, nt.dims, want
                )));
            }
            self.entries[id.0].tensor.data.clone_from(&nt.data);
            self.entries[id.0].tensor.grad = None;
        }
        Ok(())
    }
}

/// Adam hyperparameters with usual defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment estimates are kept in float64 and keyed
/// by parameter id, so the store's weights stay the only float32 state.
pub struct Adam {
    hp: AdamHyper,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Per-parameter learning-rate multipliers (parameter-group rates).
    mult: Vec<f64>,
}

impl Adam {
    pub fn new(hp: AdamHyper, store: &ParamStore) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.tensor(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.tensor(id).numel()]).collect();
        let mult = store.ids().map(|_| 1.0).collect();
        Adam { hp, t: 0, m, v, mult }
    }

    pub fn learning_rate(&self) -> f64 {
        self.hp.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.hp.lr = lr;
    }

    /// Scales the learning rate of every parameter whose name satisfies
    /// `select`, leaving the others untouched.
    pub fn set_lr_multiplier(
        &mut self,
        store: &ParamStore,
        select: impl Fn(&str) -> bool,
        mult: f64,
    ) {
        for (i, id) in store.ids().enumerate() {
            if select(store.name(id)) {
                self.mult[i] = mult;
            }
        }
    }

    /// One update over every parameter. Requires every gradient to be
    /// present — a missing one means backward never reached the store.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.t += 1;
        let b1t = 1.0 - self.hp.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.hp.beta2.powi(self.t as i32);
        for id in store.ids() {
            if store.grad(id).is_none() {
                return Err(Error::MissingGrad { name: store.name(id).to_string() });
            }
        }
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g: Vec<f64> = store.grad(id).unwrap().iter().map(|&v| f64::from(v)).collect();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let lr = self.hp.lr * self.mult[i];
            let w = &mut store.tensor_mut(id).data;
            for j in 0..g.len() {
                m[j] = self.hp.beta1 * m[j] + (1.0 - self.hp.beta1) * g[j];
                v[j] = self.hp.beta2 * v[j] + (1.0 - self.hp.beta2) * g[j] * g[j];
                let mhat = m[j] / b1t;
                let vhat = v[j] / b2t;
                w[j] = (f64::from(w[j]) - lr * mhat / (vhat.sqrt() + self.hp.eps)) as f32;
            }
        }
        Ok(())
    }
}
