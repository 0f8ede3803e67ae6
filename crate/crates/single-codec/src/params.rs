//! Parameter storage, seeded initialization, and the optimizer.
//!
//! Parameters live in a name-keyed store (sorted map, so iteration order is
//! the name order, never creation order). Each tensor is initialized from a
//! stream derived from (store seed, parameter name); two stores built with
//! the same seed produce identical values regardless of build order. The
//! optimizer is written here rather than pulled in so its moment buffers
//! serialize into checkpoints and updates stay bit-reproducible.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor, Var};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±1/sqrt(fan_in), the usual fan-in rule for conv/linear
    /// weights and their biases.
    FanIn(usize),
    Uniform { lo: f64, hi: f64 },
    Zeros,
    Ones,
    Const(f64),
}

/// FNV-1a, used only to give every parameter name its own seed offset.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub struct ParamStore {
    seed: u64,
    device: Device,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { seed, device: Device::Cpu, vars: BTreeMap::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Create a parameter and return its graph handle. Names are unique.
    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let values: Vec<f32> = match init {
            Init::FanIn(fan_in) => {
                assert!(fan_in > 0, "fan_in must be > 0 for {name}");
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| uniform(&mut rng, -bound, bound)).collect()
            }
            Init::Uniform { lo, hi } => (0..n).map(|_| uniform(&mut rng, lo, hi)).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c as f32; n],
        };
        let tensor = Tensor::from_vec(values, shape, &self.device)?;
        let var = Var::from_tensor(&tensor)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.vars.values().map(|v| v.as_tensor().elem_count()).sum()
    }

    /// Overwrite one parameter's values in place (checkpoint restore).
    pub fn set(&self, name: &str, tensor: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?;
        if var.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter {name:?}: stored shape {:?} vs loaded {:?}",
                var.shape(),
                tensor.shape()
            )));
        }
        var.set(tensor)?;
        Ok(())
    }

    /// Flat snapshot of every parameter, in name order.
    pub fn snapshot(&self) -> Result<Vec<(String, Vec<f32>)>> {
        let mut out = Vec::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            out.push((name.clone(), var.as_tensor().flatten_all()?.to_vec1::<f32>()?));
        }
        Ok(out)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f32 {
    let u = rng.next_u32() as f64 / (u32::MAX as f64 + 1.0);
    (lo + (hi - lo) * u) as f32
}

/// Adaptive-moment optimizer with decoupled weight decay. Moment buffers are
/// name-keyed plain tensors so the whole state round-trips through
/// checkpoints.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step_t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            step_t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update over every parameter in `store` that has a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        self.step_t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_t as i32);
        for (name, var) in store.iter() {
            let Some(grad) = grads.get(var.as_tensor()) else { continue };
            // Cut the autograd history before storing anything derived from
            // the gradient, or every step's graph stays reachable through m/v.
            let grad = grad.detach();
            let grad = &grad;
            let m_prev = match self.m.get(name) {
                Some(t) => t.clone(),
                None => grad.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(t) => t.clone(),
                None => grad.zeros_like()?,
            };
            let m = ((&m_prev * self.beta1)? + (grad * (1.0 - self.beta1))?)?;
            let v = ((&v_prev * self.beta2)? + (grad.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            let mut next = (var.as_tensor() - (update * self.lr)?)?;
            if self.weight_decay > 0.0 {
                next = (next - (var.as_tensor() * (self.lr * self.weight_decay))?)?;
            }
            var.set(&next)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }
}
