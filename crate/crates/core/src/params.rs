//! Named parameter storage and the Adam update.
//!
//! Parameters live in a `BTreeMap`, so every iteration (updates,
//! serialization) runs in lexicographic name order — that ordering is what
//! makes checkpoints byte-stable. Buffers (batch-norm running statistics)
//! share the map but carry no optimizer state.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{mix64, Rng};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Debug)]
pub struct Param {
    pub dims: Dims,
    pub data: Vec<f64>,
    pub learnable: bool,
    /// Gradient accumulated over the current batch; consumed by `adam_step`.
    pub grad: Option<Vec<f64>>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    step: u64,
}

/// FNV-1a, used to derive one init stream per parameter name so
/// initialization does not depend on registration order.
fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn name_seed(seed: u64, name: &str) -> u64 {
    mix64(seed ^ fnv1a(name))
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, value, true)
    }

    pub fn register_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, value, false)
    }

    fn insert(&mut self, name: &str, value: Tensor, learnable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let n = value.dims().count();
        let dims = value.dims();
        let moments = if learnable { vec![0.0; n] } else { Vec::new() };
        self.entries.insert(
            name.to_string(),
            Param {
                dims,
                data: value.into_data(),
                learnable,
                grad: None,
                m: moments.clone(),
                v: moments,
            },
        );
        Ok(())
    }

    /// Fan-in-scaled normal init: std = sqrt(2 / fan_in), stream derived
    /// from (seed, name).
    pub fn register_conv_weight(&mut self, name: &str, dims: Dims, fan_in: usize, seed: u64) -> Result<()> {
        let std = (2.0 / fan_in as f64).sqrt();
        let mut rng = Rng::new(name_seed(seed, name));
        let data = (0..dims.checked_count()?).map(|_| rng.normal() * std).collect();
        self.register(name, Tensor::new(dims, data)?)
    }

    pub fn get(&self, name: &str) -> &Param {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Tensor {
        let p = self.get(name);
        Tensor::new(p.dims, p.data.clone()).expect("stored param is consistent")
    }

    pub fn buffer(&self, name: &str) -> &[f64] {
        &self.get(name).data
    }

    pub fn buffer_mut(&mut self, name: &str) -> &mut Vec<f64> {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .data
    }

    /// Lexicographic iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_moments(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) {
        let p = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert!(p.learnable && m.len() == p.data.len() && v.len() == p.data.len());
        p.m = m;
        p.v = v;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn learnable_scalar_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.learnable)
            .map(|p| p.data.len())
            .sum()
    }

    /// Add `scale * grad` into a parameter's accumulated gradient.
    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64], scale: f64) {
        let p = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        debug_assert!(p.learnable);
        let acc = p.grad.get_or_insert_with(|| vec![0.0; grad.len()]);
        for (a, g) in acc.iter_mut().zip(grad) {
            *a += scale * g;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam step over every learnable parameter.
    /// Requires a populated gradient on each; clears gradients afterwards.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        for (name, p) in self.entries.iter() {
            if p.learnable && p.grad.is_none() {
                return Err(Error::Numeric(format!("adam_step: missing gradient for {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in self.entries.values_mut() {
            if !p.learnable {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            for i in 0..p.data.len() {
                let g = grad[i];
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
