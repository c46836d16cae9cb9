//! Named parameter storage and AdamW.

use std::collections::HashMap;

use super::{Gradients, Rng, Tensor};
use crate::{Error, Result};

pub type ParamId = usize;

/// Flat registry of named parameters. Ids are insertion-ordered, which fixes
/// the update order and the checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Linear layer weight with variance 1/fan_in, plus a zero bias.
    pub fn add_linear(&mut self, name: &str, rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<(ParamId, ParamId)> {
        let mut r = rng.substream(fxhash(name));
        let scale = (1.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out).map(|_| r.normal() * scale).collect();
        let w = self.add(&format!("{name}.w"), Tensor { shape: vec![fan_in, fan_out], data })?;
        let b = self.add(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?;
        Ok((w, b))
    }

    /// Embedding table with rows of variance 1/dim.
    pub fn add_table(&mut self, name: &str, rng: &mut Rng, rows: usize, dim: usize) -> Result<ParamId> {
        let mut r = rng.substream(fxhash(name));
        let scale = (1.0 / dim as f64).sqrt();
        let data: Vec<f64> = (0..rows * dim).map(|_| r.normal() * scale).collect();
        self.add(name, Tensor { shape: vec![rows, dim], data })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.values.iter().enumerate().map(|(i, t)| (i, self.names[i].as_str(), t))
    }

    /// Order-insensitive content hash; used to prove parameters unchanged.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, name, t) in self.iter() {
            for b in name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01B3);
            }
            for v in &t.data {
                h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }
}

fn fxhash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Anything that can hand AdamW a gradient per parameter.
pub trait ParamGrads {
    fn grad(&self, id: ParamId) -> Option<&Tensor>;
}

impl ParamGrads for Gradients {
    fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.param(id)
    }
}

/// Running sum of scaled per-parameter gradients across backward passes,
/// for mini-batches built from one tape per scene.
#[derive(Debug, Clone, Default)]
pub struct GradAccum {
    sums: HashMap<ParamId, Tensor>,
}

impl GradAccum {
    pub fn new() -> Self {
        GradAccum::default()
    }

    pub fn add(&mut self, ps: &ParamSet, grads: &Gradients, scale: f64) {
        for id in 0..ps.len() {
            let Some(g) = grads.param(id) else { continue };
            match self.sums.get_mut(&id) {
                Some(acc) => {
                    for (a, v) in acc.data.iter_mut().zip(&g.data) {
                        *a += scale * v;
                    }
                }
                None => {
                    let mut t = g.clone();
                    for v in &mut t.data {
                        *v *= scale;
                    }
                    self.sums.insert(id, t);
                }
            }
        }
    }

    pub fn clear(&mut self) {
        self.sums.clear();
    }
}

impl ParamGrads for GradAccum {
    fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.sums.get(&id)
    }
}

/// Per-parameter first and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

/// AdamW with decoupled weight decay. The learning rate is supplied per
/// step so callers own their schedules.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(ps: &ParamSet, weight_decay: f64) -> Self {
        let m = ps.values.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        let v = ps.values.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: AdamWState { m, v, step: 0 },
        }
    }

    /// One update over every parameter that received a gradient.
    /// Rejects non-finite gradients so a diverged loss stops the run.
    pub fn step(&mut self, ps: &mut ParamSet, grads: &impl ParamGrads, lr: f64) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for id in 0..ps.len() {
            let Some(g) = grads.grad(id) else { continue };
            if !g.is_finite() {
                return Err(Error::Training {
                    step: t as usize,
                    msg: format!("non-finite gradient for {}", ps.name(id)),
                });
            }
            let m = &mut self.state.m[id].data;
            let v = &mut self.state.v[id].data;
            let w = &mut ps.values[id].data;
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g.data[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * w[i]);
            }
        }
        Ok(())
    }
}
