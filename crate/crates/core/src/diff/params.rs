//! Named parameters, Adam state and the checkpoint format.
//!
//! ```text
//! b"ADVBCKP1" | u32 count
//! per parameter: u32 name_len | name | u32 rows | u32 cols | rows*cols x f32 LE
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const CKPT_MAGIC: &[u8; 8] = b"ADVBCKP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// `(name, values, first moments, second moments)` per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub steps: u64,
    pub params: Vec<(String, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    steps: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let n = value.len();
        self.params.push(Param { name, value, m: vec![0.0; n], v: vec![0.0; n] });
        ParamId(self.params.len() - 1)
    }

    /// Uniform Glorot initialisation.
    pub fn add_glorot<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.value)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter vector has the wrong length");
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scale gradients so their global L2 norm is at most `max_norm`. Returns
    /// the norm before clipping.
    pub fn clip_grads(grads: &mut [Tensor], max_norm: f64) -> f64 {
        let norm = grads.iter().flat_map(|g| &g.data).map(|x| x * x).sum::<f64>().sqrt();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in grads.iter_mut() {
                for x in &mut g.data {
                    *x *= s;
                }
            }
        }
        norm
    }

    /// One Adam step with bias correction.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig) {
        assert_eq!(grads.len(), self.params.len(), "one gradient per parameter");
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (p, g) in self.params.iter_mut().zip(grads) {
            assert_eq!(p.value.shape(), g.shape(), "gradient shape for {}", p.name);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = p.m[i] / c1;
                let vhat = p.v[i] / c2;
                p.value.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }

    /// Full-precision values and Adam moments, for exact resumption.
    pub fn training_state(&self) -> TrainingState {
        TrainingState {
            steps: self.steps,
            params: self.params.iter().map(|p| (p.name.clone(), p.value.data.clone(), p.m.clone(), p.v.clone())).collect(),
        }
    }

    pub fn restore_training_state(&mut self, state: &TrainingState) -> Result<()> {
        if state.params.len() != self.params.len() {
            return Err(Error::Shape(format!("state has {} parameters, model has {}", state.params.len(), self.params.len())));
        }
        for (p, (name, value, m, v)) in self.params.iter().zip(&state.params) {
            if &p.name != name || p.value.len() != value.len() || m.len() != value.len() || v.len() != value.len() {
                return Err(Error::Shape(format!("state entry {name} does not match parameter {}", p.name)));
            }
        }
        for (p, (_, value, m, v)) in self.params.iter_mut().zip(&state.params) {
            p.value.data.clone_from(value);
            p.m.clone_from(m);
            p.v.clone_from(v);
        }
        self.steps = state.steps;
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.rows as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols as u32).to_le_bytes());
            for &x in &p.value.data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    /// Round every value through `f32`, matching what a checkpoint stores.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            for x in &mut p.value.data {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_checkpoint_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parse a checkpoint into `(name, tensor)` pairs.
    pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_checkpoint(&bytes).map_err(|m| Error::format(path, m))
    }

    /// Overwrite values from a checkpoint; names and shapes must match exactly.
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let entries = Self::read_checkpoint(path)?;
        self.assign_entries(entries).map_err(|m| Error::format(path, m))
    }

    pub fn assign_entries(&mut self, entries: Vec<(String, Tensor)>) -> std::result::Result<(), String> {
        if entries.len() != self.params.len() {
            return Err(format!("checkpoint has {} parameters, model has {}", entries.len(), self.params.len()));
        }
        for (p, (name, t)) in self.params.iter().zip(&entries) {
            if &p.name != name {
                return Err(format!("parameter {name} where {} was expected", p.name));
            }
            if p.value.shape() != t.shape() {
                return Err(format!("parameter {name}: shape {:?} does not match {:?}", t.shape(), p.value.shape()));
            }
        }
        for (p, (_, t)) in self.params.iter_mut().zip(entries) {
            p.value = t;
        }
        Ok(())
    }
}

fn parse_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or("truncated checkpoint")?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != CKPT_MAGIC {
        return Err("bad checkpoint magic".into());
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| "parameter name is not UTF-8")?;
        let rows = u32_at(take(4)?);
        let cols = u32_at(take(4)?);
        let n = rows.checked_mul(cols).ok_or("shape overflow")?;
        let data = take(n.checked_mul(4).ok_or("shape overflow")?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if take(1).is_ok() {
        return Err("trailing bytes in checkpoint".into());
    }
    Ok(out)
}
