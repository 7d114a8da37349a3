use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matrix::Matrix;
use super::NnError;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// The parameters of one network. Every set carries a process-unique id so a
/// tape holding several networks can route gradients back to the right set.
#[derive(Debug)]
pub struct ParamSet {
    uid: u64,
    tensors: Vec<ParamTensor>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        Self { uid: fresh_uid(), tensors: self.tensors.clone() }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self { uid: fresh_uid(), tensors: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.tensors.push(ParamTensor { name: name.into(), value, grad });
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
    pub fn add_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Flattened values in declaration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.value.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.grad.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.value.len();
            t.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// `self ← (1-tau)·self + tau·online`, tensor by tensor.
    pub fn polyak_from(&mut self, online: &ParamSet, tau: f64) {
        assert_eq!(self.tensors.len(), online.tensors.len(), "polyak: parameter count");
        for (t, o) in self.tensors.iter_mut().zip(&online.tensors) {
            for (tv, ov) in t.value.data_mut().iter_mut().zip(o.value.data()) {
                *tv = (1.0 - tau) * *tv + tau * ov;
            }
        }
    }

    /// Copies values from `other` (same architecture) without changing identity.
    pub fn copy_values_from(&mut self, other: &ParamSet) {
        assert_eq!(self.tensors.len(), other.tensors.len(), "copy: parameter count");
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            assert_eq!(t.value.shape(), o.value.shape(), "copy: shape of {}", t.name);
            t.value = o.value.clone();
        }
    }

    /// SHA-256 over names, shapes, and value bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            h.update((t.value.rows() as u64).to_le_bytes());
            h.update((t.value.cols() as u64).to_le_bytes());
            for v in t.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_record(&self) -> BTreeMap<String, TensorRecord> {
        self.tensors
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    TensorRecord { shape: vec![t.value.rows(), t.value.cols()], values: t.value.data().to_vec() },
                )
            })
            .collect()
    }

    /// Loads values by name; every tensor of `self` must be present with the same shape.
    pub fn load_record(&mut self, record: &BTreeMap<String, TensorRecord>) -> Result<(), NnError> {
        for t in &mut self.tensors {
            let rec = record.get(&t.name).ok_or_else(|| NnError::Checkpoint(format!("missing tensor {}", t.name)))?;
            if rec.shape != [t.value.rows(), t.value.cols()] || rec.values.len() != t.value.len() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name,
                    rec.shape,
                    [t.value.rows(), t.value.cols()]
                )));
            }
            t.value.data_mut().copy_from_slice(&rec.values);
        }
        Ok(())
    }
}

/// Serialized form of one tensor: shape plus row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || params.tensors.iter().map(|t| Matrix::zeros(t.value.rows(), t.value.cols())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update from the accumulated gradients and zeroes them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), NnError> {
        for t in &params.tensors {
            if !t.grad.all_finite() {
                return Err(NnError::NonFiniteGradient(t.name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in params.tensors.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = t.grad.data();
            let values = t.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !t.value.all_finite() {
                return Err(NnError::NonFiniteParameter(t.name.clone()));
            }
        }
        params.zero_grad();
        Ok(())
    }
}
