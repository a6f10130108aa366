use std::sync::atomic::{AtomicU64, Ordering};

use super::{AutodiffError, Tensor};

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_SET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
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
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameter tensors with gradient accumulators and Adam moments.
///
/// Each set carries a process-unique id; tape leaves created from a set remember
/// it so `Tape::backward` only writes into the sets it is handed.
#[derive(Debug)]
pub struct ParameterSet {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    steps: u64,
}

impl Clone for ParameterSet {
    /// Clones values and optimizer state under a new id.
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
            first_moment: self.first_moment.clone(),
            second_moment: self.second_moment.clone(),
            steps: self.steps,
        }
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: 0,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Registers a tensor and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let n = value.len();
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(vec![0.0; n]);
        self.first_moment.push(vec![0.0; n]);
        self.second_moment.push(vec![0.0; n]);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn value(&self, index: usize) -> &Tensor {
        &self.values[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut [f64] {
        self.values[index].data_mut()
    }

    pub fn grad(&self, index: usize) -> &[f64] {
        &self.grads[index]
    }

    pub(crate) fn accumulate_grad(&mut self, index: usize, g: &[f64]) {
        for (acc, x) in self.grads[index].iter_mut().zip(g) {
            *acc += x;
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.steps
    }

    /// One Adam step with bias correction, descending the accumulated gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let grad = &self.grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let p = self.values[i].data_mut();
            for j in 0..p.len() {
                let g = grad[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// `self ← tau·self + (1 − tau)·source`, parameter by parameter.
    pub fn polyak_update(&mut self, source: &ParameterSet, tau: f64) -> Result<(), AutodiffError> {
        self.check_layout(source)?;
        for (dst, src) in self.values.iter_mut().zip(&source.values) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * *d + (1.0 - tau) * s;
            }
        }
        Ok(())
    }

    /// Copies values (not optimizer state) from a set of identical layout.
    pub fn copy_values_from(&mut self, source: &ParameterSet) -> Result<(), AutodiffError> {
        self.check_layout(source)?;
        for (dst, src) in self.values.iter_mut().zip(&source.values) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    fn check_layout(&self, other: &ParameterSet) -> Result<(), AutodiffError> {
        if self.values.len() != other.values.len()
            || self
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(AutodiffError::Shape {
                op: "parameter layout",
                lhs: self.values.iter().map(Tensor::len).collect(),
                rhs: other.values.iter().map(Tensor::len).collect(),
            });
        }
        Ok(())
    }

    /// All values concatenated in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites values from a flat slice in registration order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), AutodiffError> {
        if flat.len() != self.numel() {
            return Err(AutodiffError::Length {
                shape: vec![self.numel()],
                len: flat.len(),
            });
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Bit-level fingerprint of the values, for isolation checks.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the raw bits
        let mut h: u64 = 0xcbf29ce484222325;
        for x in self.values.iter().flat_map(|t| t.data()) {
            for byte in x.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}
