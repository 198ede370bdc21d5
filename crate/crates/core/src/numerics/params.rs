//! Named parameter storage with Adam moments.

use crate::numerics::tensor::Tensor;
use crate::{Error, Result};

/// One trainable tensor plus its gradient and Adam moment estimates.
/// All four tensors share a shape for the life of the entry.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(shape.clone()),
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
        }
    }
}

/// Ordered name -> Param map. Iteration order is insertion order so that
/// checkpoint serialization and checksums are stable across runs.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Param>,
    pub step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        self.names.push(name.to_string());
        self.params.push(Param::new(value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> &Param {
        let i = self
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.params[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        let i = self
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.params[i]
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.get(name).value
    }

    /// Accumulate into a parameter's gradient, elementwise add.
    pub fn add_grad(&mut self, name: &str, g: &Tensor) {
        let p = self.get_mut(name);
        assert!(
            p.grad.same_shape(g),
            "grad shape mismatch for {name}: {:?} vs {:?}",
            p.grad.shape(),
            g.shape()
        );
        for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.params.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.params.iter_mut())
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// L2 norm over every parameter value, used in diagnostics.
    pub fn value_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Order-sensitive FNV-1a checksum of the exact parameter bytes. Two
    /// stores compare equal under this iff every value bit matches.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, p) in self.iter() {
            mix(name.as_bytes());
            for v in p.value.data() {
                mix(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Max absolute gradient entry across the store.
    pub fn max_abs_grad(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .fold(0.0f64, |m, &g| m.max(g.abs()))
    }
}

/// One bias-corrected Adam update over every entry; zeroes grads afterward.
pub fn adam_step(store: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    store.step_count += 1;
    let t = store.step_count as f64;
    let bc1 = 1.0 - beta1.powi(store.step_count as i32);
    let bc2 = 1.0 - beta2.powi(store.step_count as i32);
    debug_assert!(t >= 1.0 && bc1 > 0.0 && bc2 > 0.0);
    for (_, p) in store.iter_mut() {
        let n = p.value.len();
        for i in 0..n {
            let g = p.grad.data()[i];
            let m = beta1 * p.adam_m.data()[i] + (1.0 - beta1) * g;
            let v = beta2 * p.adam_v.data()[i] + (1.0 - beta2) * g * g;
            p.adam_m.data_mut()[i] = m;
            p.adam_v.data_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.grad.fill(0.0);
    }
}
