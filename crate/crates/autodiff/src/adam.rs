use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: IndexMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter of `store`. Every
    /// trainable parameter must have a gradient; frozen ones are skipped.
    /// The gradients are consumed.
    pub fn step(&mut self, store: &mut ParamStore, grads: Gradients) -> Result<()> {
        if grads.is_empty() {
            return Err(TensorError::MissingGradient("<all>".into()));
        }
        let trainable: Vec<String> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.to_string())
            .collect();
        for name in &trainable {
            let g = grads
                .get(name)
                .ok_or_else(|| TensorError::MissingGradient(name.clone()))?;
            let value = store.value(name)?;
            if g.shape() != value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for name in trainable {
            let g = grads.get(&name).expect("checked above").data();
            let value = store.value_mut(&name)?;
            let m = self.moments.entry(name).or_insert_with(|| Moments {
                first: vec![0.0; g.len()],
                second: vec![0.0; g.len()],
            });
            let p = value.data_mut();
            for i in 0..g.len() {
                m.first[i] = self.beta1 * m.first[i] + (1.0 - self.beta1) * g[i];
                m.second[i] = self.beta2 * m.second[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m.first[i] / c1;
                let v_hat = m.second[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
