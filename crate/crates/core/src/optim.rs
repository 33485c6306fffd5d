//! Adam and RMSProp with optional global-norm gradient clipping.
//!
//! Optimizer state is kept in f64 regardless of the parameter dtype.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Adam,
    RmsProp,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub rms_epsilon: f64,
    pub rms_momentum: f64,
    pub rms_decay: f64,
    /// Global-norm clip; None disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimKind::Adam,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-4,
            rms_epsilon: 0.1,
            rms_momentum: 0.0,
            rms_decay: 0.99,
            grad_clip: Some(40.0),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct SlotState {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    state: BTreeMap<String, SlotState>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            state: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. Bumps the parameter version exactly once and
    /// returns the pre-clip global gradient norm.
    pub fn step<S: Scalar>(
        &mut self,
        params: &mut ParameterSet<S>,
        grads: &BTreeMap<String, Tensor<S>>,
    ) -> Result<f64> {
        let mut sq_norm = 0.0;
        for (id, g) in grads {
            if !params.contains(id) {
                return Err(Error::contract(format!(
                    "gradient for unknown parameter {id:?}"
                )));
            }
            for v in g.data() {
                let x = v.as_f64();
                sq_norm += x * x;
            }
        }
        let norm = sq_norm.sqrt();
        let scale = match self.config.grad_clip {
            Some(clip) if norm > clip => clip / norm,
            _ => 1.0,
        };

        self.steps += 1;
        let t = self.steps as i32;
        let cfg = self.config;
        for (id, tensor) in params.iter_mut() {
            let g = match grads.get(id) {
                Some(g) => g,
                None => continue,
            };
            if g.shape() != tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: g.shape().to_vec(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            let slot = self.state.entry(id.clone()).or_insert_with(|| SlotState {
                m: vec![0.0; tensor.len()],
                v: vec![0.0; tensor.len()],
            });
            match cfg.kind {
                OptimKind::Adam => {
                    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
                    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
                    for i in 0..tensor.len() {
                        let gi = g.data()[i].as_f64() * scale;
                        slot.m[i] = cfg.adam_beta1 * slot.m[i] + (1.0 - cfg.adam_beta1) * gi;
                        slot.v[i] = cfg.adam_beta2 * slot.v[i] + (1.0 - cfg.adam_beta2) * gi * gi;
                        let m_hat = slot.m[i] / bc1;
                        let v_hat = slot.v[i] / bc2;
                        let delta = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
                        let cur = tensor.data()[i].as_f64();
                        tensor.data_mut()[i] = S::from_f64(cur - delta);
                    }
                }
                OptimKind::RmsProp => {
                    for i in 0..tensor.len() {
                        let gi = g.data()[i].as_f64() * scale;
                        slot.v[i] = cfg.rms_decay * slot.v[i] + (1.0 - cfg.rms_decay) * gi * gi;
                        let update = cfg.learning_rate * gi / (slot.v[i] + cfg.rms_epsilon).sqrt();
                        slot.m[i] = cfg.rms_momentum * slot.m[i] + update;
                        let cur = tensor.data()[i].as_f64();
                        tensor.data_mut()[i] = S::from_f64(cur - slot.m[i]);
                    }
                }
            }
        }
        params.bump_version();
        Ok(norm)
    }
}
