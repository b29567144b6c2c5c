//! Named parameter tensors and the Adam update.

use crate::error::{Error, Result};
use rand::Rng;

/// A named, persistent parameter tensor. Lives outside any tape; each
/// forward pass snapshots it onto the tape via [`super::Tape::param`].
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn constant(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![value; shape.iter().product()],
        }
    }

    /// Zero-mean Gaussian init with the given standard deviation.
    pub fn gaussian(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let values = (0..n).map(|_| std * standard_normal(rng)).collect();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Box-Muller standard normal draw.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, aligned index-for-index with a parameter
/// list. `step` counts completed updates for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        Self::from_numels(params.iter().map(|p| p.numel()))
    }

    pub fn from_numels(numels: impl Iterator<Item = usize> + Clone) -> Self {
        AdamState {
            step: 0,
            m: numels.clone().map(|n| vec![0.0; n]).collect(),
            v: numels.map(|n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update with bias correction. `grads[i]` must be present and
/// shaped like `params[i]`; a missing gradient is an error, a zero gradient
/// leaves the parameter unchanged while still advancing the step count.
pub fn adam_step(
    params: &mut [&mut Param],
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step;
    let bias1 = 1.0 - config.beta1.powi(t as i32);
    let bias2 = 1.0 - config.beta2.powi(t as i32);
    for (i, param) in params.iter_mut().enumerate() {
        let grad = grads[i]
            .as_ref()
            .ok_or_else(|| Error::MissingGradient(param.name.clone()))?;
        if grad.len() != param.numel() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape.clone(),
                rhs: vec![grad.len()],
            });
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            param.values[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
