//! First-order optimisers over flat parameter vectors.
//!
//! All optimisers validate the gradient before touching the parameters: a NaN
//! or infinite entry rejects the whole step and reports which parameter
//! produced it, so a diverging fit stops at the first bad update instead of
//! silently poisoning the state.

use crate::error::OptimError;

/// A stateful first-order update rule.
pub trait Optimizer {
    /// Applies one update in place. On error the parameters are unchanged.
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError>;

    /// Clears accumulated state (momentum, moment estimates, step count).
    fn reset(&mut self);
}

fn validate(params: &[f64], grads: &[f64]) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::LengthMismatch { params: params.len(), grads: grads.len() });
    }
    if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index, value });
    }
    Ok(())
}

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        validate(params, grads)?;
        if self.velocity.len() != params.len() {
            self.velocity = vec![0.0; params.len()];
        }
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.velocity.clear();
    }
}

/// Adam with bias correction; optionally with decoupled weight decay, in which
/// case the decay is applied directly to the parameters after the adaptive
/// update (the AdamW rule).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight-decay factor; 0 disables it.
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Plain Adam with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Adam with decoupled weight decay.
    pub fn with_weight_decay(lr: f64, weight_decay: f64) -> Self {
        Self { weight_decay, ..Self::new(lr) }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        validate(params, grads)?;
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            if self.weight_decay != 0.0 {
                *p -= self.lr * self.weight_decay * *p;
            }
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.m.clear();
        self.v.clear();
        self.t = 0;
    }
}
