use serde::{Deserialize, Serialize};

use super::ControlField;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, reached by cosine decay
    /// over the run. `1.0` keeps the rate constant.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            method: Method::adam(),
            lr,
            final_lr_fraction: 1.0,
        }
    }

    pub fn with_decay(mut self, final_lr_fraction: f64) -> Self {
        self.final_lr_fraction = final_lr_fraction;
        self
    }
}

/// First-order optimizer state for one parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub method: Method,
    pub lr: f64,
    pub step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(method: Method, lr: f64, num_params: usize) -> Self {
        let moments = if matches!(method, Method::Adam { .. }) { num_params } else { 0 };
        Self {
            method,
            lr,
            step_count: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        }
    }

    pub fn sgd(lr: f64, num_params: usize) -> Self {
        Self::new(Method::Sgd, lr, num_params)
    }

    pub fn adam(lr: f64, num_params: usize) -> Self {
        Self::new(Method::adam(), lr, num_params)
    }

    /// Apply one update in place.
    pub fn step(&mut self, field: &mut ControlField, grad: &[f64]) {
        self.step_params(&mut field.params, grad);
    }

    pub fn step_params(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "gradient length mismatch");
        self.step_count += 1;
        match self.method {
            Method::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                assert_eq!(self.m.len(), params.len(), "optimizer built for another field");
                let k = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(k);
                let c2 = 1.0 - beta2.powi(k);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Cosine-decayed rate for iteration `i` of `n`.
pub fn scheduled_lr(cfg: &OptimizerConfig, i: usize, n: usize) -> f64 {
    if n <= 1 || cfg.final_lr_fraction >= 1.0 {
        return cfg.lr;
    }
    let progress = i as f64 / (n - 1) as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    cfg.lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cos)
}
