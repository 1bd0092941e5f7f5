use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(kind: OptimizerKind, params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let decay = match self.kind {
            OptimizerKind::AdamW => self.lr * self.weight_decay,
            OptimizerKind::Adam => 0.0,
        };
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= decay * params[i];
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        let mut opt = Adam::new(OptimizerKind::Adam, 2, 1e-3, 0.0);
        let mut p = [1.0, -2.0];
        let g = [0.37, -4.0];
        opt.step(&mut p, &g);
        for i in 0..2 {
            let expected = [1.0, -2.0][i] - 1e-3 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-16);
            assert!((p[i] - ([1.0, -2.0][i] - 1e-3 * g[i].signum())).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(OptimizerKind::AdamW, 3, 1e-2, 0.0);
        let mut p = [0.5, -0.1, 3.0];
        opt.step(&mut p, &[0.0; 3]);
        assert_eq!(p, [0.5, -0.1, 3.0]);
    }

    #[test]
    fn adamw_pure_decay() {
        let (lr, wd) = (1e-2, 0.1);
        let mut opt = Adam::new(OptimizerKind::AdamW, 2, lr, wd);
        let mut p = [2.0, -1.0];
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, [2.0 * (1.0 - lr * wd), -(1.0 - lr * wd)]);
    }
}
