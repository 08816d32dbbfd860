//! Adam and AdamW with bias correction, plus the warmup/decay learning
//! rate schedule used for head training. Updates are plain elementwise
//! loops in a fixed order, so optimization trajectories are
//! bit-reproducible.

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { beta1, beta2, eps, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One update with a per-coordinate step scale (`lr * scale[i]`).
    pub fn step_scaled(&mut self, params: &mut [f64], grad: &[f64], lr: f64, scale: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        assert_eq!(scale.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * scale[i] * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// AdamW over a list of tensors: Adam moments per tensor plus decoupled
/// weight decay (`p *= 1 - lr * wd` applied alongside the adaptive step).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    states: Vec<(Vec<f64>, Vec<f64>)>,
    t: u64,
}

impl AdamW {
    pub fn new(tensor_sizes: &[usize], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> AdamW {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            states: tensor_sizes.iter().map(|&n| (vec![0.0; n], vec![0.0; n])).collect(),
            t: 0,
        }
    }

    /// One optimizer step over all tensors; `tensors[k]` pairs the
    /// parameter slice with its gradient slice.
    pub fn step(&mut self, tensors: &mut [(&mut [f64], &[f64])], lr: f64) {
        assert_eq!(tensors.len(), self.states.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for ((params, grad), (m, v)) in tensors.iter_mut().zip(&mut self.states) {
            assert_eq!(params.len(), m.len());
            assert_eq!(grad.len(), m.len());
            for i in 0..params.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup from zero over `warmup_iters`, then linear decay to zero
/// at `total_iters`.
#[derive(Debug, Clone, Copy)]
pub struct WarmupDecaySchedule {
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub total_iters: usize,
}

impl WarmupDecaySchedule {
    pub fn lr_at(&self, iter: usize) -> f64 {
        if self.warmup_iters > 0 && iter < self.warmup_iters {
            return self.base_lr * (iter + 1) as f64 / self.warmup_iters as f64;
        }
        if self.total_iters <= self.warmup_iters {
            return self.base_lr;
        }
        let remaining = self.total_iters.saturating_sub(iter) as f64;
        let span = (self.total_iters - self.warmup_iters) as f64;
        self.base_lr * (remaining / span).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_converges_on_quadratic() {
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut x = vec![3.0, -2.0];
        for _ in 0..2000 {
            let grad: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
            adam.step(&mut x, &grad, 0.05);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn adam_zero_gradient_leaves_params_fixed() {
        let mut adam = Adam::new(3, 0.9, 0.999, 1e-8);
        let mut x = vec![1.0, 2.0, 3.0];
        let before = x.clone();
        for _ in 0..10 {
            adam.step(&mut x, &[0.0, 0.0, 0.0], 0.1);
        }
        assert_eq!(x, before);
    }

    #[test]
    fn adamw_decay_shrinks_params_without_gradient() {
        let mut opt = AdamW::new(&[2], 0.9, 0.999, 1e-8, 0.1);
        let mut p = vec![1.0, -1.0];
        let g = vec![0.0, 0.0];
        {
            let mut tensors = [(p.as_mut_slice(), g.as_slice())];
            opt.step(&mut tensors, 0.5);
        }
        assert!((p[0] - 0.95).abs() < 1e-12);
        assert!((p[1] + 0.95).abs() < 1e-12);
    }

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let s = WarmupDecaySchedule { base_lr: 1.0, warmup_iters: 10, total_iters: 110 };
        assert!((s.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((s.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((s.lr_at(10) - 1.0).abs() < 1e-12);
        assert!((s.lr_at(60) - 0.5).abs() < 1e-12);
        assert!(s.lr_at(110) == 0.0);
    }
}
