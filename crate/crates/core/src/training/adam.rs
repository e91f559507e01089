/// Adam with bias correction. Defaults: β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn with_moments(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            ..Adam::new(dim, lr)
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// In-place descent step on `theta` along `grad`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = Adam::new(1, 1e-3);
        let mut x = [1.0];
        a.step(&mut x, &[2.0]);
        assert!((x[0] - (1.0 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut a = Adam::new(3, 1e-2);
        let mut x = [0.5, -1.0, 2.0];
        for _ in 0..10 {
            a.step(&mut x, &[0.0; 3]);
        }
        assert_eq!(x, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut a = Adam::new(1, 1e-2);
        let mut x = [5.0];
        for _ in 0..5000 {
            let g = [2.0 * x[0]];
            a.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-3, "{}", x[0]);
    }
}
