//! Adam with decoupled weight decay.
//!
//! Standard constants (beta1 0.9, beta2 0.999, eps 1e-8); the decay term
//! is applied directly to the parameters, not through the moments. Updates
//! sweep the flat vector in index order, so steps are deterministic.

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        AdamW { t: 0, m: vec![0.0; n], v: vec![0.0; n], beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn from_state(t: u64, m: Vec<f64>, v: Vec<f64>) -> Self {
        AdamW { t, m, v, ..AdamW::new(0) }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + weight_decay * params[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(2);
        let mut x = vec![3.0, -2.0];
        for _ in 0..2000 {
            let grad: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
            opt.step(&mut x, &grad, 1e-2, 0.0);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn weight_decay_is_decoupled_from_the_moments() {
        // With zero gradient the moments stay zero and decay shrinks params.
        let mut opt = AdamW::new(1);
        let mut x = vec![1.0];
        opt.step(&mut x, &[0.0], 0.1, 0.5);
        assert!((x[0] - 0.95).abs() < 1e-12);
        assert_eq!(opt.m[0], 0.0);
        assert_eq!(opt.v[0], 0.0);
    }
}
