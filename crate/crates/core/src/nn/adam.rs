use super::{DenseNet, ParamGrads, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Adam {
            config,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    /// Rebuilds a state from persisted moments.
    pub fn from_parts(config: AdamConfig, m: Vec<T>, v: Vec<T>, t: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Shape("Adam moments differ in length".into()));
        }
        if v.iter().any(|&x| x < T::zero()) {
            return Err(Error::InvalidConfig("negative second moment".into()));
        }
        Ok(Adam { config, m, v, t })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }

    /// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state holds {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powf(self.t as f64));
        let bc2 = T::of(1.0 - c.beta2.powf(self.t as f64));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn apply(&mut self, net: &mut DenseNet<T>, grads: &ParamGrads<T>) -> Result<()> {
        self.step(net.params_mut(), grads.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::<f64>::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let cfg = AdamConfig {
            lr: 0.001,
            ..AdamConfig::default()
        };
        for g in [3.0, -0.02, 1e-3] {
            let mut adam = Adam::<f64>::new(1, cfg);
            let mut p = [0.0];
            adam.step(&mut p, &[g]).unwrap();
            let expect = 0.001 * g.abs() / (g.abs() + 1e-8);
            assert!((p[0].abs() - expect).abs() < 1e-15);
            assert!(p[0].signum() == -g.signum());
        }
    }

    #[test]
    fn two_steps_on_quadratic_match_hand_recurrence() {
        // f(x) = (x - 3)^2, x0 = 1, lr = 0.1
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::<f64>::new(1, cfg);
        let mut x = [1.0];
        for _ in 0..2 {
            let g = 2.0 * (x[0] - 3.0);
            adam.step(&mut x, &[g]).unwrap();
        }
        // Step 1: g1 = -4, m1 = -0.4, v1 = 0.016, m_hat = -4, v_hat = 16 -> x1 = 1 + 0.1*4/(4+1e-8)
        let x1 = 1.0 + 0.1 * 4.0 / (4.0 + 1e-8);
        let g2 = 2.0 * (x1 - 3.0);
        let m2 = 0.9 * -0.4 + 0.1 * g2;
        let v2 = 0.999 * 0.016 + 0.001 * g2 * g2;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64 * 0.999);
        let x2 = x1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((x[0] - x2).abs() < 1e-12, "{} vs {}", x[0], x2);
        assert!(adam.second_moment()[0] >= 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = Adam::<f32>::new(2, AdamConfig::default());
        let mut p = [0.0f32; 3];
        assert!(adam.step(&mut p, &[0.0; 3]).is_err());
    }
}
