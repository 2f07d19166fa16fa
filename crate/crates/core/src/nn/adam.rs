use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moment arrays shaped like the parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Vec<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>]) -> Result<()> {
        let congruent = |a: &[Vec<T>]| a.len() == params.len() && a.iter().zip(params.iter()).all(|(x, p)| x.len() == p.len());
        if !congruent(grads) || !congruent(&self.m) || !congruent(&self.v) {
            return Err(Error::Shape("adam: parameter, gradient and moment shapes differ".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = (b1 * m[i] + (T::one() - b1) * g[i]).flush();
                v[i] = (b2 * v[i] + (T::one() - b2) * g[i] * g[i]).flush();
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![vec![1.5f64, -2.0]];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![vec![1.5, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig { eps: 0.0, ..AdamConfig::default() };
        let mut p = vec![vec![0.0f64, 0.0]];
        let mut s = AdamState::new(cfg, &p);
        s.step(&mut p, &[vec![3.0, -0.002]]).unwrap();
        assert!((p[0][0] + 1e-4).abs() < 1e-15);
        assert!((p[0][1] - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descends() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut p = vec![vec![2.0f64]];
        let mut s = AdamState::new(cfg, &p);
        let f = |x: f64| (x - 0.5) * (x - 0.5);
        let start = f(p[0][0]);
        for _ in 0..2 {
            let g = 2.0 * (p[0][0] - 0.5);
            s.step(&mut p, &[vec![g]]).unwrap();
        }
        assert!(f(p[0][0]) < start);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![vec![0.0f32; 3]];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(s.step(&mut p, &[vec![0.0; 2]]).is_err());
    }
}
