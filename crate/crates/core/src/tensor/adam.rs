use serde::{Deserialize, Serialize};

use super::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        if params.tensors.len() != self.m.len() || grads.tensors.len() != self.m.len() {
            return Err(Error::Shape("adam: parameter count mismatch".into()));
        }
        for ((p, g), m) in params.tensors.iter().zip(&grads.tensors).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!("adam: {:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let c1 = T::one() - T::of(self.config.beta1.powi(self.step as i32));
        let c2 = T::one() - T::of(self.config.beta2.powi(self.step as i32));
        let lr = T::of(self.config.lr);
        let eps = T::of(self.config.eps);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet<f64> {
        ParamSet { names: vec!["p".into()], tensors: vec![Tensor::scalar(v)] }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(1.25);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &single(0.0)).unwrap();
        assert_eq!(p.tensors[0].data()[0], 1.25);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = single(0.0);
        let mut s = AdamState::new(cfg, &p);
        s.step(&mut p, &single(1.0)).unwrap();
        // m̂ = 1, v̂ = 1 → θ = −0.1 / (1 + 1e-8)
        assert!((p.tensors[0].data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_steps_are_reproducible() {
        let run = || {
            let mut p = single(0.5);
            let mut s = AdamState::new(AdamConfig::default(), &p);
            for _ in 0..2 {
                s.step(&mut p, &single(0.3)).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let g = ParamSet { names: vec!["p".into()], tensors: vec![Tensor::zeros(&[2])] };
        assert!(s.step(&mut p, &g).is_err());
    }
}
