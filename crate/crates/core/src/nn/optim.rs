use serde::{Deserialize, Serialize};

use super::param::ParamTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated on the first step
/// and must see the same parameter list, in the same order, afterwards.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                cfg.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&cfg.beta1)
            || !(0.0..1.0).contains(&cfg.beta2)
            || !(cfg.epsilon > 0.0)
        {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and epsilon must be > 0".into(),
            ));
        }
        Ok(Adam {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, params: &mut [&mut ParamTensor], batch: usize) -> Result<()> {
        for p in params.iter() {
            if let Some(i) = p.grad().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    layer: p.name().to_string(),
                    batch,
                    message: format!("gradient entry {i} is {}", p.grad()[i]),
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Usage(
                "optimizer called with a different parameter list".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (values, grads) = p.split_mut();
            for (((w, g), m), v) in values
                .iter_mut()
                .zip(grads.iter_mut())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * *g;
                *v = b2 * *v + (1.0 - b2) * *g * *g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_grad(p: &mut ParamTensor, target: &[f64]) -> f64 {
        let (w, g) = p.split_mut();
        let mut loss = 0.0;
        for ((w, g), t) in w.iter().zip(g.iter_mut()).zip(target) {
            loss += (w - t) * (w - t);
            *g = 2.0 * (w - t);
        }
        loss
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = ParamTensor::from_values("p", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.values().to_vec();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step(&mut [&mut p], 0).unwrap();
        assert_eq!(p.values(), before.as_slice());
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut p = ParamTensor::from_values("w", &[1], vec![1.0]).unwrap();
        quad_grad(&mut p, &[0.0]);
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 1e-3,
            ..Default::default()
        })
        .unwrap();
        opt.step(&mut [&mut p], 0).unwrap();
        assert!(p.values()[0] < 1.0 && p.values()[0] > 0.0);
        assert_eq!(p.grad(), &[0.0]);
    }

    #[test]
    fn converges_on_fixed_quadratic() {
        let target = [0.3, -0.7, 1.1, 0.0];
        let mut p = ParamTensor::from_values("w", &[4], vec![1.0, 1.0, -1.0, 0.5]).unwrap();
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        })
        .unwrap();
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = quad_grad(&mut p, &target);
            opt.step(&mut [&mut p], 0).unwrap();
        }
        let final_loss = quad_grad(&mut p, &target);
        assert!(final_loss < 1e-6, "loss {final_loss} (previous {loss})");
    }

    #[test]
    fn nan_gradient_aborts_with_layer_name() {
        let mut p = ParamTensor::from_values("enc0.weight", &[2], vec![1.0, 2.0]).unwrap();
        p.grad_mut()[1] = f64::NAN;
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        match opt.step(&mut [&mut p], 17) {
            Err(Error::NonFinite { layer, batch, .. }) => {
                assert_eq!(layer, "enc0.weight");
                assert_eq!(batch, 17);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p.values(), &[1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(Adam::new(AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        })
        .is_err());
    }
}
