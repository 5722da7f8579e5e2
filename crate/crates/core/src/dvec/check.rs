//! Finite-difference check of the full training loss on a small random model.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{dvec_loss, KlWeighting, LossBreakdown};
use super::train::{init_model, TrainConfig};
use crate::error::Result;
use crate::nn::{check_gradients, GradCheckConfig, GradCheckReport, ParamSet};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossCheckSetup {
    pub seed: u64,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub n_classes: usize,
    pub batch: usize,
    /// Epoch fed to the KL warmup; with the default warmup of 10 epochs the
    /// gate weight of a correct item is `epoch / 10`.
    pub epoch: usize,
    pub mc_samples: usize,
}

impl Default for LossCheckSetup {
    fn default() -> Self {
        LossCheckSetup {
            seed: 7,
            input_dim: 24,
            hidden: vec![16, 12],
            latent_dim: 8,
            n_classes: 7,
            batch: 10,
            epoch: 5,
            mc_samples: 2,
        }
    }
}

/// Builds a random model and batch where about half the items are classified
/// correctly (so both branches of the KL gate are active) and compares the
/// analytic gradient of the loss against central differences.
pub fn gradcheck_loss(
    setup: &LossCheckSetup,
    cfg: &GradCheckConfig,
) -> Result<(GradCheckReport, LossBreakdown)> {
    let train_cfg = TrainConfig {
        seed: setup.seed,
        hidden: setup.hidden.clone(),
        latent_dim: setup.latent_dim,
        mc_samples: setup.mc_samples,
        ..TrainConfig::default()
    };
    let ids: Vec<u32> = (0..setup.n_classes as u32).collect();
    let mut model = init_model(setup.input_dim, ids, &train_cfg)?;
    let mut rng = stream_rng(setup.seed, 0x6772_6164);
    let x = Array2::from_shape_simple_fn((setup.batch, setup.input_dim), || {
        3.0 * rng.sample::<f64, _>(StandardNormal)
    });
    // Small noise keeps the sampled prediction, which drives the gate, equal
    // to the mean prediction used to pick the labels.
    let eps: Vec<Array2<f64>> = (0..setup.mc_samples)
        .map(|_| {
            Array2::from_shape_simple_fn((setup.batch, setup.latent_dim), || {
                0.01 * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let predicted = model.predict(x.view())?.argmax();
    let labels: Vec<usize> = predicted
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if i % 2 == 0 {
                p
            } else {
                (p + 1 + i % (setup.n_classes - 1).max(1)) % setup.n_classes
            }
        })
        .collect();
    let weighting = KlWeighting::Gated { epoch: setup.epoch };
    let breakdown = dvec_loss(
        &mut model,
        x.view(),
        &labels,
        &eps,
        weighting,
        &train_cfg,
        false,
    )?;
    let report = check_gradients(
        &mut model,
        |m| m.params_mut(),
        |m, grad| Ok(dvec_loss(m, x.view(), &labels, &eps, weighting, &train_cfg, grad)?.loss),
        cfg,
        &mut rng,
    )?;
    Ok((report, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_setup_passes_with_mixed_gating() {
        let (report, b) =
            gradcheck_loss(&LossCheckSetup::default(), &GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
        assert!(b.correct > 0 && b.correct < 10, "correct = {}", b.correct);
        assert!(b.kl > 0.0);
    }
}
