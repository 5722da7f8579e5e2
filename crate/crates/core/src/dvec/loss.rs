//! Training objective: softmax cross-entropy on a reparameterized latent
//! sample plus a gated, weighted KL divergence to the latent prior.
//!
//! Per item: `CE(softmax(W z + b), y) + lambda * KL(N(mu, sigma^2) || prior)`,
//! averaged over the batch. `lambda` is zero for items the classifier currently
//! gets wrong and `max(omega(epoch), omega0)` otherwise.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::model::{argmax, check_finite, DvecModel};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_rows, softmax_rows, softmax_xent_grad, Tape};

/// `1/2 * sum_i (mu_i^2 + sigma_i^2 - ln sigma_i^2 - 1)`, the KL divergence
/// from `N(mu, diag(sigma^2))` to the standard normal.
pub fn kl_gaussian(mu: &[f64], var: &[f64]) -> Result<f64> {
    if mu.len() != var.len() {
        return Err(Error::shape("kl_gaussian", mu.len(), var.len()));
    }
    if let Some(v) = var.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("variance must be > 0, got {v}")));
    }
    Ok(mu
        .iter()
        .zip(var)
        .map(|(&m, &v)| 0.5 * (m * m + kl_variance_term(v.ln())))
        .sum())
}

/// `sigma^2 - ln sigma^2 - 1` written in terms of `logvar`; never negative.
#[inline]
fn kl_variance_term(logvar: f64) -> f64 {
    (logvar.exp_m1() - logvar).max(0.0)
}

/// KL weight schedule. `omega(epoch) = min(1, epoch / kl_warmup_epochs)`.
pub fn warmup(epoch: usize, kl_warmup_epochs: usize) -> f64 {
    if kl_warmup_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / kl_warmup_epochs as f64).min(1.0)
    }
}

/// Per-item KL weight: 0 for a misclassified item, else `max(omega(epoch), omega0)`.
pub fn lambda_weight(epoch: usize, label: usize, predicted: usize, cfg: &TrainConfig) -> f64 {
    if label != predicted {
        0.0
    } else {
        warmup(epoch, cfg.kl_warmup_epochs).max(cfg.omega0)
    }
}

/// Which KL weight to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlWeighting {
    /// Prediction-gated warmup weight at the given epoch.
    Gated { epoch: usize },
    /// The same weight for every item, regardless of prediction.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Batch mean of `CE + lambda * KL`.
    pub loss: f64,
    /// Batch mean cross-entropy.
    pub cross_entropy: f64,
    /// Batch mean (unweighted) KL.
    pub kl: f64,
    pub mean_lambda: f64,
    /// Items whose gating prediction matched the label.
    pub correct: usize,
}

/// Loss on one batch for fixed reparameterization noise.
///
/// `eps` holds one `[batch, latent_dim]` noise matrix per latent sample; the
/// cross-entropy is averaged over them. With `compute_grad` the gradient of
/// the returned loss is accumulated into the model's parameter grads.
pub fn dvec_loss(
    model: &mut DvecModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    eps: &[Array2<f64>],
    weighting: KlWeighting,
    cfg: &TrainConfig,
    compute_grad: bool,
) -> Result<LossBreakdown> {
    let b = x.nrows();
    let k = model.n_classes();
    let l = model.arch.latent_dim;
    if b == 0 {
        return Err(Error::Insufficient("empty batch".into()));
    }
    model.check_input(&x)?;
    if labels.len() != b {
        return Err(Error::shape("labels", b, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Domain(format!(
            "label index {bad} is not a known class (K = {k})"
        )));
    }
    if eps.is_empty() || eps.iter().any(|e| e.dim() != (b, l)) {
        return Err(Error::shape(
            "eps",
            format!("non-empty list of [{b}, {l}]"),
            format!("{} matrices", eps.len()),
        ));
    }

    let mut tape = Tape::new();
    let h = tape.forward(&model.trunk, x)?.clone();
    let (mu_pre, mu) = model.mu_head.forward(h.view())?;
    let (lv_pre, logvar) = model.logvar_head.forward(h.view())?;
    check_finite(&mu, "mu")?;
    check_finite(&logvar, "logvar")?;
    let sigma = logvar.mapv(|v| (0.5 * v).exp());
    let prior_mean = prior_means(cfg, labels, l);

    let n_samples = eps.len();
    let mut ce = vec![0.0; b];
    let mut mean_probs = Array2::<f64>::zeros((b, k));
    let mut samples = Vec::with_capacity(n_samples);
    for e in eps {
        let z = &mu + &(&sigma * e);
        let (_, logits) = model.classifier.forward(z.view())?;
        check_finite(&logits, "cls")?;
        let probs = softmax_rows(logits.view());
        for (c, v) in ce.iter_mut().zip(cross_entropy_rows(logits.view(), labels)) {
            *c += v;
        }
        mean_probs += &probs;
        samples.push((z, probs));
    }
    if n_samples > 1 {
        ce.iter_mut().for_each(|c| *c /= n_samples as f64);
    }

    let predicted: Vec<usize> = mean_probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().unwrap()))
        .collect();
    let lambdas: Vec<f64> = labels
        .iter()
        .zip(&predicted)
        .map(|(&y, &p)| match weighting {
            KlWeighting::Gated { epoch } => lambda_weight(epoch, y, p, cfg),
            KlWeighting::Fixed(w) => w,
        })
        .collect();
    let kl: Vec<f64> = (0..b)
        .map(|i| {
            let (m, lv) = (mu.row(i), logvar.row(i));
            let shift = prior_mean.as_ref().map(|pm| pm.row(i));
            (0..l)
                .map(|j| {
                    let d = m[j] - shift.map_or(0.0, |s| s[j]);
                    0.5 * (d * d + kl_variance_term(lv[j]))
                })
                .sum()
        })
        .collect();

    let bf = b as f64;
    let total: f64 = (0..b).map(|i| ce[i] + lambdas[i] * kl[i]).sum();
    let breakdown = LossBreakdown {
        loss: total / bf,
        cross_entropy: ce.iter().sum::<f64>() / bf,
        kl: kl.iter().sum::<f64>() / bf,
        mean_lambda: lambdas.iter().sum::<f64>() / bf,
        correct: labels
            .iter()
            .zip(&predicted)
            .filter(|(y, p)| y == p)
            .count(),
    };
    if !breakdown.loss.is_finite() {
        return Err(Error::NonFinite {
            layer: "loss".into(),
            batch: 0,
            message: format!("loss is {}", breakdown.loss),
        });
    }
    if !compute_grad {
        return Ok(breakdown);
    }

    // Classifier and reparameterization path.
    let mut dmu = Array2::<f64>::zeros((b, l));
    let mut dlv = Array2::<f64>::zeros((b, l));
    let ce_weight = 1.0 / (bf * n_samples as f64);
    for (e, (z, probs)) in eps.iter().zip(&samples) {
        let dlogits = softmax_xent_grad(probs.view(), labels, ce_weight);
        // The classifier is linear, so its pre-activation argument is unused.
        let dz = model
            .classifier
            .backward(z.view(), z.view(), dlogits.view(), true)
            .expect("input gradient requested");
        dmu += &dz;
        Zip::from(&mut dlv)
            .and(&dz)
            .and(e)
            .and(&sigma)
            .for_each(|g, &d, &e, &s| *g += d * e * 0.5 * s);
    }
    // KL path.
    let lam = Array1::from(lambdas).insert_axis(Axis(1)) / bf;
    let centered = match &prior_mean {
        Some(pm) => &mu - pm,
        None => mu.clone(),
    };
    dmu += &(&centered * &lam);
    dlv += &(&logvar.mapv(|v| 0.5 * v.exp_m1()) * &lam);

    let dh_mu = model
        .mu_head
        .backward(h.view(), mu_pre.view(), dmu.view(), true)
        .unwrap();
    let dh_lv = model
        .logvar_head
        .backward(h.view(), lv_pre.view(), dlv.view(), true)
        .unwrap();
    let dh = dh_mu + dh_lv;
    tape.backward(&mut model.trunk, dh.view(), false)?;
    Ok(breakdown)
}

/// Per-item prior mean when class-conditional priors are enabled: class `k`
/// is centred at `spacing * e_(k mod L)`.
fn prior_means(cfg: &TrainConfig, labels: &[usize], latent_dim: usize) -> Option<Array2<f64>> {
    let spacing = cfg.class_prior_spacing?;
    let mut m = Array2::zeros((labels.len(), latent_dim));
    for (i, &y) in labels.iter().enumerate() {
        m[[i, y % latent_dim]] = spacing;
    }
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_spot_values() {
        assert_eq!(kl_gaussian(&[0.0; 4], &[1.0; 4]).unwrap(), 0.0);
        assert!((kl_gaussian(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        // 1/2 (0 + 2 - ln 2 - 1)
        assert!((kl_gaussian(&[0.0], &[2.0]).unwrap() - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_non_positive_variance() {
        assert!(matches!(kl_gaussian(&[0.0], &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(
            kl_gaussian(&[0.0], &[-1.0]),
            Err(Error::Domain(_))
        ));
        assert!(kl_gaussian(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn lambda_gating() {
        let cfg = TrainConfig {
            kl_warmup_epochs: 10,
            omega0: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(lambda_weight(5, 1, 2, &cfg), 0.0);
        assert_eq!(lambda_weight(10, 1, 1, &cfg), 1.0);
        assert_eq!(lambda_weight(25, 1, 1, &cfg), 1.0);
        assert_eq!(lambda_weight(0, 1, 1, &cfg), 0.1);
        assert_eq!(lambda_weight(5, 0, 0, &cfg), 0.5);
        let no_warmup = TrainConfig {
            kl_warmup_epochs: 0,
            ..cfg
        };
        assert_eq!(lambda_weight(0, 3, 3, &no_warmup), 1.0);
    }
}
