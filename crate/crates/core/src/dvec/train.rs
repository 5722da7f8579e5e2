use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{dvec_loss, KlWeighting};
use super::model::{DvecArch, DvecModel};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::rng::stream_rng;
use crate::signal::{FeaturePipeline, RawSignal};

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub kl_warmup_epochs: usize,
    /// Floor on the KL weight for correctly classified items.
    pub omega0: f64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Reparameterized latent samples per item and step.
    pub mc_samples: usize,
    pub optimizer: AdamConfig,
    /// Centre each class prior at `spacing * e_(k mod L)` instead of the origin.
    pub class_prior_spacing: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            seed: 42,
            kl_warmup_epochs: 10,
            omega0: 0.1,
            latent_dim: 32,
            hidden: vec![512, 256, 128],
            mc_samples: 1,
            optimizer: AdamConfig::default(),
            class_prior_spacing: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 > 0.0 && self.omega0 <= 1.0) {
            return Err(Error::Config(format!(
                "omega0 must lie in (0, 1], got {}",
                self.omega0
            )));
        }
        if self.batch_size == 0 || self.mc_samples == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "batch_size, mc_samples and latent_dim must be >= 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if let Some(s) = self.class_prior_spacing {
            if !s.is_finite() {
                return Err(Error::Config("class_prior_spacing must be finite".into()));
            }
        }
        Adam::new(self.optimizer).map(|_| ())
    }
}

/// Feature matrix with class indices (positions in the model's known id list).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Array2<f64>, y: Vec<usize>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::shape("labels", x.nrows(), y.len()));
        }
        Ok(LabeledSet { x, y })
    }

    /// Fuses `signals` and maps each label to its index in `known_class_ids`.
    pub fn from_signals(
        pipeline: &FeaturePipeline,
        signals: &[RawSignal],
        known_class_ids: &[u32],
    ) -> Result<Self> {
        let y = signals
            .iter()
            .enumerate()
            .map(|(i, s)| match s.label {
                None => Err(Error::DataIntegrity(format!("record {i} is unlabeled"))),
                Some(l) => known_class_ids.iter().position(|&c| c == l).ok_or_else(|| {
                    Error::DataIntegrity(format!("record {i} has label {l}, not a known class"))
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledSet::new(pipeline.transform(signals)?, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cross_entropy: f64,
    pub train_kl: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_cross_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DvecModel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// Freshly initialized model for the configured architecture.
pub fn init_model(
    input_dim: usize,
    known_class_ids: Vec<u32>,
    cfg: &TrainConfig,
) -> Result<DvecModel> {
    cfg.validate()?;
    let arch = DvecArch {
        input_dim,
        hidden: cfg.hidden.clone(),
        latent_dim: cfg.latent_dim,
        n_classes: known_class_ids.len(),
    };
    DvecModel::new(
        arch,
        known_class_ids,
        &mut stream_rng(cfg.seed, INIT_STREAM),
    )
}

/// Fraction of rows whose evaluation-mode prediction matches the label.
pub fn accuracy(model: &DvecModel, data: &LabeledSet) -> Result<f64> {
    Ok(evaluate(model, data)?.0)
}

/// Evaluation-mode accuracy and mean cross-entropy.
fn evaluate(model: &DvecModel, data: &LabeledSet) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Insufficient("accuracy of an empty set".into()));
    }
    let pred = model.predict(data.x.view())?;
    let n = data.len() as f64;
    let correct = pred
        .argmax()
        .iter()
        .zip(&data.y)
        .filter(|(p, y)| p == y)
        .count();
    let ce: f64 = pred
        .probs
        .rows()
        .into_iter()
        .zip(&data.y)
        .map(|(p, &y)| -p[y].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok((correct as f64 / n, ce / n))
}

/// Mini-batch Adam on the gated objective. Returns the parameters of the
/// epoch with the best validation accuracy, the later epoch on ties.
///
/// With a single known class the cross-entropy is identically zero, so only
/// the KL term trains the encoder and drives every latent towards the prior
/// mean. Accuracy is then trivially 1 and the first epoch is kept instead.
pub fn train(
    model: DvecModel,
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Insufficient(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let k = model.n_classes();
    if let Some(&bad) = train.y.iter().chain(&val.y).find(|&&y| y >= k) {
        return Err(Error::Domain(format!(
            "label index {bad} out of range for {k} classes"
        )));
    }
    let mut model = model;
    let mut opt = Adam::new(cfg.optimizer)?;
    let mut rng = stream_rng(cfg.seed, TRAIN_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, DvecModel)> = None;
    let prefer_later = k > 1;
    let latent = model.arch.latent_dim;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut ce, mut kl, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = train.x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            let eps: Vec<Array2<f64>> = (0..cfg.mc_samples)
                .map(|_| {
                    Array2::from_shape_simple_fn((idx.len(), latent), || rng.sample(StandardNormal))
                })
                .collect();
            let diverged = |l: f64| Error::Diverged {
                epoch,
                batch: bi,
                loss: l,
            };
            let bd = match dvec_loss(
                &mut model,
                xb.view(),
                &yb,
                &eps,
                KlWeighting::Gated { epoch },
                cfg,
                true,
            ) {
                Ok(bd) => bd,
                Err(Error::NonFinite { layer, .. }) if layer == "loss" => {
                    return Err(diverged(f64::NAN))
                }
                Err(Error::NonFinite { layer, message, .. }) => {
                    return Err(Error::NonFinite {
                        layer,
                        batch: bi,
                        message: format!("epoch {epoch}: {message}"),
                    })
                }
                Err(e) => return Err(e),
            };
            opt.step(&mut model.params_mut(), bi)?;
            let w = idx.len() as f64;
            loss += bd.loss * w;
            ce += bd.cross_entropy * w;
            kl += bd.kl * w;
            correct += bd.correct;
        }
        let n = train.len() as f64;
        let (val_accuracy, val_cross_entropy) = evaluate(&model, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss / n,
            train_cross_entropy: ce / n,
            train_kl: kl / n,
            train_accuracy: correct as f64 / n,
            val_accuracy,
            val_cross_entropy,
        });
        if best
            .as_ref()
            .is_none_or(|&(_, acc, _)| val_accuracy > acc || (prefer_later && val_accuracy == acc))
        {
            best = Some((epoch, val_accuracy, model.clone()));
        }
    }
    let (best_epoch, model) = match best {
        Some((e, _, m)) => (Some(e), m),
        None => (None, model),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(n: usize, seed: u64) -> LabeledSet {
        // Two Gaussian blobs in 8 dimensions, means at -1 and +1.
        let mut rng = stream_rng(seed, 0);
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 8), |(i, _)| {
            let m = if y[i] == 0 { -1.0 } else { 1.0 };
            m + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        LabeledSet::new(x, y).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 15,
            batch_size: 8,
            hidden: vec![16],
            latent_dim: 4,
            optimizer: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_separable_blobs() {
        let cfg = small_cfg();
        let (tr, va) = (toy(64, 1), toy(32, 2));
        let model = init_model(8, vec![3, 7], &cfg).unwrap();
        let out = train(model, &tr, &va, &cfg).unwrap();
        assert_eq!(out.history.len(), 15);
        assert!(accuracy(&out.model, &va).unwrap() >= 0.95);
        let best = out.best_epoch.unwrap();
        assert_eq!(
            out.history[best].val_accuracy,
            accuracy(&out.model, &va).unwrap()
        );
        assert!(out.history[best + 1..]
            .iter()
            .all(|r| r.val_accuracy < out.history[best].val_accuracy));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let model = init_model(8, vec![0, 1], &cfg).unwrap();
        let out = train(model.clone(), &toy(8, 1), &toy(4, 2), &cfg).unwrap();
        assert_eq!(out.model, model);
        assert!(out.history.is_empty() && out.best_epoch.is_none());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 3,
            ..small_cfg()
        };
        let run = || {
            train(
                init_model(8, vec![0, 1], &cfg).unwrap(),
                &toy(16, 1),
                &toy(8, 2),
                &cfg,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn omega0_must_be_positive() {
        for w in [0.0, -0.1, 1.5, f64::NAN] {
            let cfg = TrainConfig {
                omega0: w,
                ..TrainConfig::default()
            };
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{w}");
        }
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let cfg = TrainConfig {
            optimizer: AdamConfig {
                learning_rate: 1e150,
                ..AdamConfig::default()
            },
            ..small_cfg()
        };
        let mut x = toy(16, 1);
        x.x.mapv_inplace(|v| v * 1e150);
        let err = train(
            init_model(8, vec![0, 1], &cfg).unwrap(),
            &x,
            &toy(8, 2),
            &cfg,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Diverged { .. } | Error::NonFinite { .. }),
            "{err}"
        );
    }
}
