//! Open-set decision layer. A sample is first classified among the known
//! classes; a Weibull tail model on latent distances and/or the softmax
//! entropy then decides whether to keep that label or answer UNKNOWN.

mod entropy;
mod evt;

use serde::{Deserialize, Serialize};

pub use entropy::{calibrate_entropy, shannon_entropy, EntropyClass, EntropyModel};
pub use evt::{
    calibrate_evt, fit_weibull, tail_outlier_prob, weibull_outlier_prob, EvtClass, WeibullFit,
    WeibullModel, MIN_TAIL_POINTS,
};

use crate::dvec::{argmax, extract_class_stats, DvecModel, LabeledSet};
use crate::error::{Error, Result};

pub const CALIBRATION_VERSION: u32 = 1;
pub const DEFAULT_GATE: f64 = 0.29;

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=100.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in [0, 100] percent, got {alpha}"
        )))
    }
}

/// Nearest-rank `(100 - alpha)` percentile of an ascending, non-empty list:
/// the value at 1-based rank `ceil((100 - alpha) / 100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    // The small slack keeps e.g. 95% of 20 at rank 19 despite rounding.
    let rank = ((100.0 - alpha) / 100.0 * n as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Evt,
    Entropy,
    /// EVT when the mission's openness is at least `gate`, entropy otherwise.
    OpennessGated {
        openness: f64,
        gate: f64,
    },
}

impl Policy {
    /// The single discriminator this policy consults.
    pub fn branch(&self) -> Branch {
        match *self {
            Policy::Evt => Branch::Evt,
            Policy::Entropy => Branch::Entropy,
            Policy::OpennessGated { openness, gate } => {
                if openness >= gate {
                    Branch::Evt
                } else {
                    Branch::Entropy
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Evt => "evt",
            Policy::Entropy => "entropy",
            Policy::OpennessGated { .. } => "gated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Evt,
    Entropy,
}

/// Both calibrated discriminators for one model. `entropy` is `None` when
/// fewer than two classes are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub known_class_ids: Vec<u32>,
    pub weibull: WeibullModel,
    pub entropy: Option<EntropyModel>,
    /// Free-form record of how the calibration was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<toml::Table>,
}

impl Calibration {
    /// Class statistics come from `train` (centers, Weibull fits) and `val`
    /// (thresholds).
    pub fn fit(
        model: &DvecModel,
        train: &LabeledSet,
        val: &LabeledSet,
        tail_fraction: f64,
        alpha: f64,
    ) -> Result<Self> {
        let stats = extract_class_stats(model, train, val)?;
        let weibull = calibrate_evt(&stats, tail_fraction, alpha)?;
        let probs = model.predict(val.x.view())?.probs;
        let entropy = match calibrate_entropy(
            &model.known_class_ids,
            probs.rows().into_iter().map(|r| r.to_slice().unwrap()),
            alpha,
        ) {
            Ok(m) => Some(m),
            Err(e) if e.is_not_applicable() => None,
            Err(e) => return Err(e),
        };
        Ok(Calibration {
            version: CALIBRATION_VERSION,
            known_class_ids: model.known_class_ids.clone(),
            weibull,
            entropy,
            provenance: None,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cal: Calibration = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if cal.version != CALIBRATION_VERSION {
            return Err(Error::Format(format!(
                "unsupported calibration version {}",
                cal.version
            )));
        }
        if cal.weibull.classes.len() != cal.known_class_ids.len()
            || cal
                .entropy
                .as_ref()
                .is_some_and(|e| e.classes.len() != cal.known_class_ids.len())
        {
            return Err(Error::Format("calibration class lists disagree".into()));
        }
        Ok(cal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Final answer; `None` is UNKNOWN.
    pub predicted: Option<u32>,
    /// The classifier's known-class answer before rejection.
    pub closed_set: u32,
    pub evt_outlier_prob: f64,
    pub entropy: f64,
    pub evt_reject: bool,
    /// `None` when the entropy discriminator is not applicable.
    pub entropy_reject: Option<bool>,
    pub branch: Branch,
}

/// Decision for one sample given its latent mean and softmax output.
pub fn discriminate(
    cal: &Calibration,
    latent: &[f64],
    probs: &[f64],
    policy: Policy,
) -> Result<Verdict> {
    let k = cal.known_class_ids.len();
    if probs.len() != k {
        return Err(Error::shape("class probabilities", k, probs.len()));
    }
    let c = argmax(probs);
    let (evt_outlier_prob, evt_reject) = cal.weibull.score(c, latent);
    let entropy = shannon_entropy(probs)?;
    let entropy_reject = cal
        .entropy
        .as_ref()
        .map(|m| entropy > m.classes[c].threshold);
    let branch = policy.branch();
    let reject = match branch {
        Branch::Evt => evt_reject,
        Branch::Entropy => entropy_reject.ok_or_else(|| {
            Error::NotApplicable(format!(
                "entropy discriminator is undefined with {k} known class"
            ))
        })?,
    };
    let closed_set = cal.known_class_ids[c];
    Ok(Verdict {
        predicted: (!reject).then_some(closed_set),
        closed_set,
        evt_outlier_prob,
        entropy,
        evt_reject,
        entropy_reject,
        branch,
    })
}

/// Runs the model over `x` and discriminates every row.
pub fn discriminate_batch(
    model: &DvecModel,
    cal: &Calibration,
    x: ndarray::ArrayView2<'_, f64>,
    policy: Policy,
) -> Result<Vec<Verdict>> {
    if model.known_class_ids != cal.known_class_ids {
        return Err(Error::Config(
            "calibration was made for a different set of known classes".into(),
        ));
    }
    let pred = model.predict(x)?;
    pred.mu
        .rows()
        .into_iter()
        .zip(pred.probs.rows())
        .map(|(z, p)| discriminate(cal, z.as_slice().unwrap(), p.as_slice().unwrap(), policy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(nearest_rank(&v, 50.0), 0.5);
        assert_eq!(v.iter().filter(|&&x| x > 0.5).count(), 5);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&v, 100.0), 0.1);
        let w: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(nearest_rank(&w, 5.0), 18.0);
    }

    fn cal(k: usize) -> Calibration {
        let ids: Vec<u32> = (0..k as u32).collect();
        Calibration {
            version: CALIBRATION_VERSION,
            known_class_ids: ids.clone(),
            weibull: WeibullModel {
                alpha: 5.0,
                tail_fraction: 0.1,
                classes: ids
                    .iter()
                    .map(|&id| EvtClass {
                        class_id: id,
                        center: vec![id as f64, 0.0],
                        fit: WeibullFit {
                            tau: 0.5,
                            kappa: 2.0,
                            gamma: 1.0,
                        },
                        cdf_threshold: 0.9,
                        distance_threshold: 0.5 + 10f64.ln().sqrt(),
                    })
                    .collect(),
            },
            entropy: (k >= 2).then(|| EntropyModel {
                alpha: 5.0,
                classes: ids
                    .iter()
                    .map(|&id| EntropyClass {
                        class_id: id,
                        val_entropies: vec![0.1],
                        threshold: 0.1,
                    })
                    .collect(),
            }),
            provenance: None,
        }
    }

    #[test]
    fn center_with_one_hot_is_known_under_every_policy() {
        let c = cal(3);
        for policy in [
            Policy::Evt,
            Policy::Entropy,
            Policy::OpennessGated {
                openness: 0.5,
                gate: 0.29,
            },
            Policy::OpennessGated {
                openness: 0.1,
                gate: 0.29,
            },
        ] {
            let v = discriminate(&c, &[1.0, 0.0], &[0.0, 1.0, 0.0], policy).unwrap();
            assert_eq!(v.predicted, Some(1), "{policy:?}");
            assert_eq!(v.evt_outlier_prob, 0.0);
            assert_eq!(v.entropy, 0.0);
        }
    }

    #[test]
    fn far_latent_is_unknown_under_evt() {
        let c = cal(2);
        let v = discriminate(&c, &[100.0, 0.0], &[1.0, 0.0], Policy::Evt).unwrap();
        assert!(v.evt_outlier_prob > 1.0 - 1e-12);
        assert_eq!(v.predicted, None);
        assert_eq!(v.entropy_reject, Some(false));
        assert_eq!(v.closed_set, 0);
    }

    #[test]
    fn entropy_policy_with_one_class_is_not_applicable() {
        let c = cal(1);
        let err = discriminate(&c, &[0.0, 0.0], &[1.0], Policy::Entropy).unwrap_err();
        assert!(err.is_not_applicable());
        let gated = Policy::OpennessGated {
            openness: 0.5918,
            gate: DEFAULT_GATE,
        };
        assert_eq!(gated.branch(), Branch::Evt);
        assert!(discriminate(&c, &[0.0, 0.0], &[1.0], gated).is_ok());
    }

    #[test]
    fn calibration_round_trips_through_toml() {
        for k in [1, 3] {
            let c = cal(k);
            assert_eq!(Calibration::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        }
    }
}
