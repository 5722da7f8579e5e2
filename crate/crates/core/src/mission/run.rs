use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::score::{evaluate, OpenSetPredictor, Scores};
use super::Mission;
use crate::dataset::{filter_classes, Dataset};
use crate::discriminators::{discriminate_batch, Branch, Calibration, Policy, DEFAULT_GATE};
use crate::dvec::DvecModel;
use crate::dvec::{accuracy, init_model, train, EpochRecord, LabeledSet, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::signal::{FeaturePipeline, FusionConfig, RawSignal};

/// Borrowed train/validation/test records.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [RawSignal],
    pub val: &'a [RawSignal],
    pub test: &'a [RawSignal],
}

impl<'a> From<&'a Dataset> for Splits<'a> {
    fn from(d: &'a Dataset) -> Self {
        Splits {
            train: &d.train,
            val: &d.val,
            test: &d.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// Global seed; each mission trains with a seed derived from it and the mission id.
    pub seed: u64,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub tail_fraction: f64,
    /// Percent of validation samples above each dynamic threshold.
    pub alpha: f64,
    /// Openness at or above which the gated policy uses EVT.
    pub gate: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            seed: 42,
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            tail_fraction: 0.1,
            alpha: 5.0,
            gate: DEFAULT_GATE,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.train.validate()?;
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "tail_fraction must lie in (0, 1], got {}",
                self.tail_fraction
            )));
        }
        if !(0.0..=100.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 100], got {}",
                self.alpha
            )));
        }
        if !self.gate.is_finite() {
            return Err(Error::Config("gate must be finite".into()));
        }
        Ok(())
    }

    /// Seed for one mission's training run. Kept below `2^63` so it fits the
    /// signed integers of TOML reports.
    pub fn mission_seed(&self, mission_id: u32) -> u64 {
        derive_seed(self.seed, u64::from(mission_id)) >> 1
    }

    pub fn policy(&self, name: &str, openness: f64) -> Result<Policy> {
        match name {
            "evt" => Ok(Policy::Evt),
            "entropy" => Ok(Policy::Entropy),
            "gated" => Ok(Policy::OpennessGated {
                openness,
                gate: self.gate,
            }),
            other => Err(Error::Config(format!(
                "unknown policy {other:?} (expected evt, entropy or gated)"
            ))),
        }
    }
}

/// A trained and calibrated mission, ready to be evaluated under any policy.
#[derive(Debug, Clone)]
pub struct PreparedMission {
    pub mission: Mission,
    pub seed: u64,
    pub pipeline: FeaturePipeline,
    pub model: DvecModel,
    pub calibration: Calibration,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Closed-set accuracy of the kept model on the known-class validation split.
    pub val_accuracy: f64,
    pub test_x: Array2<f64>,
    pub test_truths: Vec<u32>,
}

impl PreparedMission {
    /// Trains on the known classes of the train split, calibrates on the
    /// known classes of the validation split and fuses the test split.
    pub fn prepare(mission: &Mission, splits: Splits<'_>, cfg: &MissionConfig) -> Result<Self> {
        cfg.validate()?;
        let known = &mission.known_class_ids;
        let train_raw = filter_classes(splits.train, known);
        let val_raw = filter_classes(splits.val, known);
        let test_raw = filter_classes(splits.test, &mission.test_class_ids());
        if train_raw.is_empty() || val_raw.is_empty() || test_raw.is_empty() {
            return Err(Error::Insufficient(format!(
                "mission {} has an empty split",
                mission.id
            )));
        }
        let pipeline = FeaturePipeline::fit(cfg.fusion, &train_raw)?;
        let train_set = LabeledSet::from_signals(&pipeline, &train_raw, known)?;
        let val_set = LabeledSet::from_signals(&pipeline, &val_raw, known)?;

        let seed = cfg.mission_seed(mission.id);
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let model = init_model(pipeline.fusion.dim(), known.clone(), &train_cfg)?;
        let outcome = train(model, &train_set, &val_set, &train_cfg)?;
        let calibration = Calibration::fit(
            &outcome.model,
            &train_set,
            &val_set,
            cfg.tail_fraction,
            cfg.alpha,
        )?;
        let val_accuracy = accuracy(&outcome.model, &val_set)?;
        let test_x = pipeline.transform(&test_raw)?;
        let test_truths = test_raw
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::DataIntegrity("unlabeled test record".into()))
            })
            .collect::<Result<_>>()?;
        Ok(PreparedMission {
            mission: mission.clone(),
            seed,
            pipeline,
            model: outcome.model,
            calibration,
            history: outcome.history,
            best_epoch: outcome.best_epoch,
            val_accuracy,
            test_x,
            test_truths,
        })
    }

    pub fn predictor(&self, policy: Policy) -> DvecOpenSet<'_> {
        DvecOpenSet {
            model: &self.model,
            calibration: &self.calibration,
            policy,
        }
    }

    pub fn evaluate(&self, policy: Policy) -> Result<MissionReport> {
        check_applicable(&self.mission, policy)?;
        let scores = evaluate(
            &self.predictor(policy),
            self.test_x.view(),
            &self.test_truths,
            &self.mission.known_class_ids,
        )?;
        Ok(MissionReport {
            mission: self.mission.clone(),
            policy: policy.name().to_string(),
            branch: policy.branch(),
            seed: self.seed,
            best_epoch: self.best_epoch,
            val_accuracy: self.val_accuracy,
            scores,
        })
    }
}

fn check_applicable(mission: &Mission, policy: Policy) -> Result<()> {
    if policy.branch() == Branch::Entropy && mission.known_class_ids.len() < 2 {
        return Err(Error::NotApplicable(format!(
            "mission {} has one known class; the entropy discriminator needs two",
            mission.id
        )));
    }
    Ok(())
}

/// Open-set predictor backed by a trained model and its calibration.
pub struct DvecOpenSet<'a> {
    pub model: &'a DvecModel,
    pub calibration: &'a Calibration,
    pub policy: Policy,
}

impl OpenSetPredictor for DvecOpenSet<'_> {
    fn predict_open(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Option<u32>>> {
        Ok(
            discriminate_batch(self.model, self.calibration, x, self.policy)?
                .into_iter()
                .map(|v| v.predicted)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub mission: Mission,
    pub policy: String,
    /// Discriminator the policy consulted.
    pub branch: Branch,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub val_accuracy: f64,
    pub scores: Scores,
}

/// Trains, calibrates and evaluates one mission under one policy.
pub fn run_mission(
    mission: &Mission,
    splits: Splits<'_>,
    cfg: &MissionConfig,
    policy: Policy,
) -> Result<MissionReport> {
    check_applicable(mission, policy)?;
    PreparedMission::prepare(mission, splits, cfg)?.evaluate(policy)
}
