//! Open-set missions: which classes are known during training, which appear
//! only at test time, and the end-to-end evaluation of one or many missions.

mod run;
mod score;
mod sweep;

use serde::{Deserialize, Serialize};

pub use run::{run_mission, DvecOpenSet, MissionConfig, MissionReport, PreparedMission, Splits};
pub use score::{evaluate, score, ClassAccuracy, OpenSetPredictor, Scores, UNKNOWN_LABEL};
pub use sweep::{sweep, trend, CellOutcome, SweepCell, SweepReport, Trend, TrendPoint};

use crate::dataset::Manifest;
use crate::error::{Error, Result};

/// `1 - sqrt(n_training / n_testing)`.
pub fn openness(n_training: usize, n_testing: usize) -> Result<f64> {
    if n_training == 0 || n_training > n_testing {
        return Err(Error::Domain(format!(
            "openness needs 1 <= n_training <= n_testing, got {n_training} and {n_testing}"
        )));
    }
    Ok(1.0 - (n_training as f64 / n_testing as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub id: u32,
    pub known_class_ids: Vec<u32>,
    pub unknown_class_ids: Vec<u32>,
    pub openness: f64,
}

impl Mission {
    pub fn name(&self) -> String {
        format!("M{}", self.id)
    }

    /// Every class that appears at test time.
    pub fn test_class_ids(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self
            .known_class_ids
            .iter()
            .chain(&self.unknown_class_ids)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }
}

/// Known classes of the five benchmark missions, in mission order.
pub const BENCHMARK_KNOWN: [&[u32]; 5] =
    [&[2], &[2, 3], &[0, 1, 2], &[2, 3, 4, 5], &[0, 1, 2, 4, 5]];
/// Published openness of the five benchmark missions, rounded to 4 decimals.
pub const BENCHMARK_OPENNESS: [f64; 5] = [0.5918, 0.4226, 0.2929, 0.1835, 0.0871];

/// A mission over classes `0..n_classes` with the given known set; every other
/// class is unknown.
pub fn build_custom_mission(id: u32, known: &[u32], n_classes: usize) -> Result<Mission> {
    let mut known_ids = known.to_vec();
    known_ids.sort_unstable();
    known_ids.dedup();
    if known_ids.is_empty() {
        return Err(Error::Config(format!("mission {id} has no known classes")));
    }
    if let Some(&c) = known_ids.iter().find(|&&c| c as usize >= n_classes) {
        return Err(Error::Config(format!(
            "mission {id}: class {c} not in the dataset ({n_classes} classes)"
        )));
    }
    let unknown: Vec<u32> = (0..n_classes as u32)
        .filter(|c| !known_ids.contains(c))
        .collect();
    Ok(Mission {
        id,
        openness: openness(known_ids.len(), n_classes)?,
        known_class_ids: known_ids,
        unknown_class_ids: unknown,
    })
}

/// The five benchmark missions. Requires a six-class dataset.
pub fn build_missions(manifest: &Manifest) -> Result<Vec<Mission>> {
    let n = manifest.n_classes();
    if n != 6 {
        return Err(Error::Config(format!(
            "the benchmark missions need 6 classes, the dataset has {n}; use a custom mission"
        )));
    }
    BENCHMARK_KNOWN
        .iter()
        .zip(BENCHMARK_OPENNESS)
        .enumerate()
        .map(|(i, (known, published))| {
            let m = build_custom_mission(i as u32 + 1, known, n)?;
            if (m.openness - published).abs() >= 5e-5 {
                return Err(Error::DataIntegrity(format!(
                    "mission {} openness {} does not round to {published}",
                    m.id, m.openness
                )));
            }
            Ok(m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataFormat, CLASS_NAMES};

    fn manifest(n: usize) -> Manifest {
        Manifest::new(
            16,
            1.0,
            DataFormat::Csv,
            CLASS_NAMES.iter().take(n).map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn openness_edges() {
        assert_eq!(openness(6, 6).unwrap(), 0.0);
        assert!(openness(0, 6).is_err());
        assert!(openness(7, 6).is_err());
        for n in 1..6 {
            assert!(openness(n + 1, 6).unwrap() < openness(n, 6).unwrap());
        }
    }

    #[test]
    fn benchmark_missions() {
        let ms = build_missions(&manifest(6)).unwrap();
        assert_eq!(ms.len(), 5);
        assert_eq!(ms[3].unknown_class_ids, vec![0, 1]);
        for m in &ms {
            assert!(m
                .known_class_ids
                .iter()
                .all(|c| !m.unknown_class_ids.contains(c)));
            assert_eq!(m.test_class_ids(), (0..6).collect::<Vec<_>>());
        }
        assert!(build_missions(&manifest(5)).is_err());
    }

    #[test]
    fn custom_mission_validation() {
        assert!(build_custom_mission(1, &[], 4).is_err());
        assert!(build_custom_mission(1, &[4], 4).is_err());
        let m = build_custom_mission(7, &[3, 1, 1], 4).unwrap();
        assert_eq!(m.known_class_ids, vec![1, 3]);
        assert_eq!(m.unknown_class_ids, vec![0, 2]);
    }
}
