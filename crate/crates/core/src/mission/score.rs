use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used for every class outside the known set.
pub const UNKNOWN_LABEL: &str = "UNKNOWN";

/// Anything that maps feature rows to a known class id or UNKNOWN (`None`).
pub trait OpenSetPredictor {
    fn predict_open(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Option<u32>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: u32,
    pub support: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Micro accuracy over the known labels plus UNKNOWN.
    pub a0: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// Fraction of known-class samples given their correct label.
    pub known_accuracy: Option<f64>,
    /// Recall of UNKNOWN on unknown-class samples.
    pub unknown_detection_rate: Option<f64>,
    /// Fraction of known-class samples rejected as UNKNOWN.
    pub false_unknown_rate: Option<f64>,
    /// Row and column labels of `confusion`: known ids, then UNKNOWN.
    pub labels: Vec<String>,
    /// Rows are truths, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Scores open-set predictions. Truths outside `known_ids` count as UNKNOWN.
pub fn score(predictions: &[Option<u32>], truths: &[u32], known_ids: &[u32]) -> Result<Scores> {
    if predictions.len() != truths.len() {
        return Err(Error::shape("predictions", truths.len(), predictions.len()));
    }
    if truths.is_empty() {
        return Err(Error::Insufficient("nothing to score".into()));
    }
    let k = known_ids.len();
    let index = |c: Option<u32>| -> Option<usize> {
        match c {
            None => Some(k),
            Some(c) => known_ids.iter().position(|&id| id == c),
        }
    };
    let mut confusion = vec![vec![0usize; k + 1]; k + 1];
    for (&p, &t) in predictions.iter().zip(truths) {
        let col = index(p).ok_or_else(|| {
            Error::Domain(format!(
                "prediction {p:?} is neither a known class nor UNKNOWN"
            ))
        })?;
        let row = index(Some(t)).unwrap_or(k);
        confusion[row][col] += 1;
    }
    let total = truths.len();
    let trace: usize = (0..=k).map(|i| confusion[i][i]).sum();
    let known_support: usize = confusion[..k].iter().flatten().sum();
    let known_correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let known_rejected: usize = confusion[..k].iter().map(|r| r[k]).sum();
    let unknown_support: usize = confusion[k].iter().sum();
    let per_class = known_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let support = confusion[i].iter().sum();
            ClassAccuracy {
                class_id: id,
                support,
                accuracy: ratio(confusion[i][i], support).unwrap_or(0.0),
            }
        })
        .collect();
    let mut labels: Vec<String> = known_ids.iter().map(|id| id.to_string()).collect();
    labels.push(UNKNOWN_LABEL.to_string());
    Ok(Scores {
        a0: trace as f64 / total as f64,
        per_class,
        known_accuracy: ratio(known_correct, known_support),
        unknown_detection_rate: ratio(confusion[k][k], unknown_support),
        false_unknown_rate: ratio(known_rejected, known_support),
        labels,
        confusion,
        total,
    })
}

/// Runs `predictor` on `x` and scores it against `truths`.
pub fn evaluate<P: OpenSetPredictor + ?Sized>(
    predictor: &P,
    x: ArrayView2<'_, f64>,
    truths: &[u32],
    known_ids: &[u32],
) -> Result<Scores> {
    score(&predictor.predict_open(x)?, truths, known_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        // A = 0, UNK = class 9.
        let s = score(&[Some(0), None, None, Some(0)], &[0, 0, 9, 9], &[0]).unwrap();
        assert_eq!(s.a0, 0.5);
        assert_eq!(s.unknown_detection_rate, Some(0.5));
        assert_eq!(s.false_unknown_rate, Some(0.5));
        assert_eq!(s.confusion, vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(s.labels, vec!["0", "UNKNOWN"]);
    }

    #[test]
    fn all_correct() {
        let s = score(&[Some(1), Some(2), None], &[1, 2, 5], &[1, 2]).unwrap();
        assert_eq!(s.a0, 1.0);
        for (i, row) in s.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, usize::from(i == j));
            }
        }
        assert_eq!(s.known_accuracy, Some(1.0));
    }

    #[test]
    fn rejects_foreign_prediction() {
        assert!(matches!(
            score(&[Some(3)], &[1], &[1, 2]),
            Err(Error::Domain(_))
        ));
        assert!(score(&[Some(1)], &[1, 2], &[1, 2]).is_err());
    }

    #[test]
    fn closed_set_mission_has_no_detection_rate() {
        let s = score(&[Some(1), None], &[1, 1], &[1]).unwrap();
        assert_eq!(s.unknown_detection_rate, None);
        assert_eq!(s.false_unknown_rate, Some(0.5));
    }
}
