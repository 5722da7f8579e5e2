use serde::{Deserialize, Serialize};

use super::{check_alpha, nearest_rank};
use crate::dvec::argmax;
use crate::error::{Error, Result};

/// `-sum p ln p` in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Domain("entropy of an empty distribution".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Domain(format!(
            "probabilities must be finite and >= 0, got {p}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyClass {
    pub class_id: u32,
    /// Ascending.
    pub val_entropies: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyModel {
    pub alpha: f64,
    pub classes: Vec<EntropyClass>,
}

/// Groups validation softmax rows by predicted class and thresholds each
/// group at its nearest-rank `(100 - alpha)` percentile entropy.
pub fn calibrate_entropy<'a>(
    known_class_ids: &[u32],
    val_probs: impl IntoIterator<Item = &'a [f64]>,
    alpha: f64,
) -> Result<EntropyModel> {
    check_alpha(alpha)?;
    let k = known_class_ids.len();
    if k < 2 {
        return Err(Error::NotApplicable(format!(
            "entropy discriminator needs at least 2 known classes, got {k}"
        )));
    }
    let mut groups = vec![Vec::new(); k];
    for p in val_probs {
        if p.len() != k {
            return Err(Error::shape("validation probabilities", k, p.len()));
        }
        groups[argmax(p)].push(shannon_entropy(p)?);
    }
    let classes = groups
        .into_iter()
        .zip(known_class_ids)
        .map(|(mut h, &id)| {
            if h.is_empty() {
                return Err(Error::Insufficient(format!(
                    "no validation sample is predicted as class {id}"
                )));
            }
            h.sort_by(f64::total_cmp);
            Ok(EntropyClass {
                class_id: id,
                threshold: nearest_rank(&h, alpha),
                val_entropies: h,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyModel { alpha, classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(shannon_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((shannon_entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((shannon_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn malformed_distributions() {
        assert!(shannon_entropy(&[]).is_err());
        assert!(shannon_entropy(&[0.5, 0.4]).is_err());
        assert!(shannon_entropy(&[1.5, -0.5]).is_err());
        assert!(shannon_entropy(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn single_class_is_not_applicable() {
        let rows: Vec<&[f64]> = vec![&[1.0]];
        assert!(calibrate_entropy(&[2], rows, 5.0)
            .unwrap_err()
            .is_not_applicable());
    }

    #[test]
    fn constant_entropies_flag_nothing() {
        let row = [0.8, 0.2];
        let rows: Vec<&[f64]> = vec![&row; 30];
        let m = calibrate_entropy(&[0, 1], rows, 5.0);
        // Class 1 is never predicted.
        assert!(matches!(m, Err(Error::Insufficient(_))));
        let other = [0.2, 0.8];
        let rows: Vec<&[f64]> = std::iter::repeat_n(&row[..], 30)
            .chain(std::iter::repeat_n(&other[..], 30))
            .collect();
        let m = calibrate_entropy(&[0, 1], rows, 5.0).unwrap();
        let h = shannon_entropy(&row).unwrap();
        for c in &m.classes {
            assert_eq!(c.threshold, h);
            assert_eq!(
                c.val_entropies.iter().filter(|&&v| v > c.threshold).count(),
                0
            );
        }
    }
}
