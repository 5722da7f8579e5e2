use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::model::DvecModel;
use super::train::LabeledSet;
use crate::error::{Error, Result};

/// Latent class centers and distance samples per known class, indexed by
/// classifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub known_class_ids: Vec<u32>,
    /// Mean latent code of the correctly classified training samples.
    pub centers: Vec<Vec<f64>>,
    /// Distances of those same training samples to their center.
    pub train_distances: Vec<Vec<f64>>,
    /// Distances of validation samples (grouped by true class) to their class center.
    pub val_distances: Vec<Vec<f64>>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean of the latents whose prediction matches the label, per class.
pub fn class_centers(
    latents: ArrayView2<'_, f64>,
    labels: &[usize],
    predicted: &[usize],
    n_classes: usize,
    class_ids: &[u32],
) -> Result<Vec<Vec<f64>>> {
    let dim = latents.ncols();
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for ((row, &y), &p) in latents.rows().into_iter().zip(labels).zip(predicted) {
        if y == p {
            counts[y] += 1;
            sums[y].iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(k, (s, c))| {
            if c == 0 {
                Err(Error::Insufficient(format!(
                    "class {} has no correctly classified training samples",
                    class_ids.get(k).copied().unwrap_or(k as u32)
                )))
            } else {
                Ok(s.into_iter().map(|v| v / c as f64).collect())
            }
        })
        .collect()
}

pub fn extract_class_stats(
    model: &DvecModel,
    train: &LabeledSet,
    val: &LabeledSet,
) -> Result<ClassStats> {
    let k = model.n_classes();
    let tr = model.predict(train.x.view())?;
    let tr_pred = tr.argmax();
    let centers = class_centers(tr.mu.view(), &train.y, &tr_pred, k, &model.known_class_ids)?;

    let mut train_distances = vec![Vec::new(); k];
    for ((row, &y), &p) in tr.mu.rows().into_iter().zip(&train.y).zip(&tr_pred) {
        if y == p {
            train_distances[y].push(euclidean(row.as_slice().unwrap(), &centers[y]));
        }
    }
    let va = model.predict(val.x.view())?;
    let mut val_distances = vec![Vec::new(); k];
    for (row, &y) in va.mu.rows().into_iter().zip(&val.y) {
        val_distances[y].push(euclidean(row.as_slice().unwrap(), &centers[y]));
    }
    Ok(ClassStats {
        known_class_ids: model.known_class_ids.clone(),
        centers,
        train_distances,
        val_distances,
    })
}
