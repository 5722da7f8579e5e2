use serde::{Deserialize, Serialize};

use super::{check_alpha, nearest_rank};
use crate::dvec::ClassStats;
use crate::error::{Error, Result};

/// Smallest number of points a tail fit accepts.
pub const MIN_TAIL_POINTS: usize = 20;
const SHAPE_TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullFit {
    /// Location.
    pub tau: f64,
    /// Shape.
    pub kappa: f64,
    /// Scale.
    pub gamma: f64,
}

/// Fits a three-parameter Weibull to the upper tail of `distances`.
///
/// The tail is the largest `ceil(tail_fraction * n)` values, at least
/// [`MIN_TAIL_POINTS`]. The location sits just below the tail minimum and the
/// shape and scale are maximum-likelihood estimates for the shifted tail.
pub fn fit_weibull(distances: &[f64], tail_fraction: f64) -> Result<WeibullFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "tail_fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let n = distances.len();
    if n < MIN_TAIL_POINTS {
        return Err(Error::Insufficient(format!(
            "Weibull fit needs at least {MIN_TAIL_POINTS} distances, got {n}"
        )));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::Domain(format!(
            "distances must be finite and >= 0, got {d}"
        )));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let take = ((tail_fraction * n as f64).ceil() as usize).clamp(MIN_TAIL_POINTS, n);
    let tail = &sorted[n - take..];
    let (lo, hi) = (tail[0], tail[take - 1]);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Insufficient(
            "tail distances have zero variance".into(),
        ));
    }
    let tau = lo - 1e-6 * range;
    // Work on x / max(x) so powers stay in [0, 1]; the shape is unaffected and
    // the scale is multiplied back at the end.
    let scale = hi - tau;
    let x: Vec<f64> = tail.iter().map(|d| (d - tau) / scale).collect();
    let kappa = solve_shape(&x)?;
    let mean_pow = x.iter().map(|v| v.powf(kappa)).sum::<f64>() / x.len() as f64;
    let gamma = scale * mean_pow.powf(1.0 / kappa);
    Ok(WeibullFit { tau, kappa, gamma })
}

/// Root of the profile-likelihood shape equation
/// `sum x^k ln x / sum x^k - 1/k - mean(ln x) = 0`, which is increasing in `k`.
fn solve_shape(x: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / n;
    // Returns (g, g').
    let eval = |k: f64| -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let p = (k * l).exp();
            s0 += p;
            s1 += p * l;
            s2 += p * l * l;
        }
        let r = s1 / s0;
        (r - 1.0 / k - mean_log, s2 / s0 - r * r + 1.0 / (k * k))
    };

    let (mut lo, mut hi) = (1e-3, 1.0);
    while eval(lo).0 > 0.0 {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::Domain(
                "Weibull shape equation has no positive root".into(),
            ));
        }
    }
    while eval(hi).0 < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Domain("Weibull shape diverged".into()));
        }
    }
    let mut k = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        let (g, dg) = eval(k);
        if g > 0.0 {
            hi = k;
        } else {
            lo = k;
        }
        let newton = k - g / dg;
        let next = if newton > lo && newton < hi && dg > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - k).abs() < SHAPE_TOL {
            return Ok(next);
        }
        k = next;
    }
    Err(Error::Domain(format!(
        "Weibull shape did not converge (last estimate {k})"
    )))
}

/// `1 - exp(-(|d - tau| / gamma)^kappa)`.
pub fn weibull_outlier_prob(d: f64, fit: &WeibullFit) -> f64 {
    let t = ((d - fit.tau).abs() / fit.gamma).powf(fit.kappa);
    -(-t).exp_m1()
}

/// Outlier score used for decisions: distances inside the location score 0.
///
/// The fit only describes the tail, so a sample closer to the center than the
/// tail begins is treated as maximally typical rather than reflected onto the
/// far side of `tau`.
pub fn tail_outlier_prob(d: f64, fit: &WeibullFit) -> f64 {
    if d <= fit.tau {
        0.0
    } else {
        weibull_outlier_prob(d, fit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvtClass {
    pub class_id: u32,
    pub center: Vec<f64>,
    #[serde(flatten)]
    pub fit: WeibullFit,
    /// Outlier probability at `distance_threshold`.
    pub cdf_threshold: f64,
    /// Nearest-rank percentile of the validation distances. Decisions compare
    /// distances so that samples tied at an outlier probability of 0 (inside
    /// the location) or 1 (saturated) are still ordered.
    pub distance_threshold: f64,
}

impl EvtClass {
    /// Whether a sample at distance `d` from the center is rejected. Agrees
    /// with `tail_outlier_prob(d) > cdf_threshold` wherever the probability
    /// is strictly increasing.
    pub fn rejects(&self, d: f64) -> bool {
        d > self.distance_threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullModel {
    pub alpha: f64,
    pub tail_fraction: f64,
    /// In classifier output order.
    pub classes: Vec<EvtClass>,
}

impl WeibullModel {
    /// Outlier probability of `latent` under class `class` and whether it is rejected.
    pub fn score(&self, class: usize, latent: &[f64]) -> (f64, bool) {
        let c = &self.classes[class];
        let d = crate::dvec::euclidean(latent, &c.center);
        (tail_outlier_prob(d, &c.fit), c.rejects(d))
    }
}

/// Fits one Weibull per class on its training distances and sets each
/// threshold at the nearest-rank `(100 - alpha)` percentile of the class's
/// validation distances, equivalently of their outlier probabilities.
pub fn calibrate_evt(stats: &ClassStats, tail_fraction: f64, alpha: f64) -> Result<WeibullModel> {
    check_alpha(alpha)?;
    let classes = stats
        .known_class_ids
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let fit = fit_weibull(&stats.train_distances[k], tail_fraction)
                .map_err(|e| Error::Insufficient(format!("class {id}: {e}")))?;
            let mut dists = stats.val_distances[k].clone();
            if dists.is_empty() {
                return Err(Error::Insufficient(format!(
                    "class {id} has no validation distances"
                )));
            }
            dists.sort_by(f64::total_cmp);
            let distance_threshold = nearest_rank(&dists, alpha);
            Ok(EvtClass {
                class_id: id,
                center: stats.centers[k].clone(),
                fit,
                cdf_threshold: tail_outlier_prob(distance_threshold, &fit),
                distance_threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeibullModel {
        alpha,
        tail_fraction,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(tau: f64, kappa: f64, gamma: f64) -> WeibullFit {
        WeibullFit { tau, kappa, gamma }
    }

    #[test]
    fn outlier_prob_spot_values() {
        let f = fit(2.0, 1.7, 0.5);
        assert_eq!(weibull_outlier_prob(2.0, &f), 0.0);
        let e = 1.0 - (-1.0f64).exp();
        assert!((weibull_outlier_prob(2.5, &f) - e).abs() < 1e-12);
        assert!((weibull_outlier_prob(1.5, &f) - e).abs() < 1e-12);
        assert_eq!(tail_outlier_prob(1.5, &f), 0.0);
        assert!((tail_outlier_prob(2.5, &f) - e).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            fit_weibull(&[1.0; 19], 1.0),
            Err(Error::Insufficient(_))
        ));
        assert!(matches!(
            fit_weibull(&[3.0; 40], 1.0),
            Err(Error::Insufficient(_))
        ));
        let mut d: Vec<f64> = (0..30).map(f64::from).collect();
        assert!(fit_weibull(&d, 0.0).is_err());
        d[3] = -1.0;
        assert!(matches!(fit_weibull(&d, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tail_size_has_a_floor() {
        // 100 points with tail 0.1 still uses 20, so tau sits below the 81st value.
        let d: Vec<f64> = (0..100).map(f64::from).collect();
        let f = fit_weibull(&d, 0.1).unwrap();
        assert!(f.tau < 80.0 && f.tau > 79.99);
        let f = fit_weibull(&d, 0.5).unwrap();
        assert!(f.tau < 50.0 && f.tau > 49.99);
    }

    #[test]
    fn uniform_spacing_fits_finite_shape() {
        let d: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1).collect();
        let f = fit_weibull(&d, 1.0).unwrap();
        assert!(f.kappa > 1.0 && f.kappa < 3.0, "{f:?}");
        assert!(f.gamma > 0.0);
    }

    #[test]
    fn thresholds_order_samples_tied_at_zero_probability() {
        // Every validation distance lies inside the tail's location.
        let stats = ClassStats {
            known_class_ids: vec![4],
            centers: vec![vec![0.0]],
            train_distances: vec![(0..100).map(f64::from).collect()],
            val_distances: vec![(0..40).map(f64::from).collect()],
        };
        let m = calibrate_evt(&stats, 0.1, 5.0).unwrap();
        let c = &m.classes[0];
        assert_eq!(c.cdf_threshold, 0.0);
        assert_eq!(c.distance_threshold, 37.0);
        let flagged = stats.val_distances[0]
            .iter()
            .filter(|&&d| c.rejects(d))
            .count();
        assert_eq!(flagged, 2);
        assert_eq!(m.score(0, &[39.0]), (0.0, true));
    }
}
