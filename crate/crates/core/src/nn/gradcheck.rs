use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::param::ParamTensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Pass threshold on the absolute error, for gradients near zero.
    pub abs_tol: f64,
    /// Entries probed per parameter tensor (all entries when the tensor is smaller).
    pub probes_per_tensor: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            probes_per_tensor: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.probes.is_empty() && self.probes.iter().all(|p| p.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Probe> {
        self.probes.iter().filter(|p| !p.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.probes
            .iter()
            .filter(|p| p.abs_err > 0.0)
            .map(|p| p.rel_err)
            .fold(0.0, f64::max)
    }

    pub fn probes_for(&self, param: &str) -> usize {
        self.probes.iter().filter(|p| p.param == param).count()
    }
}

/// Compares analytic gradients against central finite differences.
///
/// `params` must return the model's parameters in a stable order. `eval`
/// computes the scalar loss; when its flag is `true` it must also accumulate
/// the analytic gradient into the (zeroed) parameter grads. The loss must be
/// a deterministic function of the parameter values.
pub fn check_gradients<M, R: Rng>(
    model: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut ParamTensor>,
    mut eval: impl FnMut(&mut M, bool) -> Result<f64>,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport> {
    params(model).into_iter().for_each(ParamTensor::zero_grad);
    eval(model, true)?;
    let analytic: Vec<Vec<f64>> = params(model).iter().map(|p| p.grad().to_vec()).collect();
    let picks: Vec<(String, Vec<usize>)> = params(model)
        .iter()
        .map(|p| {
            let k = cfg.probes_per_tensor.min(p.len());
            let mut idx = sample(rng, p.len(), k).into_vec();
            idx.sort_unstable();
            (p.name().to_string(), idx)
        })
        .collect();

    let mut report = GradCheckReport::default();
    for (t, (name, indices)) in picks.into_iter().enumerate() {
        for i in indices {
            let original = params(model)[t].values()[i];
            params(model)[t].values_mut()[i] = original + cfg.step;
            let plus = eval(model, false)?;
            params(model)[t].values_mut()[i] = original - cfg.step;
            let minus = eval(model, false)?;
            params(model)[t].values_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[t][i];
            let abs_err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
            report.probes.push(Probe {
                param: name.clone(),
                index: i,
                analytic: a,
                numeric,
                abs_err,
                rel_err,
                pass: abs_err <= cfg.abs_tol || rel_err <= cfg.rel_tol,
            });
        }
    }
    params(model).into_iter().for_each(ParamTensor::zero_grad);
    Ok(report)
}
