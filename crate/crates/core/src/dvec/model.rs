use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Activation, DenseLayer, ParamSet, ParamTensor, Tape};

/// Layer widths of an encoder-classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DvecArch {
    pub input_dim: usize,
    /// Deterministic relu stack below the stochastic layer.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Number of known classes the classifier separates.
    pub n_classes: usize,
}

impl DvecArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.n_classes == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    fn top_width(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

/// Encoder with mean and log-variance heads, plus a linear softmax classifier
/// over the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct DvecModel {
    pub arch: DvecArch,
    pub trunk: Vec<DenseLayer>,
    pub mu_head: DenseLayer,
    pub logvar_head: DenseLayer,
    pub classifier: DenseLayer,
    /// Dataset label of each classifier output, in output order.
    pub known_class_ids: Vec<u32>,
}

/// How the latent sample is drawn.
pub enum EncodeMode<'a, R: Rng> {
    /// `z = mu`.
    Eval,
    /// `z = mu + sigma * eps` with `eps` drawn from the given stream.
    Train(&'a mut R),
}

/// Latent Gaussian parameters and the drawn code for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    /// `sigma^2 = exp(logvar)`.
    pub var: Array2<f64>,
    pub eps: Array2<f64>,
    pub z: Array2<f64>,
}

pub(crate) fn check_finite(a: &Array2<f64>, layer: &str) -> Result<()> {
    match a.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            layer: layer.to_string(),
            batch: 0,
            message: format!(
                "activation {} of {:?} is {}",
                i,
                a.dim(),
                a.iter().nth(i).unwrap()
            ),
        }),
    }
}

impl DvecModel {
    pub fn new<R: Rng>(arch: DvecArch, known_class_ids: Vec<u32>, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if known_class_ids.len() != arch.n_classes {
            return Err(Error::Config(format!(
                "{} known class ids for {} classifier outputs",
                known_class_ids.len(),
                arch.n_classes
            )));
        }
        let mut trunk = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.input_dim;
        for (i, &h) in arch.hidden.iter().enumerate() {
            trunk.push(DenseLayer::new(
                &format!("enc{i}"),
                width,
                h,
                Activation::Relu,
                rng,
            )?);
            width = h;
        }
        let mu_head = DenseLayer::new("mu", width, arch.latent_dim, Activation::Identity, rng)?;
        let logvar_head =
            DenseLayer::new("logvar", width, arch.latent_dim, Activation::Identity, rng)?;
        let classifier = DenseLayer::new(
            "cls",
            arch.latent_dim,
            arch.n_classes,
            Activation::Identity,
            rng,
        )?;
        Ok(DvecModel {
            arch,
            trunk,
            mu_head,
            logvar_head,
            classifier,
            known_class_ids,
        })
    }

    /// Rebuilds a model from tensors in `params()` order.
    pub fn from_params(
        arch: DvecArch,
        known_class_ids: Vec<u32>,
        params: Vec<ParamTensor>,
    ) -> Result<Self> {
        arch.validate()?;
        let expected = 2 * (arch.hidden.len() + 3);
        if params.len() != expected {
            return Err(Error::shape("parameter list", expected, params.len()));
        }
        let mut it = params.into_iter();
        let mut layer = |act: Activation, out: usize, inp: usize| -> Result<DenseLayer> {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != [out, inp] {
                return Err(Error::shape(
                    w.name().to_string(),
                    format!("[{out}, {inp}]"),
                    format!("{:?}", w.shape()),
                ));
            }
            DenseLayer::from_parts(w, b, act)
        };
        let mut trunk = Vec::new();
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            trunk.push(layer(Activation::Relu, h, width)?);
            width = h;
        }
        let top = arch.top_width();
        let mu_head = layer(Activation::Identity, arch.latent_dim, top)?;
        let logvar_head = layer(Activation::Identity, arch.latent_dim, top)?;
        let classifier = layer(Activation::Identity, arch.n_classes, arch.latent_dim)?;
        Ok(DvecModel {
            arch,
            trunk,
            mu_head,
            logvar_head,
            classifier,
            known_class_ids,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    /// Classifier output index of a dataset label.
    pub fn class_index(&self, label: u32) -> Option<usize> {
        self.known_class_ids.iter().position(|&c| c == label)
    }

    pub(crate) fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::shape(
                "encoder input",
                self.arch.input_dim,
                x.ncols(),
            ));
        }
        Ok(())
    }

    /// Runs the encoder on a batch `[n, input_dim]`.
    pub fn encode<R: Rng>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: EncodeMode<'_, R>,
    ) -> Result<Latent> {
        self.check_input(&x)?;
        let mut tape = Tape::new();
        let h = tape.forward(&self.trunk, x)?;
        let (_, mu) = self.mu_head.forward(h.view())?;
        let (_, logvar) = self.logvar_head.forward(h.view())?;
        check_finite(&mu, "mu")?;
        check_finite(&logvar, "logvar")?;
        let var = logvar.mapv(f64::exp);
        check_finite(&var, "logvar")?;
        let eps = match mode {
            EncodeMode::Eval => Array2::zeros(mu.dim()),
            EncodeMode::Train(rng) => {
                Array2::from_shape_simple_fn(mu.dim(), || rng.sample(StandardNormal))
            }
        };
        let z = &mu + &(&logvar.mapv(|lv| (0.5 * lv).exp()) * &eps);
        Ok(Latent {
            mu,
            logvar,
            var,
            eps,
            z,
        })
    }

    /// Deterministic latent means.
    pub fn encode_mean(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self
            .encode::<rand_chacha::ChaCha8Rng>(x, EncodeMode::Eval)?
            .mu)
    }

    /// Softmax over known classes for latent codes `[n, latent_dim]`.
    pub fn classify_latent(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (_, logits) = self.classifier.forward(z)?;
        check_finite(&logits, "cls")?;
        Ok(softmax_rows(logits.view()))
    }

    /// Evaluation-mode latents and class probabilities, in chunks to bound memory.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Prediction> {
        self.check_input(&x)?;
        let mut mus = Vec::new();
        let mut probs = Vec::new();
        for chunk in x.axis_chunks_iter(Axis(0), 256) {
            let mu = self.encode_mean(chunk)?;
            probs.push(self.classify_latent(mu.view())?);
            mus.push(mu);
        }
        let cat = |parts: Vec<Array2<f64>>, cols: usize| -> Array2<f64> {
            if parts.is_empty() {
                return Array2::zeros((0, cols));
            }
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("consistent widths")
        };
        Ok(Prediction {
            mu: cat(mus, self.arch.latent_dim),
            probs: cat(probs, self.arch.n_classes),
        })
    }
}

/// Evaluation-mode outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mu: Array2<f64>,
    pub probs: Array2<f64>,
}

impl Prediction {
    /// Arg-max class index per row. Ties resolve to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().unwrap()))
            .collect()
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ParamSet for DvecModel {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.trunk.params();
        p.extend(self.mu_head.params());
        p.extend(self.logvar_head.params());
        p.extend(self.classifier.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.trunk.params_mut();
        p.extend(self.mu_head.params_mut());
        p.extend(self.logvar_head.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }
}
