//! Signal ingestion: magnitude spectra and time/frequency fusion.
//!
//! A fused feature vector is the flat concatenation `[time | log-spectrum]`:
//! the first `window` samples of a record (optionally decimated) followed by
//! `log(1 + |X_k|)` over the one-sided spectrum of that window. Each of the two
//! channels is standardized with a scalar mean and scale fitted once on the
//! training split.

use std::cell::RefCell;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sensor record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f64>,
    /// Samples per second.
    pub sample_rate: f64,
    /// Class id, or `None` for unlabeled records.
    pub label: Option<u32>,
}

impl RawSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64, label: Option<u32>) -> Result<Self> {
        let signal = RawSignal {
            samples,
            sample_rate,
            label,
        };
        signal.validate()?;
        Ok(signal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::DataIntegrity("signal has no samples".into()));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::DataIntegrity(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity(format!(
                "non-finite amplitude {} at sample {i}",
                self.samples[i]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One-sided magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `|X_k|` for `k = 0..=n_fft/2`.
    pub magnitudes: Vec<f64>,
    /// Frequency spacing between bins in Hz.
    pub bin_width: f64,
    /// Transform length after zero padding.
    pub n_fft: usize,
}

impl Spectrum {
    /// `sum |X_k|^2` over the full two-sided spectrum, reconstructed from
    /// the one-sided half via conjugate symmetry.
    pub fn full_energy(&self) -> f64 {
        let half = self.n_fft / 2;
        self.magnitudes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let w = if k == 0 || (k == half && self.n_fft.is_multiple_of(2)) {
                    1.0
                } else {
                    2.0
                };
                w * m * m
            })
            .sum()
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Full complex DFT of `samples` zero-padded to the next power of two.
pub fn padded_spectrum(samples: &[f64]) -> Vec<Complex64> {
    let n = samples.len().next_power_of_two().max(1);
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);
    buf
}

/// One-sided magnitude spectrum of a record, zero-padded to a power of two.
pub fn fft_magnitude(signal: &RawSignal) -> Result<Spectrum> {
    signal.validate()?;
    if signal.len() < 2 {
        return Err(Error::DataIntegrity(format!(
            "spectrum needs at least 2 samples, got {}",
            signal.len()
        )));
    }
    Ok(magnitude_unchecked(&signal.samples, signal.sample_rate))
}

fn magnitude_unchecked(samples: &[f64], sample_rate: f64) -> Spectrum {
    let full = padded_spectrum(samples);
    let n_fft = full.len();
    Spectrum {
        magnitudes: full[..=n_fft / 2].iter().map(|c| c.norm()).collect(),
        bin_width: sample_rate / n_fft as f64,
        n_fft,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Leading samples of each record that enter the model.
    pub window: usize,
    /// Keep every `time_decimation`-th sample of the window on the time channel.
    pub time_decimation: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            window: 4096,
            time_decimation: 1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!(
                "fusion window must be >= 2, got {}",
                self.window
            )));
        }
        if self.time_decimation == 0 || self.time_decimation > self.window {
            return Err(Error::Config(format!(
                "time decimation must be in 1..={}, got {}",
                self.window, self.time_decimation
            )));
        }
        Ok(())
    }

    pub fn time_len(&self) -> usize {
        self.window.div_ceil(self.time_decimation)
    }

    pub fn freq_len(&self) -> usize {
        self.window.next_power_of_two() / 2 + 1
    }

    pub fn dim(&self) -> usize {
        self.time_len() + self.freq_len()
    }
}

/// Unstandardized time and log-magnitude channels of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChannels {
    pub time: Vec<f64>,
    pub freq: Vec<f64>,
    pub label: Option<u32>,
}

pub fn extract_channels(signal: &RawSignal, cfg: &FusionConfig) -> Result<RawChannels> {
    cfg.validate()?;
    signal.validate()?;
    if signal.len() < cfg.window {
        return Err(Error::Config(format!(
            "fusion window {} is longer than the signal ({} samples)",
            cfg.window,
            signal.len()
        )));
    }
    let window = &signal.samples[..cfg.window];
    let time = window
        .iter()
        .step_by(cfg.time_decimation)
        .copied()
        .collect();
    let freq = magnitude_unchecked(window, signal.sample_rate)
        .magnitudes
        .into_iter()
        .map(f64::ln_1p)
        .collect();
    Ok(RawChannels {
        time,
        freq,
        label: signal.label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub scale: f64,
}

impl ChannelStats {
    /// Population mean and standard deviation over every value of every record.
    /// A zero-variance channel gets scale 1.
    fn fit<'a>(values: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let (sum, count) = values.clone().fold((0.0, 0usize), |(s, c), v| {
            (s + v.iter().sum::<f64>(), c + v.len())
        });
        let mean = sum / count as f64;
        let ss: f64 = values
            .map(|v| v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>())
            .sum();
        let sd = (ss / count as f64).sqrt();
        let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        ChannelStats { mean, scale }
    }

    #[inline]
    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

/// Per-channel standardization statistics, frozen after fitting on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub time: ChannelStats,
    pub freq: ChannelStats,
}

impl Standardizer {
    pub fn fit(channels: &[RawChannels]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Insufficient(
                "cannot fit standardization on an empty split".into(),
            ));
        }
        Ok(Standardizer {
            time: ChannelStats::fit(channels.iter().map(|c| c.time.as_slice())),
            freq: ChannelStats::fit(channels.iter().map(|c| c.freq.as_slice())),
        })
    }

    pub fn apply(&self, channels: &RawChannels) -> FusedSample {
        let features = channels
            .time
            .iter()
            .map(|&v| self.time.apply(v))
            .chain(channels.freq.iter().map(|&v| self.freq.apply(v)))
            .collect();
        FusedSample {
            features,
            time_len: channels.time.len(),
            label: channels.label,
            standardization: *self,
        }
    }
}

/// Model-ready feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSample {
    pub features: Vec<f64>,
    /// Number of leading entries that belong to the time channel.
    pub time_len: usize,
    pub label: Option<u32>,
    pub standardization: Standardizer,
}

impl FusedSample {
    pub fn time_channel(&self) -> &[f64] {
        &self.features[..self.time_len]
    }

    pub fn freq_channel(&self) -> &[f64] {
        &self.features[self.time_len..]
    }
}

pub fn fuse_time_frequency(
    signal: &RawSignal,
    cfg: &FusionConfig,
    standardizer: &Standardizer,
) -> Result<FusedSample> {
    Ok(standardizer.apply(&extract_channels(signal, cfg)?))
}

/// Fusion config plus frozen statistics: everything needed to turn raw records
/// into encoder inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub fusion: FusionConfig,
    pub standardizer: Standardizer,
}

impl FeaturePipeline {
    pub fn fit(fusion: FusionConfig, train: &[RawSignal]) -> Result<Self> {
        let channels = train
            .iter()
            .map(|s| extract_channels(s, &fusion))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeaturePipeline {
            fusion,
            standardizer: Standardizer::fit(&channels)?,
        })
    }

    pub fn fuse(&self, signal: &RawSignal) -> Result<FusedSample> {
        fuse_time_frequency(signal, &self.fusion, &self.standardizer)
    }

    /// Feature matrix `[n x dim]` in input order.
    pub fn transform(&self, signals: &[RawSignal]) -> Result<Array2<f64>> {
        let dim = self.fusion.dim();
        let mut out = Array2::zeros((signals.len(), dim));
        for (mut row, s) in out.rows_mut().into_iter().zip(signals) {
            let fused = self.fuse(s)?;
            row.iter_mut().zip(fused.features).for_each(|(d, v)| *d = v);
        }
        Ok(out)
    }
}
