//! Seeded synthetic stand-in for a six-category reactor vibration dataset.
//!
//! Each category has its own waveform model. The models are invented: they
//! only need to be separable from one another while sharing a comparable
//! noise floor. Every record is a pure function of `(seed, class, index)`;
//! its random stream is the ChaCha8 stream `class << 32 | index` of `seed`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DataFormat, Manifest, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::signal::RawSignal;

pub const N_CLASSES: u32 = 6;

const SPLIT_TAG: u64 = 0x0053_504c_4954;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Standard deviation of the colored noise.
    pub floor: f64,
    /// AR(1) coefficient shaping the noise spectrum.
    pub color: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeParams {
    pub noise_floor: f64,
    /// Expected impulses per second.
    pub rate_hz: f64,
    pub amplitude: f64,
    /// Decay of each impulse, in samples.
    pub decay_samples: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JamParams {
    pub noise_floor: f64,
    pub band_center_hz: f64,
    /// Per-record jitter of the band center.
    pub center_jitter_hz: f64,
    /// Spacing between the tones of the cluster.
    pub tone_spacing_hz: f64,
    pub tones: usize,
    /// Frequency drift across one record.
    pub drift_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpactParams {
    pub noise_floor: f64,
    pub max_bursts: usize,
    pub carrier_low_hz: f64,
    pub carrier_high_hz: f64,
    /// Exponential decay constant of a burst, in seconds.
    pub decay_s: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydraulicParams {
    pub noise_floor: f64,
    /// Harmonics of the pulsation, the n-th at amplitude `1/n` of the fundamental.
    pub harmonics: usize,
    pub carrier_low_hz: f64,
    pub carrier_high_hz: f64,
    pub modulation_low_hz: f64,
    pub modulation_high_hz: f64,
    pub modulation_depth: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfCheckParams {
    pub noise_floor: f64,
    pub chirp_start_hz: f64,
    pub chirp_end_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub records_per_class: usize,
    pub record_length: usize,
    pub sample_rate: f64,
    pub noise: NoiseParams,
    pub spike: SpikeParams,
    pub jam: JamParams,
    pub impact: ImpactParams,
    pub hydraulic: HydraulicParams,
    pub self_check: SelfCheckParams,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            floor: 1.0,
            color: 0.7,
        }
    }
}

impl Default for SpikeParams {
    fn default() -> Self {
        SpikeParams {
            noise_floor: 0.3,
            rate_hz: 600.0,
            amplitude: 4.0,
            decay_samples: 2.0,
        }
    }
}

impl Default for JamParams {
    fn default() -> Self {
        JamParams {
            noise_floor: 0.3,
            band_center_hz: 6000.0,
            center_jitter_hz: 300.0,
            tone_spacing_hz: 120.0,
            tones: 3,
            drift_hz: 100.0,
            amplitude: 0.6,
        }
    }
}

impl Default for ImpactParams {
    fn default() -> Self {
        ImpactParams {
            noise_floor: 0.3,
            max_bursts: 3,
            carrier_low_hz: 9000.0,
            carrier_high_hz: 12_000.0,
            decay_s: 1.5e-3,
            amplitude: 4.0,
        }
    }
}

impl Default for HydraulicParams {
    fn default() -> Self {
        HydraulicParams {
            noise_floor: 0.3,
            harmonics: 30,
            carrier_low_hz: 80.0,
            carrier_high_hz: 160.0,
            modulation_low_hz: 10.0,
            modulation_high_hz: 30.0,
            modulation_depth: 0.6,
            amplitude: 2.0,
        }
    }
}

impl Default for SelfCheckParams {
    fn default() -> Self {
        SelfCheckParams {
            noise_floor: 0.3,
            chirp_start_hz: 14_000.0,
            chirp_end_hz: 20_000.0,
            amplitude: 1.5,
        }
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            records_per_class: 100,
            record_length: 5000,
            sample_rate: 50_000.0,
            noise: NoiseParams::default(),
            spike: SpikeParams::default(),
            jam: JamParams::default(),
            impact: ImpactParams::default(),
            hydraulic: HydraulicParams::default(),
            self_check: SelfCheckParams::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be non-negative, got {v}"
        )))
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.records_per_class == 0 {
            return Err(Error::Config("records_per_class must be >= 1".into()));
        }
        if self.record_length < 2 {
            return Err(Error::Config("record_length must be >= 2".into()));
        }
        positive("sample_rate", self.sample_rate)?;
        // A zero noise floor is allowed: it yields the noiseless waveform.
        for (name, v) in [
            ("spike.noise_floor", self.spike.noise_floor),
            ("jam.noise_floor", self.jam.noise_floor),
            ("jam.center_jitter_hz", self.jam.center_jitter_hz),
            ("jam.drift_hz", self.jam.drift_hz),
            ("impact.noise_floor", self.impact.noise_floor),
            ("hydraulic.noise_floor", self.hydraulic.noise_floor),
            ("self_check.noise_floor", self.self_check.noise_floor),
        ] {
            non_negative(name, v)?;
        }
        for (name, v) in [
            ("noise.floor", self.noise.floor),
            ("spike.rate_hz", self.spike.rate_hz),
            ("spike.amplitude", self.spike.amplitude),
            ("spike.decay_samples", self.spike.decay_samples),
            ("jam.band_center_hz", self.jam.band_center_hz),
            ("jam.tone_spacing_hz", self.jam.tone_spacing_hz),
            ("jam.amplitude", self.jam.amplitude),
            ("impact.carrier_low_hz", self.impact.carrier_low_hz),
            ("impact.carrier_high_hz", self.impact.carrier_high_hz),
            ("impact.decay_s", self.impact.decay_s),
            ("impact.amplitude", self.impact.amplitude),
            ("hydraulic.carrier_low_hz", self.hydraulic.carrier_low_hz),
            ("hydraulic.carrier_high_hz", self.hydraulic.carrier_high_hz),
            (
                "hydraulic.modulation_low_hz",
                self.hydraulic.modulation_low_hz,
            ),
            (
                "hydraulic.modulation_high_hz",
                self.hydraulic.modulation_high_hz,
            ),
            (
                "hydraulic.modulation_depth",
                self.hydraulic.modulation_depth,
            ),
            ("hydraulic.amplitude", self.hydraulic.amplitude),
            ("self_check.chirp_start_hz", self.self_check.chirp_start_hz),
            ("self_check.chirp_end_hz", self.self_check.chirp_end_hz),
            ("self_check.amplitude", self.self_check.amplitude),
        ] {
            positive(name, v)?;
        }
        if !(self.noise.color < 1.0) {
            return Err(Error::Config("noise.color must be < 1".into()));
        }
        if self.jam.tones == 0 || self.impact.max_bursts == 0 || self.hydraulic.harmonics == 0 {
            return Err(Error::Config(
                "jam.tones, impact.max_bursts and hydraulic.harmonics must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn add_white_noise(x: &mut [f64], sd: f64, rng: &mut ChaCha8Rng) {
    if sd > 0.0 {
        x.iter_mut().for_each(|v| *v += sd * gaussian(rng));
    }
}

fn noise(p: &NoiseParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = (1.0 - p.color * p.color).sqrt();
    let mut prev = gaussian(rng);
    (0..n)
        .map(|_| {
            prev = p.color * prev + innov * gaussian(rng);
            p.floor * prev
        })
        .collect()
}

fn spike(p: &SpikeParams, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    add_white_noise(&mut x, p.noise_floor, rng);
    let expected = p.rate_hz * n as f64 / fs;
    let count = Poisson::new(expected)
        .map(|d| d.sample(rng) as usize)
        .unwrap_or(0)
        .max(1);
    let tail = (p.decay_samples * 8.0).ceil() as usize;
    for _ in 0..count {
        let at = rng.random_range(0..n);
        let amp = p.amplitude * rng.random_range(0.75..1.5);
        for j in 0..=tail.min(n - 1 - at) {
            x[at + j] += amp * (-(j as f64) / p.decay_samples).exp();
        }
    }
    x
}

fn jam(p: &JamParams, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let center = p.band_center_hz + p.center_jitter_hz * rng.random_range(-1.0..1.0);
    let duration = n as f64 / fs;
    let slope = p.drift_hz * rng.random_range(0.5..1.5) / duration;
    let half = (p.tones as f64 - 1.0) / 2.0;
    let tones: Vec<(f64, f64)> = (0..p.tones)
        .map(|j| {
            (
                center + (j as f64 - half) * p.tone_spacing_hz,
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            tones
                .iter()
                .map(|&(f, ph)| p.amplitude * (2.0 * PI * (f * t + 0.5 * slope * t * t) + ph).sin())
                .sum()
        })
        .collect();
    add_white_noise(&mut x, p.noise_floor, rng);
    x
}

fn impact(p: &ImpactParams, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let bursts = rng.random_range(1..=p.max_bursts);
    for _ in 0..bursts {
        let onset = rng.random_range(0..(n * 4 / 5).max(1));
        let carrier = rng.random_range(p.carrier_low_hz..=p.carrier_high_hz);
        let amp = p.amplitude * rng.random_range(0.75..1.25);
        let phase = rng.random_range(0.0..2.0 * PI);
        for (k, v) in x[onset..].iter_mut().enumerate() {
            let t = k as f64 / fs;
            *v += amp * (-t / p.decay_s).exp() * (2.0 * PI * carrier * t + phase).sin();
        }
    }
    add_white_noise(&mut x, p.noise_floor, rng);
    x
}

fn hydraulic(p: &HydraulicParams, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fc = rng.random_range(p.carrier_low_hz..=p.carrier_high_hz);
    let fm = rng.random_range(p.modulation_low_hz..=p.modulation_high_hz);
    let pm = rng.random_range(0.0..2.0 * PI);
    let phases: Vec<f64> = (0..p.harmonics)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let carrier: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, ph)| {
                    let order = (h + 1) as f64;
                    (2.0 * PI * order * fc * t + ph).sin() / order
                })
                .sum();
            p.amplitude * (1.0 + p.modulation_depth * (2.0 * PI * fm * t + pm).sin()) * carrier
        })
        .collect();
    add_white_noise(&mut x, p.noise_floor, rng);
    x
}

fn self_check(p: &SelfCheckParams, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let duration = n as f64 / fs;
    let rate = (p.chirp_end_hz - p.chirp_start_hz) / duration;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            p.amplitude * (2.0 * PI * (p.chirp_start_hz * t + 0.5 * rate * t * t)).sin()
        })
        .collect();
    add_white_noise(&mut x, p.noise_floor, rng);
    x
}

/// Record `index` of class `class_id`. Samples are rounded to `f32`
/// precision so both on-disk formats store them exactly.
pub fn generate_record(class_id: u32, index: u64, cfg: &GeneratorConfig) -> Result<RawSignal> {
    if class_id >= N_CLASSES {
        return Err(Error::Config(format!(
            "class id {class_id} out of range 0..{N_CLASSES}"
        )));
    }
    let mut rng = stream_rng(cfg.seed, ((class_id as u64) << 32) | (index & 0xFFFF_FFFF));
    let (n, fs) = (cfg.record_length, cfg.sample_rate);
    let x = match class_id {
        0 => noise(&cfg.noise, n, &mut rng),
        1 => spike(&cfg.spike, n, fs, &mut rng),
        2 => jam(&cfg.jam, n, fs, &mut rng),
        3 => impact(&cfg.impact, n, fs, &mut rng),
        4 => hydraulic(&cfg.hydraulic, n, fs, &mut rng),
        _ => self_check(&cfg.self_check, n, fs, &mut rng),
    };
    RawSignal::new(
        x.into_iter().map(|v| v as f32 as f64).collect(),
        fs,
        Some(class_id),
    )
}

/// `cfg.records_per_class` records of one class, indices `0..records_per_class`.
pub fn generate_class(class_id: u32, cfg: &GeneratorConfig) -> Result<Vec<RawSignal>> {
    cfg.validate()?;
    (0..cfg.records_per_class as u64)
        .map(|i| generate_record(class_id, i, cfg))
        .collect()
}

/// Per-class split sizes for an 8:1:1 train/val/test split.
pub fn split_sizes(records_per_class: usize) -> (usize, usize, usize) {
    let val = records_per_class / 10;
    let test = records_per_class / 10;
    (records_per_class - val - test, val, test)
}

/// Record indices of one class assigned to (train, val, test). Depends only on
/// `(seed, class_id, records_per_class)`.
pub fn split_indices(seed: u64, class_id: u32, records_per_class: usize) -> [Vec<u64>; 3] {
    let mut idx: Vec<u64> = (0..records_per_class as u64).collect();
    idx.shuffle(&mut stream_rng(
        derive_seed(seed, SPLIT_TAG),
        class_id as u64,
    ));
    let (n_train, n_val, _) = split_sizes(records_per_class);
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    [train, val, test]
}

/// In-memory train/val/test splits, class-major, ascending record index.
pub fn generate_splits(cfg: &GeneratorConfig) -> Result<[Vec<RawSignal>; 3]> {
    cfg.validate()?;
    let mut splits: [Vec<RawSignal>; 3] = Default::default();
    for class in 0..N_CLASSES {
        let assignment = split_indices(cfg.seed, class, cfg.records_per_class);
        for (split, indices) in splits.iter_mut().zip(assignment) {
            for i in indices {
                split.push(generate_record(class, i, cfg)?);
            }
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: Manifest,
    /// SHA-256 of the written manifest file.
    pub manifest_checksum: String,
}

/// Generates all splits and writes them with a manifest into `dir`.
pub fn generate_dataset(
    cfg: &GeneratorConfig,
    dir: &Path,
    format: DataFormat,
) -> Result<GeneratedDataset> {
    let splits = generate_splits(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::new(
        cfg.record_length,
        cfg.sample_rate,
        format,
        CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    );
    manifest.seed = Some(cfg.seed);
    let provenance = toml::Table::try_from(cfg).map_err(|e| Error::Format(e.to_string()))?;
    let mut table = toml::Table::new();
    table.insert("generator".into(), toml::Value::Table(provenance));
    table.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
    manifest.provenance = Some(table);
    for (name, records) in ["train", "val", "test"].into_iter().zip(&splits) {
        let entry = dataset::write_split(dir, name, records, &manifest)?;
        manifest.splits.push(entry);
    }
    let manifest_checksum = manifest.write(dir)?;
    Ok(GeneratedDataset {
        manifest,
        manifest_checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::fft_magnitude;

    #[test]
    fn records_are_deterministic() {
        let cfg = GeneratorConfig::default();
        for class in 0..N_CLASSES {
            let a = generate_record(class, 7, &cfg).unwrap();
            let b = generate_record(class, 7, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 5000);
            let c = generate_record(class, 8, &cfg).unwrap();
            assert_ne!(a.samples, c.samples);
        }
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let cfg = GeneratorConfig::default();
        assert!(generate_class(6, &cfg).is_err());
    }

    #[test]
    fn noiseless_chirp_frequency_rises() {
        let mut cfg = GeneratorConfig::default();
        cfg.self_check.noise_floor = 0.0;
        let rec = generate_record(5, 0, &cfg).unwrap();
        let seg = 500;
        let peaks: Vec<usize> = rec
            .samples
            .chunks(seg)
            .map(|c| {
                let s = RawSignal::new(c.to_vec(), cfg.sample_rate, None).unwrap();
                let m = fft_magnitude(&s).unwrap().magnitudes;
                (0..m.len()).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap()
            })
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] > w[0]), "{peaks:?}");
        // Noiseless chirps do not depend on the record stream at all.
        let other = generate_record(5, 1, &cfg).unwrap();
        assert_eq!(rec.samples, other.samples);
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(100), (80, 10, 10));
        let [tr, va, te] = split_indices(42, 3, 100);
        let mut all: Vec<u64> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(42, 3, 100), [tr, va, te]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = GeneratorConfig {
            records_per_class: 0,
            ..GeneratorConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = GeneratorConfig::default();
        cfg.impact.decay_s = -1.0;
        assert!(cfg.validate().is_err());
    }
}
