use osdiag::signal::{fft_magnitude, padded_spectrum, FeaturePipeline, FusionConfig, RawSignal};
use osdiag::synth::{generate_record, GeneratorConfig, N_CLASSES};
use proptest::prelude::*;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

/// Direct O(N^2) evaluation of the DFT definition.
fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| {
                    let angle = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    Complex64::new(v * angle.cos(), v * angle.sin())
                })
                .sum()
        })
        .collect()
}

fn samples(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, 2..max_len)
}

proptest! {
    #[test]
    fn fft_matches_direct_dft(x in samples(300)) {
        let fast = padded_spectrum(&x);
        let mut padded = x.clone();
        padded.resize(fast.len(), 0.0);
        let slow = naive_dft(&padded);
        let scale: f64 = x.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).norm() <= 1e-9 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn parseval_holds(x in samples(3000)) {
        let s = fft_magnitude(&RawSignal::new(x.clone(), 1000.0, None).unwrap()).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq = s.full_energy() / s.n_fft as f64;
        prop_assert!((time - freq).abs() <= 1e-9 * time.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn transform_is_linear(
        pair in (2usize..200).prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(-10.0..10.0f64, n))),
        a in -5.0..5.0f64,
        b in -5.0..5.0f64,
    ) {
        let (x, y) = pair;
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (fx, fy, fm) = (padded_spectrum(&x), padded_spectrum(&y), padded_spectrum(&mix));
        for ((p, q), m) in fx.iter().zip(&fy).zip(&fm) {
            let expect = p * a + q * b;
            prop_assert!((m - expect).norm() <= 1e-9 * (1.0 + expect.norm()) * x.len() as f64);
        }
    }
}

#[test]
fn bin_width_follows_padded_length() {
    let s = fft_magnitude(&RawSignal::new(vec![0.5; 5000], 50_000.0, None).unwrap()).unwrap();
    assert_eq!(s.n_fft, 8192);
    assert_eq!(s.magnitudes.len(), 4097);
    assert!((s.bin_width - 50_000.0 / 8192.0).abs() < 1e-12);
    assert!((s.frequency(4096) - 25_000.0).abs() < 1e-9);
}

#[test]
fn fitted_channels_are_standardized_on_training_data() {
    let gen = GeneratorConfig::default();
    let train: Vec<RawSignal> = (0..N_CLASSES)
        .flat_map(|c| (0..4).map(move |i| (c, i)))
        .map(|(c, i)| generate_record(c, i, &gen).unwrap())
        .collect();
    let fusion = FusionConfig {
        window: 1024,
        time_decimation: 2,
    };
    let p = FeaturePipeline::fit(fusion, &train).unwrap();
    let x = p.transform(&train).unwrap();
    assert_eq!(x.ncols(), fusion.dim());
    let (t, f) = x.view().split_at(ndarray::Axis(1), fusion.time_len());
    for block in [t, f] {
        let n = block.len() as f64;
        let mean = block.sum() / n;
        let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-9, "variance {var}");
    }
}

#[test]
fn fused_sample_keeps_channel_order_and_label() {
    let gen = GeneratorConfig::default();
    let rec = generate_record(2, 0, &gen).unwrap();
    let fusion = FusionConfig {
        window: 512,
        time_decimation: 4,
    };
    let p = FeaturePipeline::fit(fusion, std::slice::from_ref(&rec)).unwrap();
    let fused = p.fuse(&rec).unwrap();
    assert_eq!(fused.label, Some(2));
    assert_eq!(fused.time_channel().len(), 128);
    assert_eq!(fused.freq_channel().len(), 257);
    let s = p.standardizer.time;
    assert!((fused.time_channel()[1] - (rec.samples[4] - s.mean) / s.scale).abs() < 1e-12);
}
