use osdiag::dataset::{decode_records, encode_records, DataFormat, Dataset, Manifest, CLASS_NAMES};
use osdiag::signal::{fft_magnitude, RawSignal, Spectrum};
use osdiag::synth::{
    generate_dataset, generate_record, generate_splits, split_indices, split_sizes,
    GeneratorConfig, N_CLASSES,
};
use proptest::prelude::*;

fn manifest(record_length: usize, format: DataFormat) -> Manifest {
    Manifest::new(
        record_length,
        1000.0,
        format,
        CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}

fn records(len: usize) -> impl Strategy<Value = Vec<RawSignal>> {
    let one = (
        prop::option::of(0..N_CLASSES),
        prop::collection::vec(-1e6f32..1e6, len),
    )
        .prop_map(|(label, v)| {
            RawSignal::new(v.into_iter().map(f64::from).collect(), 1000.0, label).unwrap()
        });
    prop::collection::vec(one, 0..8)
}

proptest! {
    #[test]
    fn both_formats_round_trip(recs in (1usize..40).prop_flat_map(records), bin in any::<bool>()) {
        let fmt = if bin { DataFormat::Bin } else { DataFormat::Csv };
        let len = recs.first().map_or(1, |r| r.len());
        let m = manifest(len, fmt);
        let bytes = encode_records(&recs, fmt, &m, "train").unwrap();
        prop_assert_eq!(decode_records(&bytes, fmt, &m, "train").unwrap(), recs);
    }

    #[test]
    fn split_indices_partition_each_class(seed in any::<u64>(), class in 0..N_CLASSES, n in 1usize..300) {
        let [train, val, test] = split_indices(seed, class, n);
        prop_assert_eq!((train.len(), val.len(), test.len()), split_sizes(n));
        let mut all: Vec<u64> = [train, val, test].concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n as u64).collect::<Vec<_>>());
    }
}

#[test]
fn written_dataset_loads_back_identically() {
    let cfg = GeneratorConfig {
        records_per_class: 10,
        record_length: 256,
        ..GeneratorConfig::default()
    };
    let expected = generate_splits(&cfg).unwrap();
    for fmt in [DataFormat::Csv, DataFormat::Bin] {
        let dir = tempfile::tempdir().unwrap();
        let written = generate_dataset(&cfg, dir.path(), fmt).unwrap();
        assert_eq!(written.manifest.seed, Some(cfg.seed));
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!([loaded.train, loaded.val, loaded.test], expected);
    }
}

#[test]
fn generation_depends_on_seed() {
    let a = GeneratorConfig::default();
    let b = GeneratorConfig {
        seed: 43,
        ..a.clone()
    };
    for class in 0..N_CLASSES {
        assert_ne!(
            generate_record(class, 0, &a).unwrap(),
            generate_record(class, 0, &b).unwrap()
        );
    }
}

fn band_fraction(s: &Spectrum, lo: f64, hi: f64) -> f64 {
    let power = |k: usize| s.magnitudes[k] * s.magnitudes[k];
    let band: f64 = (0..s.magnitudes.len())
        .filter(|&k| (lo..=hi).contains(&s.frequency(k)))
        .map(power)
        .sum();
    band / (0..s.magnitudes.len()).map(power).sum::<f64>()
}

fn peak_frequency(s: &Spectrum) -> f64 {
    let k = (1..s.magnitudes.len())
        .max_by(|&a, &b| s.magnitudes[a].total_cmp(&s.magnitudes[b]))
        .unwrap();
    s.frequency(k)
}

fn kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn each_class_carries_its_signature() {
    let cfg = GeneratorConfig::default();
    for i in 0..10 {
        let rec = |c| generate_record(c, i, &cfg).unwrap();
        let spec = |c| fft_magnitude(&rec(c)).unwrap();

        let noise = rec(0);
        assert!(
            (rms(&noise.samples) / cfg.noise.floor - 1.0).abs() < 0.3,
            "noise floor"
        );
        assert!(kurtosis(&noise.samples) < 3.5);
        assert!(
            band_fraction(&spec(0), 0.0, 12_500.0) > 0.6,
            "noise is low-pass"
        );

        assert!(kurtosis(&rec(1).samples) > 6.0, "spikes are impulsive");

        let jam = peak_frequency(&spec(2));
        assert!(
            (jam - cfg.jam.band_center_hz).abs() < 700.0,
            "jam peak at {jam}"
        );

        let impact = peak_frequency(&spec(3));
        assert!(
            (cfg.impact.carrier_low_hz - 300.0..=cfg.impact.carrier_high_hz + 300.0)
                .contains(&impact),
            "impact peak at {impact}"
        );

        assert!(
            band_fraction(&spec(4), 0.0, 5_000.0) > 0.8,
            "hydraulic energy is low-frequency"
        );

        let chirp = band_fraction(
            &spec(5),
            cfg.self_check.chirp_start_hz,
            cfg.self_check.chirp_end_hz,
        );
        assert!(chirp > 0.8, "chirp band fraction {chirp}");
    }
}
