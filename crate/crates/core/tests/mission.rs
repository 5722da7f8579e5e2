use osdiag::discriminators::Policy;
use osdiag::dvec::TrainConfig;
use osdiag::mission::{
    build_custom_mission, openness, run_mission, score, sweep, CellOutcome, MissionConfig, Splits,
    UNKNOWN_LABEL,
};
use osdiag::signal::FusionConfig;
use osdiag::synth::{generate_splits, GeneratorConfig, N_CLASSES};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn openness_is_a_fraction_that_falls_with_more_known_classes(train in 1usize..50, extra in 0usize..50) {
        let test = train + extra;
        let o = openness(train, test).unwrap();
        prop_assert!((0.0..1.0).contains(&o));
        prop_assert_eq!(o == 0.0, extra == 0);
        if train < test {
            prop_assert!(openness(train + 1, test).unwrap() < o);
        }
    }

    #[test]
    fn scores_are_consistent(
        known in prop::sample::subsequence((0..N_CLASSES).collect::<Vec<_>>(), 1..6),
        cases in prop::collection::vec((0..N_CLASSES, 0..=N_CLASSES), 1..200),
    ) {
        // Prediction N_CLASSES stands for UNKNOWN; others are mapped onto the known set.
        let predictions: Vec<Option<u32>> = cases
            .iter()
            .map(|&(_, p)| (p < N_CLASSES).then(|| known[p as usize % known.len()]))
            .collect();
        let truths: Vec<u32> = cases.iter().map(|&(t, _)| t).collect();
        let s = score(&predictions, &truths, &known).unwrap();
        prop_assert_eq!(s.total, truths.len());
        prop_assert_eq!(s.confusion.iter().flatten().sum::<usize>(), truths.len());
        prop_assert_eq!(s.labels.last().map(String::as_str), Some(UNKNOWN_LABEL));
        prop_assert!((0.0..=1.0).contains(&s.a0));
        if let (Some(acc), Some(rej)) = (s.known_accuracy, s.false_unknown_rate) {
            prop_assert!(acc + rej <= 1.0 + 1e-12);
        }
        let all_unknown = vec![None; truths.len()];
        let u = score(&all_unknown, &truths, &known).unwrap();
        prop_assert_eq!(u.unknown_detection_rate.unwrap_or(1.0), 1.0);
    }
}

#[test]
fn uniform_guessing_scores_one_over_k_plus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let known = [0, 1, 2];
    let n = 40_000;
    let truths: Vec<u32> = (0..n).map(|_| rng.random_range(0..N_CLASSES)).collect();
    let predictions: Vec<Option<u32>> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..=known.len());
            known.get(i).copied()
        })
        .collect();
    let s = score(&predictions, &truths, &known).unwrap();
    assert!((s.a0 - 0.25).abs() < 0.01, "A0 {}", s.a0);
}

fn small_setup() -> (GeneratorConfig, MissionConfig) {
    let gen = GeneratorConfig {
        records_per_class: 30,
        record_length: 1024,
        ..GeneratorConfig::default()
    };
    let cfg = MissionConfig {
        fusion: FusionConfig {
            window: 1024,
            time_decimation: 2,
        },
        train: TrainConfig {
            epochs: 6,
            hidden: vec![32],
            latent_dim: 4,
            ..TrainConfig::default()
        },
        ..MissionConfig::default()
    };
    (gen, cfg)
}

#[test]
fn mission_report_covers_the_test_split() {
    let (gen, cfg) = small_setup();
    let [train, val, test] = generate_splits(&gen).unwrap();
    let splits = Splits {
        train: &train,
        val: &val,
        test: &test,
    };
    let m = build_custom_mission(9, &[2, 5], 6).unwrap();
    let a = run_mission(&m, splits, &cfg, Policy::Evt).unwrap();
    let b = run_mission(&m, splits, &cfg, Policy::Evt).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.scores.total, test.len());
    assert_eq!(a.seed, cfg.mission_seed(9));
    assert_eq!(a.scores.labels, ["2", "5", UNKNOWN_LABEL]);
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let (gen, cfg) = small_setup();
    let [train, val, test] = generate_splits(&gen).unwrap();
    let splits = Splits {
        train: &train,
        val: &val,
        test: &test,
    };
    let missions = vec![
        build_custom_mission(1, &[2], 6).unwrap(),
        build_custom_mission(2, &[2, 3], 6).unwrap(),
    ];
    let policies = vec!["evt".to_string(), "entropy".to_string()];
    let one = sweep(&missions, splits, &policies, &cfg, 1).unwrap();
    let two = sweep(&missions, splits, &policies, &cfg, 2).unwrap();
    assert_eq!(one, two);
    assert!(matches!(
        one.cell(1, "entropy").unwrap().outcome,
        CellOutcome::NotApplicable { .. }
    ));
    assert!(matches!(
        one.cell(2, "entropy").unwrap().outcome,
        CellOutcome::Ok { .. }
    ));
    let csv = one.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("entropy,/,"), "{csv}");
}
