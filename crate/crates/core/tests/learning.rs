use moralframe::dsl::{compile, DEFAULT_PROGRAM};
use moralframe::kb::PriorScores;
use moralframe::learning::{
    count_violations, evaluate, fit, predict, split_validation, task_metrics, Algorithm, InferenceConfig, TrainConfig,
};
use moralframe::synthetic::{generate, SyntheticConfig};
use proptest::prelude::*;

fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
    v.iter().map(|(g, p)| (g.to_string(), p.to_string())).collect()
}

#[test]
fn metrics_match_hand_computation() {
    // gold a a a b b c ; pred a a b b c c
    let m = task_metrics(
        &pairs(&[("a", "a"), ("a", "a"), ("a", "b"), ("b", "b"), ("b", "c"), ("c", "c")]),
        &["a", "b", "c"],
    );
    let f1 = |p: f64, r: f64| 2.0 * p * r / (p + r);
    let fa = f1(1.0, 2.0 / 3.0);
    let fb = f1(0.5, 0.5);
    let fc = f1(0.5, 1.0);
    assert!((m.macro_f1 - (fa + fb + fc) / 3.0).abs() < 1e-12);
    assert!((m.weighted_f1 - (3.0 * fa + 2.0 * fb + fc) / 6.0).abs() < 1e-12);
    assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-12);
    assert_eq!(
        m.per_class.iter().map(|c| c.label.as_str()).collect::<Vec<_>>(),
        ["a", "b", "c"]
    );
}

#[test]
fn labels_outside_the_order_are_appended_sorted() {
    let m = task_metrics(&pairs(&[("z", "y"), ("a", "a")]), &["a"]);
    let labels: Vec<_> = m.per_class.iter().map(|c| c.label.clone()).collect();
    assert_eq!(labels, ["a", "y", "z"]);
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_range(v in prop::collection::vec((0u8..4, 0u8..4), 1..60)) {
        let p: Vec<(String, String)> = v.iter().map(|(g, q)| (g.to_string(), q.to_string())).collect();
        let m = task_metrics(&p, &["0", "1", "2", "3"]);
        for x in [m.macro_f1, m.weighted_f1, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let perfect = v.iter().all(|(g, q)| g == q);
        prop_assert_eq!(m.accuracy == 1.0, perfect);
    }

    #[test]
    fn validation_split_is_a_partition(fraction in 0.0f64..0.9, seed in any::<u64>()) {
        let corpus = generate(&SyntheticConfig { tweets: 40, ..SyntheticConfig::default() }).unwrap();
        let (train, val) = split_validation(&corpus, fraction, seed);
        prop_assert_eq!(train.len() + val.len(), 40);
        prop_assert!(val.iter().all(|i| train.binary_search(i).is_err()));
    }
}

#[test]
fn local_training_generalizes_on_separable_data() {
    let program = compile(DEFAULT_PROGRAM).unwrap();
    let train = generate(&SyntheticConfig::separable(60, 1)).unwrap();
    let test = generate(&SyntheticConfig::separable(30, 2)).unwrap();
    let cfg = TrainConfig {
        algorithm: Algorithm::LocalOnly,
        epochs: 10,
        ..TrainConfig::default()
    };
    let inf = InferenceConfig::default();
    let model = fit(&program, &train, &PriorScores::default(), None, &cfg, &inf).unwrap();
    let out = predict(&program, Some(&model.params), &test, &PriorScores::default(), &inf).unwrap();
    let ev = evaluate(&out.predictions);
    assert!(ev.mf.accuracy > 0.9, "mf accuracy {}", ev.mf.accuracy);
    assert!(ev.role.accuracy > 0.8, "role accuracy {}", ev.role.accuracy);
    let v = count_violations(&out.predictions);
    assert_eq!((v.role_mf, v.polarity), (0, 0));
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let program = compile(DEFAULT_PROGRAM).unwrap();
    let corpus = generate(&SyntheticConfig {
        tweets: 30,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        algorithm: Algorithm::PerceptronMle,
        epochs: 3,
        ..TrainConfig::default()
    };
    let inf = InferenceConfig::default();
    let a = fit(&program, &corpus, &PriorScores::default(), None, &cfg, &inf).unwrap();
    let b = fit(&program, &corpus, &PriorScores::default(), None, &cfg, &inf).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.report, b.report);
}

#[test]
fn invalid_train_config_is_rejected() {
    for bad in [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}
