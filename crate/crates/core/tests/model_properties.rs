use bofex::fcmh::{self, FcmhConfig, FcmhModel, FcmhTrainConfig};
use bofex::gbm::{self, train_with_trace, SparseMatrix, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (1usize..6).prop_flat_map(|width| {
        prop::collection::vec((prop::collection::vec(-3i8..6, width), any::<bool>()), 8..60)
            .prop_filter("both classes", |v| v.iter().any(|r| r.1) && v.iter().any(|r| !r.1))
            .prop_map(|v| {
                v.into_iter()
                    .map(|(r, l)| (r.into_iter().map(f64::from).collect::<Vec<f64>>(), l))
                    .unzip()
            })
    })
}

fn small_fcmh() -> FcmhConfig {
    FcmhConfig {
        n_features: 12,
        embed_dim: 4,
        heads: 2,
        hidden: 6,
        dropout: 0.0,
        input_scale: 0.3,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn boosting_loss_never_increases((x, y) in dataset(), depth in 1usize..4, lr in 0.05f64..1.0) {
        let cfg = TrainConfig {
            estimators: 8,
            learning_rate: lr,
            max_depth: depth,
            subsample: 1.0,
            colsample_bytree: 1.0,
            ..TrainConfig::default()
        };
        let (model, trace) = train_with_trace(&SparseMatrix::from_dense(&x).unwrap(), &y, &cfg).unwrap();
        for w in trace.losses.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", trace.losses);
        }
        let mut scored: Vec<(f64, f64)> = x
            .iter()
            .map(|r| (model.predict_logit(r).unwrap(), model.predict_proba(r).unwrap()))
            .collect();
        for &(_, p) in &scored {
            prop_assert!(p > 0.0 && p < 1.0);
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in scored.windows(2) {
            if w[0].0 < w[1].0 {
                prop_assert!(w[0].1 < w[1].1);
            } else {
                prop_assert_eq!(w[0].1, w[1].1);
            }
        }
    }

    #[test]
    fn seeded_training_is_reproducible((x, y) in dataset(), seed in any::<u64>()) {
        let cfg = TrainConfig {
            estimators: 5,
            max_depth: 3,
            subsample: 0.7,
            colsample_bytree: 0.6,
            seed,
            ..TrainConfig::default()
        };
        let m = SparseMatrix::from_dense(&x).unwrap();
        let a = gbm::train(&m, &y, &cfg).unwrap().to_json().unwrap();
        let b = gbm::train(&m, &y, &cfg).unwrap().to_json().unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn attention_importance_is_a_distribution(
        x in prop::collection::vec(prop::sample::select(vec![0.0, 0.0, 0.0, 1.0, 2.0, 7.0]), 12),
        seed in any::<u64>(),
    ) {
        let model = FcmhModel::init(small_fcmh(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let out = model.forward(&x).unwrap();
        prop_assert!(out.importance.iter().all(|&v| v >= 0.0));
        prop_assert!((out.importance.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!((out.probabilities[0] + out.probabilities[1] - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn fcmh_training_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = (0..24)
        .map(|i| {
            let mut r = vec![0.0; 12];
            r[i % 12] = 3.0;
            r[(i * 5) % 12] += rand::Rng::gen_range(&mut rng, 0.0..2.0);
            r
        })
        .collect();
    let y: Vec<bool> = (0..24).map(|i| i % 12 < 6).collect();
    let cfg = FcmhTrainConfig {
        model: FcmhConfig {
            dropout: 0.1,
            ..small_fcmh()
        },
        epochs: 3,
        batch_size: 5,
        seed: 11,
        ..FcmhTrainConfig::default()
    };
    let a = fcmh::train(&x, &y, &cfg).unwrap();
    let b = fcmh::train(&x, &y, &cfg).unwrap();
    assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
    assert_eq!(a.log, b.log);
}
