use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrident::dataset::{Source, Window, WINDOW};
use vrident::evaluation::sample_accuracy;
use vrident::models::{Model, ModelConfig, ModelKind, Param};
use vrident::numerics::Tensor;
use vrident::preprocess::CHANNELS;
use vrident::training::{adam_step, fit, AdamState, EarlyStopping, TrainConfig, TrainLog};

fn windows(n: usize, seed: u64) -> Vec<Window> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let data = (0..WINDOW * CHANNELS)
                .map(|k| {
                    let shift = if k % CHANNELS == label { 0.4 } else { 0.0 };
                    shift + rng.random_range(-1.0f32..1.0)
                })
                .collect();
            Window {
                features: Tensor::new(&[WINDOW, CHANNELS], data).unwrap(),
                label,
                source: Source {
                    user_id: label as u32,
                    session_id: 1,
                    start: i * WINDOW,
                },
            }
        })
        .collect()
}

fn tiny(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        depth: 1,
        state: 4,
        heads: 2,
        ..ModelConfig::bench(kind)
    }
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_epochs: epochs,
        lr: 3e-3,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn without_times(log: &TrainLog) -> Vec<(usize, f64, f64)> {
    log.epochs.iter().map(|e| (e.epoch, e.loss, e.val_acc)).collect()
}

fn weights(n: usize, seed: u64) -> Vec<Param<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![Param {
        name: "w".into(),
        value: Tensor::new(&[n], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        trainable: true,
    }]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_gradients_give_same_updates(history in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..20)) {
        let cfg = TrainConfig::default();
        let (mut a, mut b) = (weights(6, 3), weights(6, 3));
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        for g in &history {
            let g = vec![Tensor::new(&[6], g.clone()).unwrap()];
            adam_step(&mut a, &g, &mut sa, &cfg).unwrap();
            adam_step(&mut b, &g, &mut sb, &cfg).unwrap();
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn a_step_descends_a_quadratic(target in prop::collection::vec(-3.0f64..3.0, 5), seed in any::<u64>()) {
        let mut w = weights(5, seed);
        let loss = |w: &[Param<f64>]| w[0].value.data().iter().zip(&target).map(|(x, t)| (x - t).powi(2)).sum::<f64>();
        let before = loss(&w);
        prop_assume!(before > 1e-4);
        let grad: Vec<f64> = w[0].value.data().iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &[Tensor::new(&[5], grad).unwrap()], &mut state, &TrainConfig::default()).unwrap();
        prop_assert!(loss(&w) < before);
    }

    #[test]
    fn improving_accuracy_never_stops(start in 0.0f64..0.5, steps in prop::collection::vec(1e-6f64..0.01, 1..80), patience in 1usize..6) {
        let mut es = EarlyStopping::new(patience);
        let mut acc = start;
        for (i, s) in steps.iter().enumerate() {
            acc += s;
            let (improved, stop) = es.update(i + 1, acc);
            prop_assert!(improved && !stop);
        }
        prop_assert_eq!(es.best_epoch(), steps.len());
    }
}

#[test]
fn fitting_twice_is_reproducible() {
    let (train, val) = (windows(12, 1), windows(6, 2));
    for kind in [ModelKind::Cnn, ModelKind::Gru, ModelKind::S5] {
        let run = || {
            let mut m = Model::<f64>::new(tiny(kind), 2, 4).unwrap();
            let log = fit(&mut m, &train, &val, &cfg(3)).unwrap();
            (m.to_bytes(), without_times(&log))
        };
        assert_eq!(run(), run(), "{kind}");
    }
}

#[test]
fn fit_keeps_the_best_epoch() {
    let (train, val) = (windows(16, 5), windows(8, 6));
    let mut m = Model::<f64>::new(tiny(ModelKind::Mlp), 2, 0).unwrap();
    let log = fit(&mut m, &train, &val, &cfg(8)).unwrap();
    let best = log.best_val_acc().unwrap();
    assert!(log.epochs.iter().all(|e| e.val_acc <= best));
    assert!(log.epochs.iter().filter(|e| e.val_acc == best).all(|e| e.epoch >= log.best_epoch));
    let scores = m.predict_windows(&val, 4).unwrap();
    let labels: Vec<usize> = val.iter().map(|w| w.label).collect();
    assert_eq!(sample_accuracy(&scores, &labels).unwrap(), best);
    let csv = log.to_csv();
    assert!(csv.starts_with("epoch,loss,val_acc,seconds\n"));
    assert_eq!(csv.lines().count(), log.epochs.len() + 1);
}

#[test]
fn fit_rejects_bad_inputs() {
    let w = windows(4, 0);
    let mut m = Model::<f32>::new(tiny(ModelKind::Cnn), 2, 0).unwrap();
    assert!(fit(&mut m, &w, &[], &cfg(1)).is_err());
    assert!(Model::<f32>::new(tiny(ModelKind::Cnn), 1, 0).is_err());
    let mut three = w.clone();
    three[0].label = 2;
    assert!(fit(&mut m, &three, &w, &cfg(1)).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..cfg(1)
    };
    assert!(fit(&mut m, &w, &w, &bad).is_err());
}
