use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrident::models::{Model, ModelConfig, ModelKind};
use vrident::numerics::{Graph, Tensor};
use vrident::preprocess::CHANNELS;
use vrident::training::{adam_step, AdamState, TrainConfig};

fn small(kind: ModelKind) -> ModelConfig {
    let b = ModelConfig::bench(kind);
    ModelConfig {
        hidden: 16,
        depth: 2,
        heads: 2,
        state: 8,
        dropout: 0.0,
        ..b
    }
}

fn input(b: usize, l: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[b, l, CHANNELS], (0..b * l * CHANNELS).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn representation(model: &Model<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let g = Graph::new();
    let vars = model.bind(&g);
    let r = model.representation(&g, &vars, x, None).unwrap();
    (*g.value(r)).clone()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn logits_have_batch_by_class_shape() {
    for kind in ModelKind::ALL {
        let m = Model::<f64>::new(small(kind), 5, 1).unwrap();
        for (b, l) in [(1, 1), (3, 7), (2, 40)] {
            assert_eq!(m.predict(&input(b, l, 2)).unwrap().shape(), [b, 5], "{kind} B={b} L={l}");
        }
    }
}

#[test]
fn rows_of_a_batch_are_independent() {
    for kind in ModelKind::ALL {
        let m = Model::<f64>::new(small(kind), 4, 3).unwrap();
        let one = input(1, 24, 4);
        let mut twice = one.data().to_vec();
        twice.extend_from_slice(one.data());
        let y = m.predict(&Tensor::new(&[2, 24, CHANNELS], twice).unwrap()).unwrap();
        assert_eq!(&y.data()[..4], &y.data()[4..], "{kind}");
        let alone = m.predict(&one).unwrap();
        assert!(max_diff(alone.data(), &y.data()[..4]) < 1e-12, "{kind}");
    }
}

#[test]
fn causal_models_ignore_the_future() {
    let (l, t0) = (32, 20);
    for kind in ModelKind::ALL.into_iter().filter(|k| k.is_causal()) {
        let m = Model::<f64>::new(small(kind), 3, 5).unwrap();
        let x = input(1, l, 6);
        let mut y = x.data().to_vec();
        for c in 0..CHANNELS {
            y[t0 * CHANNELS + c] += 0.5;
        }
        let a = representation(&m, &x);
        let b = representation(&m, &Tensor::new(x.shape(), y).unwrap());
        let h = m.config().hidden;
        let before = max_diff(&a.data()[..t0 * h], &b.data()[..t0 * h]);
        let at = max_diff(&a.data()[t0 * h..(t0 + 1) * h], &b.data()[t0 * h..(t0 + 1) * h]);
        assert!(before < 1e-9, "{kind}: past changed by {before:e}");
        assert!(at > 1e-6, "{kind}: perturbation had no effect");
    }
}

#[test]
fn tcn_sees_exactly_its_receptive_field() {
    let cfg = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::bench(ModelKind::Tcn)
    };
    assert_eq!((cfg.kernel, cfg.depth), (3, 4));
    let rf = cfg.receptive_field().unwrap();
    assert_eq!(rf, 31);
    let m = Model::<f64>::new(cfg, 3, 7).unwrap();
    let (l, t) = (64, 50);
    let x = input(1, l, 8);
    let h = m.config().hidden;
    let out_at = |x: &Tensor<f64>| representation(&m, x).data()[t * h..(t + 1) * h].to_vec();
    let base = out_at(&x);
    let poke = |s: usize| {
        let mut y = x.data().to_vec();
        for c in 0..CHANNELS {
            y[s * CHANNELS + c] += 1.0;
        }
        out_at(&Tensor::new(x.shape(), y).unwrap())
    };
    assert_eq!(poke(t - rf), base, "frame outside the receptive field reached the output");
    assert!(max_diff(&poke(t + 1 - rf), &base) > 1e-9, "oldest frame inside the receptive field had no effect");
}

#[test]
fn transformer_without_positions_is_order_invariant() {
    let cfg = ModelConfig {
        positional: false,
        ..small(ModelKind::Transformer)
    };
    let m = Model::<f64>::new(cfg, 3, 9).unwrap();
    let l = 17;
    let x = input(1, l, 10);
    let mut rev = Vec::with_capacity(x.numel());
    for t in (0..l).rev() {
        rev.extend_from_slice(&x.data()[t * CHANNELS..(t + 1) * CHANNELS]);
    }
    let a = m.predict(&x).unwrap();
    let b = m.predict(&Tensor::new(x.shape(), rev.clone()).unwrap()).unwrap();
    assert!(max_diff(a.data(), b.data()) < 1e-5);

    let with_pe = Model::<f64>::new(small(ModelKind::Transformer), 3, 9).unwrap();
    let a = with_pe.predict(&x).unwrap();
    let b = with_pe.predict(&Tensor::new(x.shape(), rev).unwrap()).unwrap();
    assert!(max_diff(a.data(), b.data()) > 1e-6);
}

#[test]
fn tcn_input_layer_has_1216_parameters() {
    let cfg = ModelConfig {
        hidden: 64,
        ..ModelConfig::bench(ModelKind::Tcn)
    };
    let m = Model::<f32>::new(cfg, 4, 0).unwrap();
    let n: usize = ["in.w", "in.b"].iter().map(|p| m.param(p).unwrap().value.numel()).sum();
    assert_eq!(n, 1216);
}

#[test]
fn channel_count_is_checked() {
    let m = Model::<f64>::new(small(ModelKind::Cnn), 3, 0).unwrap();
    assert!(m.predict(&Tensor::zeros(&[1, 10, CHANNELS - 1])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn parameter_count_does_not_depend_on_seed(kind in prop::sample::select(ModelKind::ALL.to_vec()), a in any::<u64>(), b in any::<u64>()) {
        let cfg = ModelConfig::bench(kind);
        prop_assert_eq!(
            Model::<f32>::new(cfg.clone(), 6, a).unwrap().param_count(),
            Model::<f32>::new(cfg, 6, b).unwrap().param_count()
        );
    }
}

/// Three classes told apart by the sign pattern of the mean over the first
/// three channels.
fn separable(n: usize, l: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * l * CHANNELS);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..3usize);
        labels.push(y);
        for _ in 0..l {
            for c in 0..CHANNELS {
                let shift = if c == y { 1.0 } else { 0.0 };
                data.push(shift + 0.3 * rng.random_range(-1.0..1.0));
            }
        }
    }
    (Tensor::new(&[n, l, CHANNELS], data).unwrap(), labels)
}

#[test]
fn every_model_learns_a_separable_task() {
    let l = 12;
    let (x_test, y_test) = separable(90, l, 99);
    let cfg = TrainConfig {
        lr: 3e-3,
        ..TrainConfig::default()
    };
    for kind in ModelKind::ALL {
        let mut m = Model::<f64>::new(small(kind), 3, 1).unwrap();
        let mut adam = AdamState::new(m.params());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 0..200 {
            let (x, y) = separable(16, l, step);
            let g = Graph::new();
            let vars = m.bind(&g);
            let logits = m.forward(&g, &vars, &x, Some(&mut rng)).unwrap();
            let loss = g.softmax_cross_entropy(logits, &y).unwrap();
            let mut grads = g.backward(loss).unwrap();
            let gs: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.take(v)).collect();
            adam_step(m.params_mut(), &gs, &mut adam, &cfg).unwrap();
        }
        let logits = m.predict(&x_test).unwrap();
        let correct = logits
            .data()
            .chunks(3)
            .zip(&y_test)
            .filter(|(r, &y)| vrident::evaluation::argmax(&r.iter().copied().collect::<Vec<_>>()) == y)
            .count();
        let acc = correct as f64 / y_test.len() as f64;
        assert!(acc > 0.95, "{kind}: accuracy {acc}");
    }
}
