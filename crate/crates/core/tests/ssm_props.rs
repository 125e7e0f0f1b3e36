use proptest::prelude::*;
use vrident::numerics::Tensor;
use vrident::oracles::{cast_system, oracle_recurrence, random_signal, random_system, OracleResult};
use vrident::ssm::{discretize_zoh, rollout, s4d_apply, s5_scan, Coupling, ScanMode};

fn rows(u: &Tensor<f64>) -> Vec<Vec<f64>> {
    u.data().chunks(u.shape()[1]).map(|r| r.to_vec()).collect()
}

fn max_diff<T: vrident::numerics::Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x.f() - y.f()).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_matches_stepping(half in 1usize..=32, h in 1usize..=4, l in 1usize..=512, seed in any::<u64>()) {
        let p = random_system(Coupling::PerChannel, 2 * half, h, seed);
        let u = random_signal(l, h, seed ^ 1);
        let d64 = max_diff(&rollout(&p, &u).unwrap(), &s4d_apply(&p, &u).unwrap());
        prop_assert!(d64 < 1e-9, "f64 diff {d64:e}");
        let (p32, u32) = (cast_system::<f32>(&p), u.cast::<f32>());
        let d32 = max_diff(&rollout(&p32, &u32).unwrap(), &s4d_apply(&p32, &u32).unwrap());
        prop_assert!(d32 < 1e-4, "f32 diff {d32:e}");
    }

    #[test]
    fn tree_scan_matches_sequential(half in 1usize..=16, h in 1usize..=6, l in 1usize..=512, seed in any::<u64>()) {
        let p = cast_system::<f32>(&random_system(Coupling::Mimo, 2 * half, h, seed));
        let u = random_signal(l, h, seed ^ 2).cast::<f32>();
        let sys = discretize_zoh(&p).unwrap();
        let tree = s5_scan(&sys, &p.c_re, &p.c_im, &p.d, &u, ScanMode::Tree).unwrap();
        let seq = s5_scan(&sys, &p.c_re, &p.c_im, &p.d, &u, ScanMode::Sequential).unwrap();
        let d = max_diff(&tree, &seq);
        prop_assert!(d < 1e-4, "diff {d:e}");
    }

    #[test]
    fn scan_matches_recurrence_oracle(half in 1usize..=8, h in 1usize..=4, l in 1usize..=128, seed in any::<u64>()) {
        let p = random_system(Coupling::Mimo, 2 * half, h, seed);
        let u = random_signal(l, h, seed ^ 3);
        let sys = discretize_zoh(&p).unwrap();
        let fast = s5_scan(&sys, &p.c_re, &p.c_im, &p.d, &u, ScanMode::Tree).unwrap();
        let want: Vec<f64> = oracle_recurrence(&p, &rows(&u)).concat();
        let r = OracleResult::compare(want, fast.data(), 1e-9);
        prop_assert!(r.passed(), "diff {:e}", r.max_abs_diff);
    }

    #[test]
    fn stepping_matches_recurrence_oracle(half in 1usize..=8, h in 1usize..=4, l in 1usize..=64, seed in any::<u64>()) {
        let p = random_system(Coupling::PerChannel, 2 * half, h, seed);
        let u = random_signal(l, h, seed ^ 4);
        let want: Vec<f64> = oracle_recurrence(&p, &rows(&u)).concat();
        let r = OracleResult::compare(want, rollout(&p, &u).unwrap().data(), 1e-9);
        prop_assert!(r.passed(), "diff {:e}", r.max_abs_diff);
    }
}

#[test]
fn zero_input_gives_zero_output() {
    for coupling in [Coupling::PerChannel, Coupling::Mimo] {
        let p = random_system(coupling, 8, 3, 5);
        let u = Tensor::<f64>::zeros(&[40, 3]);
        assert!(rollout(&p, &u).unwrap().data().iter().all(|&v| v == 0.0));
        if coupling == Coupling::PerChannel {
            assert!(s4d_apply(&p, &u).unwrap().data().iter().all(|&v| v.abs() < 1e-15));
        }
    }
}

#[test]
fn length_one_sequences_agree() {
    let p = random_system(Coupling::PerChannel, 4, 2, 11);
    let u = random_signal(1, 2, 12);
    let a = rollout(&p, &u).unwrap();
    let b = s4d_apply(&p, &u).unwrap();
    assert!(max_diff(&a, &b) < 1e-12);
    let q = random_system(Coupling::Mimo, 4, 2, 13);
    let sys = discretize_zoh(&q).unwrap();
    for mode in [ScanMode::Tree, ScanMode::Sequential] {
        let y = s5_scan(&sys, &q.c_re, &q.c_im, &q.d, &u, mode).unwrap();
        let want = oracle_recurrence(&q, &rows(&u)).concat();
        assert!(OracleResult::compare(want, y.data(), 1e-12).passed());
    }
}

#[test]
fn wrong_coupling_is_rejected() {
    let p = random_system(Coupling::PerChannel, 4, 2, 1);
    let sys = discretize_zoh(&p).unwrap();
    let u = random_signal(5, 2, 2);
    assert!(s5_scan(&sys, &p.c_re, &p.c_im, &p.d, &u, ScanMode::Tree).is_err());
}
