use proptest::prelude::*;
use vrident::preprocess::{encode, quat_delta, to_body_relative, Encoding, FeatureFrame, MotionFrame, Pose, Quat};

fn quat() -> impl Strategy<Value = Quat> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.05)
        .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalized().unwrap())
}

/// Rounds to a 2^-20 m grid, where sums with 2^-10 m offsets are exact.
fn f32v(v: f64) -> f64 {
    (v * 1048576.0).round() / 1048576.0
}

/// A pseudo-random session with grid-aligned positions.
fn session(seed: &[f64], n: usize) -> Vec<MotionFrame> {
    (0..n)
        .map(|i| {
            let s = |k: usize| seed[(i * 7 + k) % seed.len()];
            let pos = |o: f64, k: usize| [f32v(o + 0.1 * s(k)), f32v(1.6 + 0.1 * s(k + 1)), f32v(0.3 * s(k + 2))];
            let q = |k: usize| Quat::from_axis_angle([s(k), 1.0, s(k + 1)], 0.5 * s(k + 2));
            MotionFrame {
                t: i as f64 / 15.0,
                hmd: Pose::new(pos(0.0, 0), Quat::from_axis_angle([0.0, 1.0, 0.0], 2.0 * s(3)).mul(&Quat::from_axis_angle([1.0, 0.0, 0.0], 0.3 * s(4)))).unwrap(),
                left: Pose::new(pos(-0.2, 1), q(2)).unwrap(),
                right: Pose::new(pos(0.2, 3), q(5)).unwrap(),
            }
        })
        .collect()
}

fn pos_channels(seq: &[FeatureFrame]) -> Vec<f64> {
    seq.iter()
        .flat_map(|f| FeatureFrame::positional_channels().map(|c| f.values[c]).collect::<Vec<_>>())
        .collect()
}

fn encoded(frames: &[MotionFrame], enc: Encoding) -> Vec<FeatureFrame> {
    let br: Vec<FeatureFrame> = frames.iter().map(to_body_relative).collect();
    encode(&br, enc).unwrap().frames
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_composes(a in quat(), b in quat(), c in quat()) {
        let ab = quat_delta(&a, &b).unwrap();
        let bc = quat_delta(&b, &c).unwrap();
        let ac = quat_delta(&a, &c).unwrap();
        let composed = bc.mul(&ab).canonical();
        prop_assert!(composed.dot(&ac).abs() > 1.0 - 1e-12);
    }

    #[test]
    fn encoded_quaternions_are_unit(seed in prop::collection::vec(-1.0f64..1.0, 50), enc in prop::sample::select(Encoding::ALL.to_vec())) {
        for f in encoded(&session(&seed, 20), enc) {
            for q in f.quaternions() {
                prop_assert!((q.norm() - 1.0).abs() < 1e-12);
                prop_assert!(q.w >= 0.0);
            }
        }
    }

    #[test]
    fn derivatives_ignore_constant_offsets(
        grid in prop::collection::vec(-(1i64 << 21)..(1i64 << 21), 30 * 6),
        off in prop::collection::vec(-(1i64 << 12)..(1i64 << 12), 6),
        seed in prop::collection::vec(-1.0f64..1.0, 50),
    ) {
        // positions on a 2^-20 m grid and offsets on a 2^-10 m grid add exactly
        let mut frames: Vec<FeatureFrame> = session(&seed, 30).iter().map(to_body_relative).collect();
        for (i, f) in frames.iter_mut().enumerate() {
            for (j, c) in FeatureFrame::positional_channels().enumerate() {
                f.values[c] = grid[i * 6 + j] as f64 / (1u64 << 20) as f64;
            }
        }
        let moved: Vec<FeatureFrame> = frames
            .iter()
            .map(|f| {
                let mut g = f.clone();
                for (j, c) in FeatureFrame::positional_channels().enumerate() {
                    g.values[c] += off[j] as f64 / 1024.0;
                }
                g
            })
            .collect();
        for enc in [Encoding::Brv, Encoding::Bra] {
            prop_assert_eq!(
                pos_channels(&encode(&frames, enc).unwrap().frames),
                pos_channels(&encode(&moved, enc).unwrap().frames)
            );
        }
    }

    #[test]
    fn room_translation_leaves_features_unchanged(
        seed in prop::collection::vec(-1.0f64..1.0, 50),
        off in (-4096i64..4096, -1024i64..1024, -4096i64..4096),
    ) {
        let d = [off.0 as f64 / 1024.0, off.1 as f64 / 1024.0, off.2 as f64 / 1024.0];
        let base = session(&seed, 30);
        let moved: Vec<MotionFrame> = base
            .iter()
            .map(|m| {
                let mv = |p: Pose| Pose { position: [p.position[0] + d[0], p.position[1] + d[1], p.position[2] + d[2]], orientation: p.orientation };
                MotionFrame { t: m.t, hmd: mv(m.hmd), left: mv(m.left), right: mv(m.right) }
            })
            .collect();
        for enc in Encoding::ALL {
            prop_assert_eq!(encoded(&base, enc), encoded(&moved, enc));
        }
    }

    #[test]
    fn acceleration_ignores_linear_drift(
        seed in prop::collection::vec(-1.0f64..1.0, 50),
        rate in prop::collection::vec(-0.5f64..0.5, 6),
        start in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let frames: Vec<FeatureFrame> = session(&seed, 40).iter().map(to_body_relative).collect();
        let moved: Vec<FeatureFrame> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let t = i as f64 / 15.0;
                let mut g = f.clone();
                for (j, c) in FeatureFrame::positional_channels().enumerate() {
                    g.values[c] += start[j] + rate[j] * t;
                }
                g
            })
            .collect();
        let a = pos_channels(&encode(&frames, Encoding::Bra).unwrap().frames);
        let b = pos_channels(&encode(&moved, Encoding::Bra).unwrap().frames);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }
}

#[test]
fn constant_pose_encodes_to_zero_motion() {
    let pose = |x: f64| Pose::new([x, 1.5, 0.25], Quat::from_axis_angle([0.3, 1.0, -0.2], 0.7)).unwrap();
    let frames: Vec<MotionFrame> = (0..12)
        .map(|i| MotionFrame {
            t: i as f64,
            hmd: Pose::new([0.0, 1.7, 0.0], Quat::from_axis_angle([0.0, 1.0, 0.0], 1.2)).unwrap(),
            left: pose(-0.25),
            right: pose(0.25),
        })
        .collect();
    for enc in [Encoding::Brv, Encoding::Bra] {
        for f in encoded(&frames, enc) {
            for c in FeatureFrame::positional_channels() {
                assert_eq!(f.values[c], 0.0);
            }
            for q in f.quaternions() {
                assert_eq!((q.w, q.x, q.y, q.z), (1.0, 0.0, 0.0, 0.0));
            }
            // sin and cos of a zero angle change
            assert_eq!(&f.values[14..18], &[0.0, 1.0, 0.0, 1.0]);
        }
    }
}
