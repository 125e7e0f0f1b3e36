//! Seeded generator of two-session motion recordings for desk-scale runs.
//!
//! Each user has a private motion style: three phase-jittered oscillators
//! shared by both hands with user-specific phase offsets per axis (bimanual
//! coordination), orientation walks that slerp towards random targets, and
//! head pitch/yaw habits. Frequencies and amplitudes stay close to values
//! shared by the whole population.
//! Controller motion is generated in the head's yaw frame and then placed in
//! the room. Session 2 perturbs every trait slightly.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::SessionRecording;
use crate::error::{Error, Result};
use crate::preprocess::{MotionFrame, Pose, Quat};

/// Slowly accumulating controller displacement added to session 2, in the
/// head's yaw frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Drift {
    /// Constant displacement magnitude, metres.
    pub offset: f64,
    /// Drift speed, metres per second.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub minutes_per_session: f64,
    pub seed: u64,
    /// 15 or 90.
    pub rate_hz: u32,
    /// Positional sensor noise, metres.
    pub noise_std: f64,
    /// Relative size of the session-to-session change of each trait.
    pub session_shift: f64,
    pub drift: Option<Drift>,
}

impl SynthConfig {
    pub fn new(n_users: usize, minutes_per_session: f64, seed: u64) -> Self {
        SynthConfig {
            n_users,
            minutes_per_session,
            seed,
            rate_hz: 15,
            noise_std: 5e-4,
            session_shift: 0.03,
            drift: None,
        }
    }
}

/// Generates sessions 1 and 2 for users `0..n_users`, in that order.
pub fn synth_users(cfg: &SynthConfig) -> Result<Vec<SessionRecording>> {
    if cfg.n_users < 2 {
        return Err(Error::Config(format!("synthetic data needs at least 2 users, got {}", cfg.n_users)));
    }
    if !(cfg.minutes_per_session.is_finite() && cfg.minutes_per_session > 0.0) {
        return Err(Error::Config(format!("minutes per session must be positive, got {}", cfg.minutes_per_session)));
    }
    if cfg.rate_hz != 15 && cfg.rate_hz != 90 {
        return Err(Error::Config(format!("synthetic rate must be 15 or 90 Hz, got {}", cfg.rate_hz)));
    }
    if cfg.noise_std < 0.0 || cfg.session_shift < 0.0 {
        return Err(Error::Config("noise and session shift must be non-negative".into()));
    }
    let pop = Population::draw(&mut ChaCha8Rng::seed_from_u64(subseed(&[cfg.seed, u64::MAX])));
    let mut out = Vec::with_capacity(2 * cfg.n_users);
    for user in 0..cfg.n_users as u32 {
        let traits = Traits::draw(&pop, &mut ChaCha8Rng::seed_from_u64(subseed(&[cfg.seed, user as u64, 0])));
        for session in 1..=2u8 {
            out.push(synth_session(cfg, user, session, &traits)?);
        }
    }
    Ok(out)
}

/// Generates one session. Depends only on `(cfg, user, session)`.
fn synth_session(cfg: &SynthConfig, user: u32, session: u8, traits: &Traits) -> Result<SessionRecording> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(&[cfg.seed, user as u64, session as u64]));
    let tr = if session == 1 {
        traits.clone()
    } else {
        traits.perturbed(cfg.session_shift, &mut rng)
    };
    let drift = match (session, cfg.drift) {
        (2, Some(d)) => {
            let dir = |rng: &mut ChaCha8Rng| -> [f64; 3] { UnitSphere.sample(rng) };
            Some([(dir(&mut rng), dir(&mut rng)), (dir(&mut rng), dir(&mut rng))].map(|(o, r)| (o.map(|v| v * d.offset), r.map(|v| v * d.rate))))
        }
        _ => None,
    };
    let n = (cfg.minutes_per_session * 60.0 * cfg.rate_hz as f64).round() as usize;
    let dt = 1.0 / cfg.rate_hz as f64;
    // noise processes are specified per 15 Hz frame
    let jitter_scale = (dt * 15.0).sqrt();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut phase: Vec<f64> = (0..OSC).map(|_| rng.random_range(0.0..TAU)).collect();
    let mut env = [0.0; OSC];
    let env_decay = (-dt / 10.0).exp();
    let mut q = tr.rot_base;
    let mut target = tr.rot_base;
    let mut yaw = rng.random_range(-PI..PI);
    let head_phase = rng.random_range(0.0..TAU);
    let mut room = [0.0, tr.height, 0.0];
    let mut frames = Vec::with_capacity(n);

    for i in 0..n {
        let t = i as f64 * dt;
        for k in 0..OSC {
            phase[k] += TAU * tr.freq[k] * dt + tr.jitter[k] * jitter_scale * unit.sample(&mut rng);
            env[k] = env_decay * env[k] + (1.0 - env_decay * env_decay).sqrt() * unit.sample(&mut rng);
        }
        let mut body = [[0.0; 3]; 2];
        for h in 0..2 {
            body[h] = tr.posture[h];
            for k in 0..OSC {
                let gain = 1.0 + 0.5 * env[k];
                for ax in 0..3 {
                    body[h][ax] += gain * tr.amp[h][k][ax] * (phase[k] + tr.axis_phase[h][k][ax]).sin();
                }
            }
            if let Some(d) = &drift {
                for ax in 0..3 {
                    body[h][ax] += d[h].0[ax] + d[h].1[ax] * t;
                }
            }
        }
        for h in 0..2 {
            if rng.random_bool((dt / tr.retarget_s).min(1.0)) {
                let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                let ang = rng.random_range(0.0..tr.rot_spread);
                target[h] = tr.rot_base[h].mul(&Quat::from_axis_angle(axis, ang));
            }
            let gap = 2.0 * q[h].dot(&target[h]).abs().min(1.0).acos();
            if gap > 1e-9 {
                q[h] = q[h].slerp(&target[h], (tr.rot_speed * dt / gap).min(1.0));
            }
        }
        yaw += tr.yaw_walk * jitter_scale * unit.sample(&mut rng);
        let pitch = tr.pitch_mean + tr.pitch_amp * (TAU * tr.pitch_freq * t + head_phase).sin();
        room[0] += 0.002 * jitter_scale * unit.sample(&mut rng);
        room[2] += 0.002 * jitter_scale * unit.sample(&mut rng);

        let q_yaw = Quat::from_axis_angle([0.0, 1.0, 0.0], yaw);
        let hmd_q = q_yaw
            .mul(&Quat::from_axis_angle([1.0, 0.0, 0.0], pitch))
            .mul(&Quat::from_axis_angle([0.0, 0.0, 1.0], tr.roll));
        let pose_of = |p: [f64; 3], q: Quat, rng: &mut ChaCha8Rng| -> Result<Pose> {
            let mut pos = p;
            for v in &mut pos {
                *v = f32_round(*v + cfg.noise_std * unit.sample(rng));
            }
            let qn = Quat::new(
                f32_round(q.w + 1e-3 * unit.sample(rng)),
                f32_round(q.x + 1e-3 * unit.sample(rng)),
                f32_round(q.y + 1e-3 * unit.sample(rng)),
                f32_round(q.z + 1e-3 * unit.sample(rng)),
            );
            Pose::new(pos, qn)
        };
        let hmd = pose_of(room, hmd_q, &mut rng)?;
        let mut hands = [hmd; 2];
        for h in 0..2 {
            let r = q_yaw.rotate(body[h]);
            let world = [room[0] + r[0], room[1] + r[1], room[2] + r[2]];
            hands[h] = pose_of(world, q_yaw.mul(&q[h]), &mut rng)?;
        }
        frames.push(MotionFrame {
            t,
            hmd,
            left: hands[0],
            right: hands[1],
        });
    }
    Ok(SessionRecording {
        user_id: user,
        session_id: session,
        rate_hz: cfg.rate_hz,
        frames,
    })
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// SplitMix64 over the parts, giving independent streams per (seed, user,
/// session).
fn subseed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const OSC: usize = 3;

/// Motion statistics shared by every user of a dataset. Users deviate from
/// these only slightly, so per-channel marginals carry little identity; the
/// identity lives mostly in per-axis phase relations.
#[derive(Clone, Debug, PartialEq)]
struct Population {
    freq: [f64; OSC],
    amp: [[[f64; 3]; OSC]; 2],
}

impl Population {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut amp = [[[0.0; 3]; OSC]; 2];
        for hand in &mut amp {
            for a in hand.iter_mut() {
                *a = [0, 1, 2].map(|_| rng.random_range(0.015..0.05));
            }
        }
        Population {
            freq: [rng.random_range(0.3..0.6), rng.random_range(0.7..1.1), rng.random_range(1.3..1.8)],
            amp,
        }
    }
}

/// Relative spread of user traits around the population values.
const USER_SPREAD: f64 = 0.12;
/// Oscillator frequencies vary less: acceleration scales with their square.
const FREQ_SPREAD: f64 = 0.03;

/// A user's motion style.
#[derive(Clone, Debug, PartialEq)]
pub struct Traits {
    posture: [[f64; 3]; 2],
    freq: [f64; OSC],
    jitter: [f64; OSC],
    amp: [[[f64; 3]; OSC]; 2],
    /// Phase of each oscillator on each axis of each hand.
    axis_phase: [[[f64; 3]; OSC]; 2],
    rot_base: [Quat; 2],
    rot_speed: f64,
    rot_spread: f64,
    retarget_s: f64,
    yaw_walk: f64,
    pitch_mean: f64,
    pitch_amp: f64,
    pitch_freq: f64,
    roll: f64,
    height: f64,
}

impl Traits {
    fn draw(pop: &Population, rng: &mut ChaCha8Rng) -> Self {
        let n = |rng: &mut ChaCha8Rng, s: f64| Normal::new(0.0, s).expect("std").sample(rng);
        let near = |rng: &mut ChaCha8Rng, x: f64| x * (1.0 + n(rng, USER_SPREAD));
        let amp = pop.amp.map(|h| h.map(|a| a.map(|v| near(rng, v))));
        let axis_phase = [0, 1].map(|_| [0; OSC].map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..TAU))));
        let rot_base = [0, 1].map(|_| {
            let axis: [f64; 3] = UnitSphere.sample(rng);
            Quat::from_axis_angle(axis, rng.random_range(0.0..0.6))
        });
        Traits {
            posture: [
                [-0.2 + n(rng, 0.03), -0.35 + n(rng, 0.03), 0.3 + n(rng, 0.03)],
                [0.2 + n(rng, 0.03), -0.35 + n(rng, 0.03), 0.3 + n(rng, 0.03)],
            ],
            freq: pop.freq.map(|f| f * (1.0 + n(rng, FREQ_SPREAD))),
            jitter: [0; OSC].map(|_| near(rng, 0.03)),
            amp,
            axis_phase,
            rot_base,
            rot_speed: near(rng, 0.8),
            rot_spread: near(rng, 0.5),
            retarget_s: near(rng, 2.5),
            yaw_walk: near(rng, 0.015),
            pitch_mean: 0.1 + n(rng, 0.1),
            pitch_amp: near(rng, 0.05),
            pitch_freq: near(rng, 0.1),
            roll: n(rng, 0.03),
            height: rng.random_range(1.5..1.9),
        }
    }

    fn perturbed(&self, s: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut n = |x: f64| x * (1.0 + s * Normal::new(0.0, 1.0).expect("std").sample(rng));
        let mut t = self.clone();
        t.jitter = t.jitter.map(&mut n);
        t.amp = t.amp.map(|h| h.map(|a| a.map(&mut n)));
        t.rot_speed = n(t.rot_speed);
        t.rot_spread = n(t.rot_spread);
        t.retarget_s = n(t.retarget_s);
        t.yaw_walk = n(t.yaw_walk);
        t.pitch_amp = n(t.pitch_amp);
        let mut a = |x: f64, scale: f64| x + s * scale * Normal::new(0.0, 1.0).expect("std").sample(rng);
        t.freq = t.freq.map(|f| f * (1.0 + a(0.0, FREQ_SPREAD)));
        t.posture = t.posture.map(|p| p.map(|v| a(v, 0.2)));
        t.axis_phase = t.axis_phase.map(|h| h.map(|k| k.map(|v| a(v, 1.0))));
        t.pitch_mean = a(t.pitch_mean, 0.5);
        t
    }
}
