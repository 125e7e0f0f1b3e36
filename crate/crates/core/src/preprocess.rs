//! Raw tracked poses to body-relative feature frames and their temporal
//! encodings.
//!
//! Coordinates are y-up with +z as the head's forward axis. Yaw is the
//! rotation about +y, pitch about the head's +x (positive looks down).
//! All arithmetic is `f64`; with `f32`-representable input this makes the
//! positional differences exact, so constant offsets cancel bit-for-bit.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of channels in a feature frame.
pub const CHANNELS: usize = 18;

/// Unit quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle / 2.0).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidPose(format!("quaternion {self:?} cannot be normalised")));
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conj(&self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ rhs`. Terms are grouped so that `q ⊗ q*`
    /// yields exactly zero vector part.
    pub fn mul(&self, b: &Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
            (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
            (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
        )
    }

    /// Representative of `±q` with `w ≥ 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quat::new(0.0, v[0], v[1], v[2]);
        let r = self.mul(&p).mul(&self.conj());
        [r.x, r.y, r.z]
    }

    /// Yaw and pitch of the forward (+z) axis, in radians.
    pub fn yaw_pitch(&self) -> (f64, f64) {
        let f = self.rotate([0.0, 0.0, 1.0]);
        let yaw = f[0].atan2(f[2]);
        let pitch = (-f[1]).atan2((f[0] * f[0] + f[2] * f[2]).sqrt());
        (yaw, pitch)
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(&self, to: &Quat, t: f64) -> Quat {
        let mut d = self.dot(to);
        let mut to = *to;
        if d < 0.0 {
            d = -d;
            to = Quat::new(-to.w, -to.x, -to.y, -to.z);
        }
        let (a, b) = if d > 0.9995 {
            (1.0 - t, t)
        } else {
            let th = d.acos();
            let s = th.sin();
            (((1.0 - t) * th).sin() / s, (t * th).sin() / s)
        };
        let q = Quat::new(
            a * self.w + b * to.w,
            a * self.x + b * to.x,
            a * self.y + b * to.y,
            a * self.z + b * to.z,
        );
        q.normalized().unwrap_or(Quat::IDENTITY)
    }
}

/// Rotation taking `prev` to `next`: `next ⊗ prev*`, renormalised, `w ≥ 0`.
pub fn quat_delta(prev: &Quat, next: &Quat) -> Result<Quat> {
    let p = prev.normalized()?;
    let n = next.normalized()?;
    Ok(n.mul(&p.conj()).normalized()?.canonical())
}

/// Position (metres) and orientation of one tracked device.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: Quat,
}

impl Pose {
    /// Validates the pose and renormalises the orientation.
    pub fn new(position: [f64; 3], orientation: Quat) -> Result<Self> {
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose(format!("non-finite position {position:?}")));
        }
        Ok(Pose {
            position,
            orientation: orientation.normalized()?,
        })
    }
}

/// Head-mounted display plus two controllers at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionFrame {
    pub t: f64,
    pub hmd: Pose,
    pub left: Pose,
    pub right: Pose,
}

/// Channel layout: left controller `px py pz qx qy qz qw` (0..7), right
/// controller likewise (7..14), then head `sin pitch, cos pitch, sin yaw,
/// cos yaw` (14..18).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureFrame {
    pub values: [f64; CHANNELS],
}

const POS_BLOCKS: [usize; 2] = [0, 7];
const QUAT_BLOCKS: [usize; 2] = [3, 10];
const ANGLE_PAIRS: [usize; 2] = [14, 16];

impl FeatureFrame {
    fn quat_at(&self, i: usize) -> Quat {
        let v = &self.values;
        Quat::new(v[i + 3], v[i], v[i + 1], v[i + 2])
    }

    fn set_quat(&mut self, i: usize, q: Quat) {
        self.values[i..i + 4].copy_from_slice(&[q.x, q.y, q.z, q.w]);
    }

    fn angle_at(&self, i: usize) -> f64 {
        self.values[i].atan2(self.values[i + 1])
    }

    pub fn positional_channels() -> impl Iterator<Item = usize> {
        POS_BLOCKS.into_iter().flat_map(|b| b..b + 3)
    }

    /// Left and right controller orientation quaternions.
    pub fn quaternions(&self) -> [Quat; 2] {
        [self.quat_at(QUAT_BLOCKS[0]), self.quat_at(QUAT_BLOCKS[1])]
    }
}

/// Temporal encoding of a feature sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Encoding {
    /// Body-relative poses.
    Br,
    /// First temporal difference of `Br`.
    Brv,
    /// Second temporal difference of `Br`.
    Bra,
}

impl Encoding {
    pub const ALL: [Encoding; 3] = [Encoding::Br, Encoding::Brv, Encoding::Bra];

    /// Number of differencing passes; also the number of frames lost.
    pub fn order(self) -> usize {
        match self {
            Encoding::Br => 0,
            Encoding::Brv => 1,
            Encoding::Bra => 2,
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Br => "BR",
            Encoding::Brv => "BRV",
            Encoding::Bra => "BRA",
        })
    }
}

impl FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BR" => Ok(Encoding::Br),
            "BRV" => Ok(Encoding::Brv),
            "BRA" => Ok(Encoding::Bra),
            other => Err(Error::Config(format!("unknown encoding {other:?} (BR, BRV, BRA)"))),
        }
    }
}

/// An encoded multichannel time series.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub encoding: Encoding,
    pub frames: Vec<FeatureFrame>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Expresses both controllers in the head-centred, yaw-aligned frame.
pub fn to_body_relative(frame: &MotionFrame) -> FeatureFrame {
    let (yaw, pitch) = frame.hmd.orientation.yaw_pitch();
    let inv_yaw = Quat::from_axis_angle([0.0, 1.0, 0.0], yaw).conj();
    let mut out = FeatureFrame { values: [0.0; CHANNELS] };
    for (pose, (pb, qb)) in [frame.left, frame.right].iter().zip(POS_BLOCKS.into_iter().zip(QUAT_BLOCKS)) {
        let h = frame.hmd.position;
        let d = [pose.position[0] - h[0], pose.position[1] - h[1], pose.position[2] - h[2]];
        out.values[pb..pb + 3].copy_from_slice(&inv_yaw.rotate(d));
        out.set_quat(qb, inv_yaw.mul(&pose.orientation).canonical());
    }
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    out.values[14..18].copy_from_slice(&[sp, cp, sy, cy]);
    out
}

/// Keeps the 15 Hz stream; decimates 90 Hz by keeping every 6th frame from 0.
pub fn downsample<F: Clone>(frames: &[F], src_hz: u32) -> Result<Vec<F>> {
    match src_hz {
        15 => Ok(frames.to_vec()),
        90 => Ok(frames.iter().step_by(6).cloned().collect()),
        other => Err(Error::Config(format!("unsupported source rate {other} Hz (15 or 90)"))),
    }
}

/// Drops the first and last minute.
pub fn trim<F: Clone>(frames: &[F], rate_hz: u32) -> Result<Vec<F>> {
    let minute = 60 * rate_hz as usize;
    if frames.len() <= 2 * minute {
        return Err(Error::SessionTooShort {
            frames: frames.len(),
            required: 2 * minute,
        });
    }
    Ok(frames[minute..frames.len() - minute].to_vec())
}

fn unwrap_angles(a: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(a.len());
    let mut offset = 0.0;
    for (i, &v) in a.iter().enumerate() {
        if i > 0 {
            let d = v - a[i - 1];
            if d > PI {
                offset -= TAU;
            } else if d < -PI {
                offset += TAU;
            }
        }
        out.push(v + offset);
    }
    out
}

/// One differencing pass over a feature sequence.
fn differentiate(frames: &[FeatureFrame]) -> Result<Vec<FeatureFrame>> {
    let n = frames.len();
    let mut out = vec![FeatureFrame { values: [0.0; CHANNELS] }; n - 1];
    for (o, w) in out.iter_mut().zip(frames.windows(2)) {
        for c in FeatureFrame::positional_channels() {
            o.values[c] = w[1].values[c] - w[0].values[c];
        }
        for qb in QUAT_BLOCKS {
            o.set_quat(qb, quat_delta(&w[0].quat_at(qb), &w[1].quat_at(qb))?);
        }
    }
    for ab in ANGLE_PAIRS {
        let angles: Vec<f64> = frames.iter().map(|f| f.angle_at(ab)).collect();
        let un = unwrap_angles(&angles);
        for (o, w) in out.iter_mut().zip(un.windows(2)) {
            let (s, c) = (w[1] - w[0]).sin_cos();
            o.values[ab] = s;
            o.values[ab + 1] = c;
        }
    }
    Ok(out)
}

/// Applies `enc` to body-relative frames. Derivative encodings shorten the
/// sequence by their order instead of padding.
pub fn encode(frames: &[FeatureFrame], enc: Encoding) -> Result<FeatureSequence> {
    if frames.len() < 1 + enc.order() {
        return Err(Error::InvalidLength {
            op: "encode",
            len: frames.len(),
            reason: "need at least 1 + derivative-order frames",
        });
    }
    let mut cur = frames.to_vec();
    for _ in 0..enc.order() {
        cur = differentiate(&cur)?;
    }
    Ok(FeatureSequence {
        encoding: enc,
        frames: cur,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn pose(p: [f64; 3], q: Quat) -> Pose {
        Pose::new(p, q).unwrap()
    }

    fn frame(t: f64, hmd: Pose, left: Pose, right: Pose) -> MotionFrame {
        MotionFrame { t, hmd, left, right }
    }

    #[test]
    fn delta_of_equal_rotations_is_identity() {
        let q = Quat::new(0.3, -0.5, 0.2, 0.7).normalized().unwrap();
        assert_eq!(quat_delta(&q, &q).unwrap(), Quat::IDENTITY);
    }

    #[test]
    fn delta_from_identity_to_quarter_turn() {
        let next = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let d = quat_delta(&Quat::IDENTITY, &next).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.w - h).abs() < 1e-12 && d.x.abs() < 1e-12 && d.y.abs() < 1e-12);
        assert!((d.z - h).abs() < 1e-12);
    }

    #[test]
    fn delta_rejects_zero_quaternion() {
        let z = Quat::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(quat_delta(&z, &Quat::IDENTITY), Err(Error::InvalidPose(_))));
    }

    #[test]
    fn coincident_controller_is_at_origin() {
        let p = pose([1.0, 1.6, -2.0], Quat::IDENTITY);
        let f = to_body_relative(&frame(0.0, p, p, p));
        assert_eq!(&f.values[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&f.values[7..10], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_head_keeps_world_positions() {
        let hmd = pose([0.0; 3], Quat::IDENTITY);
        let l = pose([0.2, -0.4, 0.3], Quat::IDENTITY);
        let r = pose([-0.1, 0.5, 0.9], Quat::IDENTITY);
        let f = to_body_relative(&frame(0.0, hmd, l, r));
        assert_eq!(&f.values[0..3], &[0.2, -0.4, 0.3]);
        assert_eq!(&f.values[7..10], &[-0.1, 0.5, 0.9]);
        // sin/cos of zero pitch and yaw
        assert_eq!(&f.values[14..18], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn yawed_head_sees_world_x_as_forward() {
        let hmd = pose([0.0; 3], Quat::from_axis_angle([0.0, 1.0, 0.0], FRAC_PI_2));
        let c = pose([1.0, 0.0, 0.0], Quat::IDENTITY);
        let f = to_body_relative(&frame(0.0, hmd, c, c));
        // forward is +z in the body frame
        assert!(f.values[0].abs() < 1e-12 && f.values[1].abs() < 1e-12);
        assert!((f.values[2] - 1.0).abs() < 1e-12);
        assert!((f.values[16] - 1.0).abs() < 1e-12 && f.values[17].abs() < 1e-12);
    }

    #[test]
    fn pitch_is_reported_and_not_removed() {
        let q = Quat::from_axis_angle([0.0, 1.0, 0.0], 0.4).mul(&Quat::from_axis_angle([1.0, 0.0, 0.0], 0.3));
        let (yaw, pitch) = q.yaw_pitch();
        assert!((yaw - 0.4).abs() < 1e-12 && (pitch - 0.3).abs() < 1e-12);
    }

    #[test]
    fn downsample_rates() {
        let v: Vec<usize> = (0..100).collect();
        assert_eq!(downsample(&v, 15).unwrap(), v);
        let v: Vec<usize> = (0..540).collect();
        let d = downsample(&v, 90).unwrap();
        assert_eq!(d.len(), 90);
        assert_eq!(d[1], 6);
        assert_eq!(*d.last().unwrap(), 534);
        assert_eq!(downsample(&[0, 1, 2, 3, 4], 90).unwrap(), vec![0]);
        assert!(matches!(downsample(&v, 30), Err(Error::Config(_))));
    }

    #[test]
    fn trim_minutes() {
        let v: Vec<usize> = (0..2700).collect();
        let t = trim(&v, 15).unwrap();
        assert_eq!(t.len(), 900);
        assert_eq!(t[0], 900);
        let short: Vec<usize> = (0..1800).collect();
        assert!(matches!(trim(&short, 15), Err(Error::SessionTooShort { .. })));
    }

    fn still_frames(n: usize) -> Vec<FeatureFrame> {
        let hmd = pose([0.1, 1.7, 0.0], Quat::from_axis_angle([0.0, 1.0, 0.0], 3.0));
        let l = pose([0.3, 1.2, 0.4], Quat::new(0.5, 0.5, -0.5, 0.5));
        let r = pose([-0.3, 1.1, 0.5], Quat::new(-0.2, 0.9, 0.1, 0.3));
        (0..n).map(|i| to_body_relative(&frame(i as f64, hmd, l, r))).collect()
    }

    #[test]
    fn still_stream_encodes_to_zero_motion() {
        for enc in [Encoding::Brv, Encoding::Bra] {
            let s = encode(&still_frames(5), enc).unwrap();
            assert_eq!(s.len(), 5 - enc.order());
            for f in &s.frames {
                for c in FeatureFrame::positional_channels() {
                    assert_eq!(f.values[c], 0.0);
                }
                for q in f.quaternions() {
                    assert_eq!(q, Quat::IDENTITY);
                }
                assert_eq!(&f.values[14..18], &[0.0, 1.0, 0.0, 1.0]);
            }
        }
    }

    #[test]
    fn linear_drift_cancels_in_bra() {
        let mut frames = still_frames(6);
        for (i, f) in frames.iter_mut().enumerate() {
            f.values[0] += 0.01 * i as f64;
            f.values[9] -= 0.02 * i as f64;
        }
        let s = encode(&frames, Encoding::Bra).unwrap();
        for f in &s.frames {
            for c in FeatureFrame::positional_channels() {
                assert!(f.values[c].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quadratic_position_gives_constant_acceleration() {
        let dt = 1.0 / 15.0;
        let mut frames = still_frames(20);
        for (i, f) in frames.iter_mut().enumerate() {
            let t = i as f64 * dt;
            f.values[0] = t * t;
        }
        let s = encode(&frames, Encoding::Bra).unwrap();
        for f in &s.frames {
            assert!((f.values[0] - 2.0 * dt * dt).abs() < 1e-14);
        }
    }

    #[test]
    fn angle_wrap_does_not_spike() {
        let mut frames = still_frames(3);
        for (f, a) in frames.iter_mut().zip([3.1, -3.1, -3.0]) {
            f.values[16] = f64::sin(a);
            f.values[17] = f64::cos(a);
        }
        let s = encode(&frames, Encoding::Brv).unwrap();
        let d0 = s.frames[0].values[16].atan2(s.frames[0].values[17]);
        assert!((d0 - (2.0 * std::f64::consts::PI - 6.2)).abs() < 1e-9);
    }

    #[test]
    fn encode_needs_enough_frames() {
        assert!(encode(&still_frames(2), Encoding::Bra).is_err());
        assert_eq!(encode(&still_frames(1), Encoding::Br).unwrap().len(), 1);
    }

    #[test]
    fn encoding_names_round_trip() {
        for e in Encoding::ALL {
            assert_eq!(e.to_string().parse::<Encoding>().unwrap(), e);
        }
        assert!("BRX".parse::<Encoding>().is_err());
    }
}
