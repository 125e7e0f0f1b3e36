//! Session recordings, the preprocessing pipeline up to fixed-length windows,
//! and the cross-session split (train on session 1, test on session 2).

mod files;
pub mod synth;

pub use files::{header, load_csv, load_manifest, read_manifest, write_atomic, write_csv, write_dataset, ManifestEntry};
pub use synth::{synth_users, Drift, SynthConfig};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::preprocess::{downsample, encode, to_body_relative, trim, Encoding, FeatureFrame, FeatureSequence, MotionFrame, CHANNELS};

/// Frames per window (20 s at 15 Hz).
pub const WINDOW: usize = 300;
/// Frame rate after downsampling.
pub const RATE_HZ: u32 = 15;
/// Stride between training windows (50 % overlap).
pub const TRAIN_STRIDE: usize = 150;
/// Validation tail of session 1: five minutes.
pub const VAL_FRAMES: usize = 5 * 60 * RATE_HZ as usize;

/// One user's recorded session.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecording {
    pub user_id: u32,
    /// 1 for training/validation, 2 for testing.
    pub session_id: u8,
    pub rate_hz: u32,
    pub frames: Vec<MotionFrame>,
}

/// Where a window came from: user, session, and first frame as an index into
/// the trimmed 15 Hz session.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Source {
    pub user_id: u32,
    pub session_id: u8,
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[300, 18]`.
    pub features: Tensor<f32>,
    /// Contiguous class index.
    pub label: usize,
    pub source: Source,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    /// Stride 150.
    Train,
    /// Stride 300, non-overlapping.
    Eval,
}

/// Cuts `seq` into 300-frame windows. `offset` is added to each window's
/// start in its [`Source`]. Sequences shorter than one window give no windows.
pub fn make_windows(seq: &FeatureSequence, mode: WindowMode, label: usize, source: Source) -> Vec<Window> {
    let n = seq.len();
    if n < WINDOW {
        log::warn!(
            "user {} session {}: {} frames is shorter than one window",
            source.user_id,
            source.session_id,
            n
        );
        return Vec::new();
    }
    let stride = match mode {
        WindowMode::Train => TRAIN_STRIDE,
        WindowMode::Eval => WINDOW,
    };
    (0..=(n - WINDOW) / stride)
        .map(|i| {
            let s = i * stride;
            let data = seq.frames[s..s + WINDOW]
                .iter()
                .flat_map(|f| f.values.iter().map(|&v| v as f32))
                .collect();
            Window {
                features: Tensor::new(&[WINDOW, CHANNELS], data).expect("window size"),
                label,
                source: Source {
                    start: source.start + s,
                    ..source
                },
            }
        })
        .collect()
}

/// Downsamples to 15 Hz, trims a minute at each end, and maps to the body frame.
pub fn session_features(rec: &SessionRecording) -> Result<Vec<FeatureFrame>> {
    let frames = downsample(&rec.frames, rec.rate_hz)?;
    let frames = trim(&frames, RATE_HZ)?;
    Ok(frames.iter().map(to_body_relative).collect())
}

/// Windows of the cross-session protocol.
#[derive(Clone, Debug)]
pub struct Splits {
    pub encoding: Encoding,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    /// Raw user id of each class index.
    pub user_ids: Vec<u32>,
}

impl Splits {
    pub fn n_classes(&self) -> usize {
        self.user_ids.len()
    }
}

pub fn build_splits(recordings: &[SessionRecording], enc: Encoding) -> Result<Splits> {
    let mut by_user: BTreeMap<u32, [Option<&SessionRecording>; 2]> = BTreeMap::new();
    for r in recordings {
        if !(1..=2).contains(&r.session_id) {
            return Err(Error::Dataset(format!("user {}: session id {} is not 1 or 2", r.user_id, r.session_id)));
        }
        let slot = &mut by_user.entry(r.user_id).or_default()[r.session_id as usize - 1];
        if slot.is_some() {
            return Err(Error::Dataset(format!("user {}: duplicate session {}", r.user_id, r.session_id)));
        }
        *slot = Some(r);
    }
    if by_user.len() < 2 {
        return Err(Error::Dataset(format!("need at least 2 users, found {}", by_user.len())));
    }
    let mut splits = Splits {
        encoding: enc,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        user_ids: by_user.keys().copied().collect(),
    };
    for (label, (&user, sessions)) in by_user.iter().enumerate() {
        let [Some(s1), Some(s2)] = sessions else {
            let missing = if sessions[0].is_none() { 1 } else { 2 };
            return Err(Error::Dataset(format!("user {user} is missing session {missing}")));
        };
        let f1 = session_features(s1)?;
        if f1.len() < VAL_FRAMES + WINDOW {
            return Err(Error::Dataset(format!(
                "user {user}: session 1 has {} usable frames, need {} for training plus validation",
                f1.len(),
                VAL_FRAMES + WINDOW
            )));
        }
        let cut = f1.len() - VAL_FRAMES;
        let src = |session_id, start| Source {
            user_id: user,
            session_id,
            start,
        };
        splits.train.extend(make_windows(&encode(&f1[..cut], enc)?, WindowMode::Train, label, src(1, 0)));
        splits.val.extend(make_windows(&encode(&f1[cut..], enc)?, WindowMode::Eval, label, src(1, cut)));
        let f2 = session_features(s2)?;
        splits.test.extend(make_windows(&encode(&f2, enc)?, WindowMode::Eval, label, src(2, 0)));
    }
    Ok(splits)
}

/// Stacks the windows at `idx` into `[B, 300, 18]` plus their labels.
pub fn batch<T: Real>(windows: &[Window], idx: &[usize]) -> (Tensor<T>, Vec<usize>) {
    let mut data = Vec::with_capacity(idx.len() * WINDOW * CHANNELS);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend(windows[i].features.data().iter().map(|&v| T::c(v as f64)));
        labels.push(windows[i].label);
    }
    (Tensor::new(&[idx.len(), WINDOW, CHANNELS], data).expect("batch size"), labels)
}
