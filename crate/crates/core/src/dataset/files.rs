//! Session CSV files and the manifest that indexes them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::SessionRecording;
use crate::error::{Error, Result};
use crate::preprocess::{MotionFrame, Pose, Quat};

const DEVICES: [&str; 3] = ["hmd", "left", "right"];
const FIELDS: [&str; 7] = ["px", "py", "pz", "qw", "qx", "qy", "qz"];

const COLUMNS: usize = 1 + DEVICES.len() * FIELDS.len();

/// The 22 header names in file order.
pub fn header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for d in DEVICES {
        for f in FIELDS {
            h.push(format!("{d}_{f}"));
        }
    }
    h
}

fn parse_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

/// Reads one session file. Rows are numbered from 1 after the header.
pub fn load_csv(path: &Path, user_id: u32, session_id: u8, rate_hz: u32) -> Result<SessionRecording> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let want = header();
    if got != want {
        let missing: Vec<&String> = want.iter().filter(|w| !got.contains(w)).collect();
        let msg = if missing.is_empty() {
            format!("header columns out of order or extra: {got:?}")
        } else {
            format!("missing columns {missing:?}")
        };
        return Err(parse_err(path, 0, msg));
    }
    let mut frames: Vec<MotionFrame> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(path, row, e.to_string()))?;
        if rec.len() != COLUMNS {
            return Err(parse_err(path, row, format!("expected {COLUMNS} fields, found {}", rec.len())));
        }
        let mut v = [0.0f64; COLUMNS];
        for (j, field) in rec.iter().enumerate() {
            let x: f64 = field
                .parse()
                .map_err(|_| parse_err(path, row, format!("column {} is not a number: {field:?}", want[j])))?;
            if !x.is_finite() {
                return Err(parse_err(path, row, format!("column {} is not finite", want[j])));
            }
            v[j] = x;
        }
        let pose = |o: usize| {
            Pose::new([v[o], v[o + 1], v[o + 2]], Quat::new(v[o + 3], v[o + 4], v[o + 5], v[o + 6]))
                .map_err(|e| parse_err(path, row, e.to_string()))
        };
        let frame = MotionFrame {
            t: v[0],
            hmd: pose(1)?,
            left: pose(8)?,
            right: pose(15)?,
        };
        if let Some(prev) = frames.last() {
            if frame.t <= prev.t {
                return Err(parse_err(path, row, format!("timestamp {} does not increase", frame.t)));
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(parse_err(path, 0, "no data rows"));
    }
    Ok(SessionRecording {
        user_id,
        session_id,
        rate_hz,
        frames,
    })
}

/// Writes a session in the documented schema. Pose values are written at
/// single precision, matching what tracking hardware reports.
pub fn write_csv(path: &Path, rec: &SessionRecording) -> Result<()> {
    let mut out = String::with_capacity(rec.frames.len() * 200);
    out.push_str(&header().join(","));
    out.push('\n');
    for f in &rec.frames {
        out.push_str(&f.t.to_string());
        for p in [f.hmd, f.left, f.right] {
            let q = p.orientation;
            for x in [p.position[0], p.position[1], p.position[2], q.w, q.x, q.y, q.z] {
                out.push(',');
                out.push_str(&(x as f32).to_string());
            }
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub user_id: u32,
    pub session_id: u8,
    pub rate_hz: u32,
    pub path: PathBuf,
}

/// Reads `user_id,session_id,rate_hz,path`; relative paths resolve against
/// the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let hdr: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if hdr != ["user_id", "session_id", "rate_hz", "path"] {
        return Err(parse_err(path, 0, format!("manifest header must be user_id,session_id,rate_hz,path; got {hdr:?}")));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(path, row, e.to_string()))?;
        let num = |j: usize| -> Result<u32> {
            rec[j]
                .parse()
                .map_err(|_| parse_err(path, row, format!("{} is not an integer: {:?}", hdr[j], &rec[j])))
        };
        let session_id = num(1)?;
        if !(1..=2).contains(&session_id) {
            return Err(parse_err(path, row, format!("session_id must be 1 or 2, got {session_id}")));
        }
        let p = PathBuf::from(&rec[3]);
        out.push(ManifestEntry {
            user_id: num(0)?,
            session_id: session_id as u8,
            rate_hz: num(2)?,
            path: if p.is_absolute() { p } else { base.join(p) },
        });
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "no data rows"));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SessionRecording>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| load_csv(&e.path, e.user_id, e.session_id, e.rate_hz))
        .collect()
}

/// Writes one CSV per recording plus `manifest.csv` into `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, recs: &[SessionRecording]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut manifest = String::from("user_id,session_id,rate_hz,path\n");
    for r in recs {
        let name = format!("user{:03}_s{}.csv", r.user_id, r.session_id);
        write_csv(&dir.join(&name), r)?;
        manifest.push_str(&format!("{},{},{},{name}\n", r.user_id, r.session_id, r.rate_hz));
    }
    let mp = dir.join("manifest.csv");
    write_atomic(&mp, manifest.as_bytes())?;
    Ok(mp)
}
