//! Rank metrics, majority voting, test-length sweeps and analytic cost
//! accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataset::{Window, WINDOW};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind, STATS};
use crate::preprocess::{Encoding, CHANNELS};

/// Seconds of motion covered by one evaluation window.
pub const WINDOW_SECONDS: f64 = 20.0;

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Highest score, lowest index among equals.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// 1 + classes scoring strictly higher + equal-scoring classes with a lower
/// index.
pub fn rank(scores: &[f64], true_class: usize) -> usize {
    let s = scores[true_class];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < true_class))
        .count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedPrediction {
    pub scores: Vec<f64>,
    pub true_class: usize,
    pub rank: usize,
}

impl RankedPrediction {
    pub fn new(scores: Vec<f64>, true_class: usize) -> Result<Self> {
        if true_class >= scores.len() {
            return Err(Error::Contract(format!("true class {true_class} outside {} scores", scores.len())));
        }
        let rank = rank(&scores, true_class);
        Ok(RankedPrediction {
            scores,
            true_class,
            rank,
        })
    }
}

pub fn mrr(preds: &[RankedPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Contract("MRR of an empty prediction list".into()));
    }
    Ok(preds.iter().map(|p| 1.0 / p.rank as f64).sum::<f64>() / preds.len() as f64)
}

/// Most frequent argmax over probability vectors. Ties go to the larger
/// summed probability, then to the lower class index.
pub fn majority_vote(window_probs: &[Vec<f64>]) -> Result<usize> {
    let c = window_probs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Contract("majority vote over zero windows".into()))?;
    let mut votes = vec![0usize; c];
    let mut mass = vec![0.0f64; c];
    for p in window_probs {
        if p.len() != c {
            return Err(Error::shape("majority_vote", &[p.len()], &[c]));
        }
        votes[argmax(p)] += 1;
        for (m, &v) in mass.iter_mut().zip(p) {
            *m += v;
        }
    }
    let mut best = 0;
    for j in 1..c {
        if votes[j] > votes[best] || (votes[j] == votes[best] && mass[j] > mass[best]) {
            best = j;
        }
    }
    Ok(best)
}

/// Per-window top-1 accuracy.
pub fn sample_accuracy(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let hits = scores.iter().zip(labels).filter(|(s, &l)| argmax(s) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean reciprocal rank of the true class over individual windows.
pub fn window_mrr(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let preds = scores
        .iter()
        .zip(labels)
        .map(|(s, &l)| RankedPrediction::new(s.clone(), l))
        .collect::<Result<Vec<_>>>()?;
    mrr(&preds)
}

/// Windows drawn per user for a test length of `minutes`.
pub fn windows_for_minutes(minutes: f64) -> Result<usize> {
    let n = (minutes * 60.0 / WINDOW_SECONDS + 1e-9).floor();
    if !(n >= 1.0) {
        return Err(Error::Config(format!(
            "test length {minutes} min is shorter than one {WINDOW_SECONDS} s window"
        )));
    }
    Ok(n as usize)
}

/// MRR at one test length.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub test_minutes: f64,
    pub mrr: f64,
    /// Some user had fewer windows than requested and contributed all it had.
    pub truncated: bool,
}

/// Groups test-window scores by true class, in session order.
fn by_user<'a>(scores: &'a [Vec<f64>], windows: &[Window]) -> Result<BTreeMap<usize, Vec<&'a [f64]>>> {
    if scores.len() != windows.len() || scores.is_empty() {
        return Err(Error::Contract(format!("{} score rows for {} windows", scores.len(), windows.len())));
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by_key(|&i| (windows[i].label, windows[i].source.start));
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for i in order {
        groups.entry(windows[i].label).or_default().push(&scores[i]);
    }
    Ok(groups)
}

/// For each test length, averages the softmax of each user's first windows,
/// ranks the true user and averages reciprocal ranks over users.
pub fn sweep(scores: &[Vec<f64>], windows: &[Window], minutes: &[f64]) -> Result<Vec<SweepResult>> {
    if minutes.is_empty() {
        return Err(Error::Config("the minutes grid is empty".into()));
    }
    let counts = minutes.iter().map(|&m| windows_for_minutes(m)).collect::<Result<Vec<_>>>()?;
    let groups = by_user(scores, windows)?;
    let probs: BTreeMap<usize, Vec<Vec<f64>>> =
        groups.iter().map(|(&u, rows)| (u, rows.iter().map(|r| softmax(r)).collect())).collect();
    let mut out = Vec::with_capacity(minutes.len());
    for (&m, &want) in minutes.iter().zip(&counts) {
        let mut preds = Vec::with_capacity(probs.len());
        let mut truncated = false;
        for (&user, rows) in &probs {
            if rows.len() < want {
                truncated = true;
            }
            let take = &rows[..want.min(rows.len())];
            let c = take[0].len();
            let mut mean = vec![0.0; c];
            for r in take {
                for (a, &v) in mean.iter_mut().zip(r) {
                    *a += v / take.len() as f64;
                }
            }
            preds.push(RankedPrediction::new(mean, user)?);
        }
        if truncated {
            log::warn!("{m} min sweep point: some users have fewer than {want} windows; using all available");
        }
        out.push(SweepResult {
            test_minutes: m,
            mrr: mrr(&preds)?,
            truncated,
        });
    }
    Ok(out)
}

/// Majority vote over every test window of each user, scored per user.
pub fn session_vote_accuracy(scores: &[Vec<f64>], windows: &[Window]) -> Result<f64> {
    let groups = by_user(scores, windows)?;
    let mut hits = 0;
    for (&user, rows) in &groups {
        let probs: Vec<Vec<f64>> = rows.iter().map(|r| softmax(r)).collect();
        hits += usize::from(majority_vote(&probs)? == user);
    }
    Ok(hits as f64 / groups.len() as f64)
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub model: ModelKind,
    pub encoding: Encoding,
    pub test_minutes: f64,
    pub mrr: f64,
    pub sample_accuracy: f64,
    pub session_vote_accuracy: f64,
    pub params: usize,
    pub gflops: f64,
    pub truncated: bool,
}

pub const METRICS_HEADER: &str = "model,encoding,test_minutes,mrr,sample_accuracy,session_vote_accuracy,params,gflops";

/// Sweep plus the length-independent metrics for one trained model.
pub fn evaluate_scores(
    model: ModelKind,
    encoding: Encoding,
    scores: &[Vec<f64>],
    windows: &[Window],
    minutes: &[f64],
    cost: &CostReport,
) -> Result<Vec<SweepPoint>> {
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let acc = sample_accuracy(scores, &labels)?;
    let vote = session_vote_accuracy(scores, windows)?;
    Ok(sweep(scores, windows, minutes)?
        .into_iter()
        .map(|r| SweepPoint {
            model,
            encoding,
            test_minutes: r.test_minutes,
            mrr: r.mrr,
            sample_accuracy: acc,
            session_vote_accuracy: vote,
            params: cost.params,
            gflops: cost.gflops(),
            truncated: r.truncated,
        })
        .collect())
}

pub fn metrics_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for p in points {
        writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{},{:.6}",
            p.model, p.encoding, p.test_minutes, p.mrr, p.sample_accuracy, p.session_vote_accuracy, p.params, p.gflops
        )
        .expect("string write");
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<SweepPoint>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Config(format!("metrics CSV: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::Config(format!("metrics CSV header must be {METRICS_HEADER}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("metrics CSV row {}: {e}", i + 1)))?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse()
                .map_err(|_| Error::Config(format!("metrics CSV row {}: bad number {:?}", i + 1, &rec[j])))
        };
        out.push(SweepPoint {
            model: rec[0].parse()?,
            encoding: rec[1].parse()?,
            test_minutes: num(2)?,
            mrr: num(3)?,
            sample_accuracy: num(4)?,
            session_vote_accuracy: num(5)?,
            params: num(6)? as usize,
            gflops: num(7)?,
            truncated: false,
        });
    }
    Ok(out)
}

/// Multiply-adds and plain additions of one named part of a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostTerm {
    pub name: String,
    pub macs: u64,
    pub adds: u64,
}

/// Forward-pass cost of one window. One multiply-add counts as two FLOPs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub params: usize,
    pub terms: Vec<CostTerm>,
}

impl CostReport {
    pub fn macs(&self) -> u64 {
        self.terms.iter().map(|t| t.macs).sum()
    }

    pub fn flops(&self) -> u64 {
        self.terms.iter().map(|t| 2 * t.macs + t.adds).sum()
    }

    pub fn gflops(&self) -> f64 {
        self.flops() as f64 / 1e9
    }

    /// Multiply-adds of terms whose name starts with `prefix`.
    pub fn macs_of(&self, prefix: &str) -> u64 {
        self.terms.iter().filter(|t| t.name.starts_with(prefix)).map(|t| t.macs).sum()
    }
}

struct Costs(Vec<CostTerm>);

impl Costs {
    fn add(&mut self, name: impl Into<String>, macs: u64, adds: u64) {
        self.0.push(CostTerm {
            name: name.into(),
            macs,
            adds,
        });
    }

    /// Dense `fin → fout` with bias applied at `steps` positions.
    fn dense(&mut self, name: impl Into<String>, steps: u64, fin: u64, fout: u64) {
        self.add(name, steps * fin * fout, steps * fout);
    }
}

/// Analytic cost of `config` over a window of `len` frames.
pub fn flops_for_length(config: &ModelConfig, n_classes: usize, len: usize) -> Result<CostReport> {
    config.validate()?;
    let l = len as u64;
    let h = config.hidden as u64;
    let k = config.kernel as u64;
    let c = CHANNELS as u64;
    let mut t = Costs(Vec::new());
    let mut params = 0usize;
    let mut count = |n: u64| params += n as usize;
    match config.kind {
        ModelKind::Mlp => {
            let mut fin = c * STATS as u64;
            for i in 0..config.depth {
                t.dense(format!("mlp{i}"), 1, fin, h);
                count(fin * h + h);
                fin = h;
            }
        }
        ModelKind::Cnn => {
            let mut fin = c;
            for i in 0..config.depth {
                t.dense(format!("conv{i}"), l, k * fin, h);
                count(k * fin * h + h);
                fin = h;
            }
        }
        ModelKind::Tcn => {
            t.dense("in", l, c, h);
            count(c * h + h);
            for i in 0..config.depth {
                t.dense(format!("tcn{i}"), l, k * h, h);
                t.add(format!("tcn{i}.residual"), 0, l * h);
                count(k * h * h + h);
            }
        }
        ModelKind::Lstm | ModelKind::Gru => {
            let gates = if config.kind == ModelKind::Lstm { 4 } else { 3 };
            let mut fin = c;
            for i in 0..config.depth {
                // gates·h·(h + in) per step; bias additions once per gate row
                t.add(format!("rnn{i}.gates"), l * gates * h * (h + fin), l * gates * h);
                count(gates * h * (h + fin) + gates * h + if gates == 3 { gates * h } else { 0 });
                fin = h;
            }
        }
        ModelKind::Transformer => {
            t.dense("in", l, c, h);
            count(c * h + h);
            for i in 0..config.depth {
                t.dense(format!("tf{i}.qkvo"), l, h, 4 * h);
                t.add(format!("tf{i}.attention"), 2 * l * l * h, 0);
                t.dense(format!("tf{i}.ff1"), l, h, 2 * h);
                t.dense(format!("tf{i}.ff2"), l, 2 * h, h);
                t.add(format!("tf{i}.residual"), 0, 2 * l * h);
                count(4 * (h * h + h) + 2 * h * h + 2 * h + 2 * h * h + h + 4 * h);
            }
            count(2 * h);
        }
        ModelKind::S4d => {
            t.dense("in", l, c, h);
            count(c * h + h);
            let n = config.state as u64;
            let m = n / 2;
            let fft = (2 * len).next_power_of_two() as u64;
            let log = fft.trailing_zeros() as u64;
            for i in 0..config.depth {
                t.add(format!("ssm{i}.kernel"), h * n * l, 0);
                t.add(format!("ssm{i}.fft_conv"), h * 3 * fft * log, 0);
                t.add(format!("ssm{i}.skip"), l * h, l * h);
                t.dense(format!("ssm{i}.mix"), l, h, h);
                t.add(format!("ssm{i}.residual"), 0, l * h);
                count(6 * h * m + 2 * h + h * h + h + 2 * h);
            }
        }
        ModelKind::S5 => {
            t.dense("in", l, c, h);
            count(c * h + h);
            let m = config.state as u64 / 2;
            for i in 0..config.depth {
                // complex B·u, complex state update, real part of C·x
                t.add(format!("ssm{i}.input"), l * 2 * m * h, 0);
                t.add(format!("ssm{i}.scan"), l * 4 * m, l * 2 * m);
                t.add(format!("ssm{i}.output"), l * 2 * m * h, 0);
                t.add(format!("ssm{i}.skip"), l * h, l * h);
                t.add(format!("ssm{i}.residual"), 0, l * h);
                count(2 * m + 2 * m * h + 2 * h * m + h + m + 2 * h);
            }
        }
    }
    if config.kind != ModelKind::Mlp {
        t.add("pool", 0, l * h);
    }
    t.dense("head", 1, h, n_classes as u64);
    count(h * n_classes as u64 + n_classes as u64);
    Ok(CostReport { params, terms: t.0 })
}

/// Cost of one 300-frame window.
pub fn flops(config: &ModelConfig, n_classes: usize) -> Result<CostReport> {
    flops_for_length(config, n_classes, WINDOW)
}
