//! Supervised training on session-1 windows: Adam, early stopping on
//! validation accuracy, and a per-epoch log.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{batch, Window};
use crate::error::{Error, Result};
use crate::evaluation::sample_accuracy;
use crate::models::{Model, Param};
use crate::numerics::{Graph, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without strict improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm limit applied to LSTM and GRU models.
    pub recurrent_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            recurrent_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.recurrent_clip > 0.0) {
            return bad(format!("recurrent_clip must be positive, got {}", self.recurrent_clip));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Steps taken so far.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter. `grads` is
/// aligned with `params`; entries of frozen parameters are ignored.
pub fn adam_step<T: Real>(params: &mut [Param<T>], grads: &[Tensor<T>], state: &mut AdamState<T>, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.trainable {
            if g.shape() != p.value.shape() {
                return Err(Error::shape("adam_step", g.shape(), p.value.shape()));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at element {i} of parameter {}",
                    g.data()[i],
                    p.name
                )));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j].f();
            let mj = b1 * m[j].f() + (1.0 - b1) * gj;
            let vj = b2 * v[j].f() + (1.0 - b2) * gj * gj;
            m[j] = T::c(mj);
            v[j] = T::c(vj);
            let step = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            *w = T::c(w.f() - step);
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before scaling.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.f() * v.f())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::c(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// Patience counter over validation accuracy.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records epoch `epoch` (1-based). Returns whether it is a new best and
    /// whether training should stop now.
    pub fn update(&mut self, epoch: usize, val_acc: f64) -> (bool, bool) {
        if val_acc > self.best {
            self.best = val_acc;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best_val_acc(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.val_acc)
    }

    /// `epoch,loss,val_acc,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_acc,seconds\n");
        for e in &self.epochs {
            writeln!(s, "{},{},{},{:.3}", e.epoch, e.loss, e.val_acc, e.seconds).expect("string write");
        }
        s
    }
}

/// Seed of the shuffle (stream 0) or dropout (stream 1) generator of an epoch.
pub fn epoch_seed(seed: u64, epoch: usize, stream: u64) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Visiting order of the training windows in `epoch`.
pub fn shuffle_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch, 0)));
    idx
}

/// Trains `model` in place and leaves it holding the parameters of the best
/// validation epoch. Input standardisation is fitted on `train` first.
pub fn fit<T: Real>(model: &mut Model<T>, train: &[Window], val: &[Window], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "training needs windows in both splits (train {}, validation {})",
            train.len(),
            val.len()
        )));
    }
    if let Some(w) = train.iter().chain(val).find(|w| w.label >= model.n_classes()) {
        return Err(Error::Config(format!("label {} exceeds the model's {} classes", w.label, model.n_classes())));
    }
    model.fit_normalizer(train)?;
    let clip = model.config().kind.is_recurrent().then_some(cfg.recurrent_clip);
    let mut adam = AdamState::new(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params: Vec<Param<T>> = model.params().to_vec();
    let mut log = TrainLog::default();
    let val_labels: Vec<usize> = val.iter().map(|w| w.label).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let order = shuffle_order(train.len(), cfg.seed, epoch);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch, 1));
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (x, labels) = batch::<T>(train, idx);
            let g = Graph::new();
            let vars = model.bind(&g);
            let logits = model.forward(&g, &vars, &x, Some(&mut drop_rng))?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            let lv = g.value(loss).data()[0].f();
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("{} epoch {epoch}: loss is {lv}", model.config().kind)));
            }
            loss_sum += lv * idx.len() as f64;
            let mut grads = g.backward(loss)?;
            let mut gs: Vec<Tensor<T>> = vars.iter().map(|&v| grads.take(v)).collect();
            if let Some(c) = clip {
                clip_global_norm(&mut gs, c);
            }
            adam_step(model.params_mut(), &gs, &mut adam, cfg)?;
        }
        let val_acc = sample_accuracy(&model.predict_windows(val, cfg.batch_size)?, &val_labels)?;
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} val_acc {:.4} ({:.1}s)",
            model.config().kind,
            rec.loss,
            rec.val_acc,
            rec.seconds
        );
        log.epochs.push(rec);
        let (improved, stop) = stopper.update(epoch, val_acc);
        if improved {
            best_params.clone_from_slice(model.params());
        }
        if stop {
            break;
        }
    }
    model.params_mut().clone_from_slice(&best_params);
    log.best_epoch = stopper.best_epoch();
    Ok(log)
}
