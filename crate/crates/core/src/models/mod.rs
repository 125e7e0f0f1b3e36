//! The eight classifier architectures: a sequence encoder (or summary
//! statistics for the MLP), mean pooling over time, and a linear head.

mod checkpoint;
mod config;

pub use config::{ModelConfig, ModelKind};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Window;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::preprocess::CHANNELS;
use crate::ssm::{self, SsmVars, StateSpaceParams};

/// Statistics per channel in [`stat_features`].
pub const STATS: usize = 7;

/// Per channel: min, max, mean, population std, q25, q50, q75 (linear
/// interpolation), channel-major. `window` is `[L, C]`.
pub fn stat_features<T: Real>(window: &Tensor<T>) -> Result<Tensor<T>> {
    let &[l, c] = window.shape() else {
        return Err(Error::shape("stat_features", window.shape(), &[0, CHANNELS]));
    };
    if l == 0 {
        return Err(Error::InvalidLength {
            op: "stat_features",
            len: 0,
            reason: "window is empty",
        });
    }
    let mut out = Vec::with_capacity(c * STATS);
    let mut col = vec![0.0f64; l];
    for ch in 0..c {
        for (t, v) in col.iter_mut().enumerate() {
            *v = window.data()[t * c + ch].f();
        }
        let mean = col.iter().sum::<f64>() / l as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64;
        col.sort_unstable_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (l - 1) as f64;
            let i = pos as usize;
            let frac = pos - i as f64;
            if i + 1 < l {
                col[i] + frac * (col[i + 1] - col[i])
            } else {
                col[i]
            }
        };
        out.extend([col[0], col[l - 1], mean, var.sqrt(), q(0.25), q(0.5), q(0.75)].map(T::c));
    }
    Tensor::new(&[c * STATS], out)
}

/// A named tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// A classifier instance with its parameters and input standardisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    n_classes: usize,
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    /// Per-input-feature mean and standard deviation fitted on training data.
    norm_mean: Vec<T>,
    norm_std: Vec<T>,
}

struct Builder<T: Real> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, name: String, value: Tensor<T>) {
        self.params.push(Param {
            name,
            value,
            trainable: true,
        });
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::c(self.rng.random_range(-bound..bound))).collect();
        self.push(name, Tensor::new(shape, data).expect("shape"));
    }

    fn dense(&mut self, name: &str, fin: usize, fout: usize) {
        self.uniform(format!("{name}.w"), &[fin, fout], 1.0 / (fin as f64).sqrt());
        self.push(format!("{name}.b"), Tensor::zeros(&[fout]));
    }

    fn conv(&mut self, name: &str, k: usize, fin: usize, fout: usize) {
        self.uniform(format!("{name}.w"), &[k, fin, fout], 1.0 / ((k * fin) as f64).sqrt());
        self.push(format!("{name}.b"), Tensor::zeros(&[fout]));
    }

    fn norm(&mut self, name: &str, h: usize) {
        self.push(format!("{name}.gamma"), Tensor::full(&[h], T::one()));
        self.push(format!("{name}.beta"), Tensor::zeros(&[h]));
    }

    fn ssm(&mut self, name: &str, p: StateSpaceParams<T>) {
        for (field, t) in [
            ("rho", p.rho),
            ("im", p.im),
            ("b_re", p.b_re),
            ("b_im", p.b_im),
            ("c_re", p.c_re),
            ("c_im", p.c_im),
            ("d", p.d),
            ("log_dt", p.log_dt),
        ] {
            self.push(format!("{name}.{field}"), t);
        }
    }
}

const SSM_FIELDS: [&str; 8] = ["rho", "im", "b_re", "b_im", "c_re", "c_im", "d", "log_dt"];

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, n_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let (h, c, k) = (config.hidden, n_classes, config.kernel);
        let mut b = Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        match config.kind {
            ModelKind::Mlp => {
                let mut fin = CHANNELS * STATS;
                for i in 0..config.depth {
                    b.dense(&format!("mlp{i}"), fin, h);
                    fin = h;
                }
            }
            ModelKind::Cnn => {
                let mut fin = CHANNELS;
                for i in 0..config.depth {
                    b.conv(&format!("conv{i}"), k, fin, h);
                    fin = h;
                }
            }
            ModelKind::Tcn => {
                b.dense("in", CHANNELS, h);
                for i in 0..config.depth {
                    b.conv(&format!("tcn{i}"), k, h, h);
                }
            }
            ModelKind::Lstm | ModelKind::Gru => {
                let gates = if config.kind == ModelKind::Lstm { 4 } else { 3 };
                let bound = 1.0 / (h as f64).sqrt();
                let mut fin = CHANNELS;
                for i in 0..config.depth {
                    b.dense(&format!("rnn{i}.ih"), fin, gates * h);
                    b.uniform(format!("rnn{i}.hh"), &[h, gates * h], bound);
                    if gates == 3 {
                        b.uniform(format!("rnn{i}.bhh"), &[gates * h], bound);
                    }
                    fin = h;
                }
            }
            ModelKind::Transformer => {
                b.dense("in", CHANNELS, h);
                for i in 0..config.depth {
                    let p = format!("tf{i}");
                    b.norm(&format!("{p}.ln1"), h);
                    for proj in ["q", "k", "v", "o"] {
                        b.dense(&format!("{p}.{proj}"), h, h);
                    }
                    b.norm(&format!("{p}.ln2"), h);
                    b.dense(&format!("{p}.ff1"), h, 2 * h);
                    b.dense(&format!("{p}.ff2"), 2 * h, h);
                }
                b.norm("out_ln", h);
            }
            ModelKind::S4d | ModelKind::S5 => {
                b.dense("in", CHANNELS, h);
                for i in 0..config.depth {
                    let p = format!("ssm{i}");
                    b.norm(&format!("{p}.ln"), h);
                    let sub = seed.wrapping_mul(31).wrapping_add(i as u64 + 1);
                    let params = if config.kind == ModelKind::S4d {
                        ssm::init_s4d(config.state, h, sub)?
                    } else {
                        ssm::init_s5(config.state, h, sub)?
                    };
                    b.ssm(&p, params);
                    if config.kind == ModelKind::S4d {
                        b.dense(&format!("{p}.mix"), h, h);
                    }
                }
            }
        }
        b.dense("head", h, c);
        let params = b.params;
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        let nf = Self::norm_len(config.kind);
        Ok(Model {
            config,
            n_classes,
            params,
            index,
            norm_mean: vec![T::zero(); nf],
            norm_std: vec![T::one(); nf],
        })
    }

    fn norm_len(kind: ModelKind) -> usize {
        if kind == ModelKind::Mlp {
            CHANNELS * STATS
        } else {
            CHANNELS
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    pub fn normalizer(&self) -> (&[T], &[T]) {
        (&self.norm_mean, &self.norm_std)
    }

    /// Fits the input standardisation (per channel, or per summary statistic
    /// for the MLP) on training windows.
    pub fn fit_normalizer(&mut self, windows: &[Window]) -> Result<()> {
        if windows.is_empty() {
            return Err(Error::Config("cannot fit input standardisation on zero windows".into()));
        }
        let nf = self.norm_mean.len();
        let mut sum = vec![0.0f64; nf];
        let mut sq = vec![0.0f64; nf];
        let mut count = 0usize;
        for w in windows {
            let rows: Vec<f64> = if self.config.kind == ModelKind::Mlp {
                stat_features(&w.features)?.data().iter().map(|&v| v as f64).collect()
            } else {
                w.features.data().iter().map(|&v| v as f64).collect()
            };
            for row in rows.chunks(nf) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                count += 1;
            }
        }
        for j in 0..nf {
            let mean = sum[j] / count as f64;
            let var = (sq[j] / count as f64 - mean * mean).max(0.0);
            let std = var.sqrt();
            self.norm_mean[j] = T::c(mean);
            self.norm_std[j] = T::c(if std > 1e-8 { std } else { 1.0 });
        }
        Ok(())
    }

    /// Registers parameters on `g`: trainable ones as leaves that receive
    /// gradients, frozen ones as constants. Order matches [`Model::params`].
    pub fn bind(&self, g: &Graph<T>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if p.trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn bind_constants(&self, g: &Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.value.clone())).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        match x.shape() {
            &[b, l, c] if c == CHANNELS && l > 0 && b > 0 => Ok((b, l)),
            s => Err(Error::shape("model input", s, &[0, 0, CHANNELS])),
        }
    }

    /// Logits `[B, C]` for `x [B, L, 18]`. Dropout is active only when `rng`
    /// is given.
    pub fn forward(&self, g: &Graph<T>, vars: &[Var], x: &Tensor<T>, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        self.check_input(x)?;
        let mut cx = Ctx {
            g,
            vars,
            model: self,
            rng,
        };
        let pooled = if self.config.kind == ModelKind::Mlp {
            cx.mlp(x)?
        } else {
            let seq = cx.sequence(x)?;
            g.mean_time(seq)?
        };
        cx.dense(pooled, "head")
    }

    /// Per-step representation `[B, L, hidden]` before pooling (sequence
    /// models only).
    pub fn representation(&self, g: &Graph<T>, vars: &[Var], x: &Tensor<T>, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        self.check_input(x)?;
        if self.config.kind == ModelKind::Mlp {
            return Err(Error::Contract("the MLP has no per-step representation".into()));
        }
        Ctx {
            g,
            vars,
            model: self,
            rng,
        }
        .sequence(x)
    }

    /// Evaluation-mode logits without recording gradients.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let vars = self.bind_constants(&g);
        let y = self.forward(&g, &vars, x, None)?;
        Ok((*g.value(y)).clone())
    }

    /// Logits for each window, `batch` windows at a time.
    pub fn predict_windows(&self, windows: &[Window], batch: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        let idx: Vec<usize> = (0..windows.len()).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let (x, _) = crate::dataset::batch::<T>(windows, chunk);
            let y = self.predict(&x)?;
            out.extend(y.data().chunks(self.n_classes).map(|r| r.iter().map(|v| v.f()).collect()));
        }
        Ok(out)
    }

    /// Parameters of SSM block `i` as a standalone system (for recurrent
    /// stepping).
    pub fn ssm_block(&self, i: usize) -> Option<StateSpaceParams<T>> {
        let coupling = match self.config.kind {
            ModelKind::S4d => ssm::Coupling::PerChannel,
            ModelKind::S5 => ssm::Coupling::Mimo,
            _ => return None,
        };
        let t = |f: &str| self.param(&format!("ssm{i}.{f}")).map(|p| p.value.clone());
        Some(StateSpaceParams {
            coupling,
            rho: t("rho")?,
            im: t("im")?,
            b_re: t("b_re")?,
            b_im: t("b_im")?,
            c_re: t("c_re")?,
            c_im: t("c_im")?,
            d: t("d")?,
            log_dt: t("log_dt")?,
        })
    }
}

/// Sinusoidal positions `[L, H]`.
pub fn positional_encoding<T: Real>(l: usize, h: usize) -> Tensor<T> {
    let mut pe = vec![T::zero(); l * h];
    for t in 0..l {
        for i in 0..h {
            let freq = 1.0 / 10000f64.powf((i - i % 2) as f64 / h as f64);
            let a = t as f64 * freq;
            pe[t * h + i] = T::c(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(&[l, h], pe).expect("shape")
}

struct Ctx<'a, T: Real> {
    g: &'a Graph<T>,
    vars: &'a [Var],
    model: &'a Model<T>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<T: Real> Ctx<'_, T> {
    fn p(&self, name: &str) -> Var {
        self.vars[self.model.index[name]]
    }

    fn dense(&self, x: Var, name: &str) -> Result<Var> {
        self.g.linear(x, self.p(&format!("{name}.w")), Some(self.p(&format!("{name}.b"))))
    }

    fn norm(&self, x: Var, name: &str) -> Result<Var> {
        self.g.layer_norm(x, self.p(&format!("{name}.gamma")), self.p(&format!("{name}.beta")))
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.model.config.dropout > 0.0 => self.g.dropout(x, self.model.config.dropout, rng),
            _ => Ok(x),
        }
    }

    fn standardized(&self, x: &Tensor<T>) -> Tensor<T> {
        let (mean, std) = (&self.model.norm_mean, &self.model.norm_std);
        let c = mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i % c]) / std[i % c])
            .collect();
        Tensor::new(x.shape(), data).expect("shape")
    }

    fn mlp(&mut self, x: &Tensor<T>) -> Result<Var> {
        let (b, l) = (x.shape()[0], x.shape()[1]);
        let per = l * CHANNELS;
        let mut feats = Vec::with_capacity(b * CHANNELS * STATS);
        for i in 0..b {
            let w = Tensor::new(&[l, CHANNELS], x.data()[i * per..(i + 1) * per].to_vec())?;
            feats.extend_from_slice(stat_features(&w)?.data());
        }
        let f = self.standardized(&Tensor::new(&[b, CHANNELS * STATS], feats)?);
        let mut h = self.g.constant(f);
        for i in 0..self.model.config.depth {
            h = self.dense(h, &format!("mlp{i}"))?;
            h = self.g.relu(h);
            h = self.drop(h)?;
        }
        Ok(h)
    }

    fn sequence(&mut self, x: &Tensor<T>) -> Result<Var> {
        let cfg = self.model.config.clone();
        let g = self.g;
        let x = g.constant(self.standardized(x));
        let (k, depth) = (cfg.kernel, cfg.depth);
        match cfg.kind {
            ModelKind::Mlp => unreachable!("handled by mlp()"),
            ModelKind::Cnn => {
                let mut h = x;
                for i in 0..depth {
                    let n = format!("conv{i}");
                    h = g.conv1d(h, self.p(&format!("{n}.w")), self.p(&format!("{n}.b")), 1, (k - 1) / 2)?;
                    h = g.relu(h);
                    h = self.drop(h)?;
                }
                Ok(h)
            }
            ModelKind::Tcn => {
                let mut h = self.dense(x, "in")?;
                for i in 0..depth {
                    let n = format!("tcn{i}");
                    let d = 1 << i;
                    let y = g.conv1d(h, self.p(&format!("{n}.w")), self.p(&format!("{n}.b")), d, (k - 1) * d)?;
                    let y = g.relu(y);
                    let y = self.drop(y)?;
                    h = g.add(h, y)?;
                }
                Ok(h)
            }
            ModelKind::Lstm | ModelKind::Gru => {
                let mut h = x;
                for i in 0..depth {
                    let n = format!("rnn{i}");
                    let z = self.dense(h, &format!("{n}.ih"))?;
                    h = if cfg.kind == ModelKind::Lstm {
                        g.lstm(z, self.p(&format!("{n}.hh")))?
                    } else {
                        g.gru(z, self.p(&format!("{n}.hh")), self.p(&format!("{n}.bhh")))?
                    };
                    if i + 1 < depth {
                        h = self.drop(h)?;
                    }
                }
                Ok(h)
            }
            ModelKind::Transformer => {
                let mut h = self.dense(x, "in")?;
                if cfg.positional {
                    let l = g.shape(h)[1];
                    let pe = g.constant(positional_encoding(l, cfg.hidden));
                    h = g.add_bias(h, pe)?;
                }
                for i in 0..depth {
                    let n = format!("tf{i}");
                    let a = self.norm(h, &format!("{n}.ln1"))?;
                    let q = self.dense(a, &format!("{n}.q"))?;
                    let kk = self.dense(a, &format!("{n}.k"))?;
                    let v = self.dense(a, &format!("{n}.v"))?;
                    let att = g.attention(q, kk, v, cfg.heads)?;
                    let o = self.dense(att, &format!("{n}.o"))?;
                    let o = self.drop(o)?;
                    h = g.add(h, o)?;
                    let f = self.norm(h, &format!("{n}.ln2"))?;
                    let f = self.dense(f, &format!("{n}.ff1"))?;
                    let f = g.gelu(f);
                    let f = self.dense(f, &format!("{n}.ff2"))?;
                    let f = self.drop(f)?;
                    h = g.add(h, f)?;
                }
                self.norm(h, "out_ln")
            }
            ModelKind::S4d | ModelKind::S5 => {
                let mut h = self.dense(x, "in")?;
                for i in 0..depth {
                    let n = format!("ssm{i}");
                    let vars = self.ssm_vars(&n);
                    let a = self.norm(h, &format!("{n}.ln"))?;
                    let y = if cfg.kind == ModelKind::S4d {
                        let y = g.s4d(a, &vars)?;
                        let y = g.gelu(y);
                        self.dense(y, &format!("{n}.mix"))?
                    } else {
                        let y = g.s5(a, &vars)?;
                        g.gelu(y)
                    };
                    let y = self.drop(y)?;
                    h = g.add(h, y)?;
                }
                Ok(h)
            }
        }
    }

    fn ssm_vars(&self, n: &str) -> SsmVars {
        let v = SSM_FIELDS.map(|f| self.p(&format!("{n}.{f}")));
        SsmVars {
            rho: v[0],
            im: v[1],
            b_re: v[2],
            b_im: v[3],
            c_re: v[4],
            c_im: v[5],
            d: v[6],
            log_dt: v[7],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_stats() {
        let w = Tensor::<f64>::full(&[300, 18], 2.5);
        let f = stat_features(&w).unwrap();
        assert_eq!(f.numel(), 126);
        for ch in 0..18 {
            let s = &f.data()[ch * 7..ch * 7 + 7];
            assert_eq!(s, &[2.5, 2.5, 2.5, 0.0, 2.5, 2.5, 2.5]);
        }
    }

    #[test]
    fn ramp_stats() {
        let mut data = vec![0.0; 300 * 18];
        for t in 0..300 {
            data[t * 18] = (t + 1) as f64 / 300.0;
        }
        let f = stat_features(&Tensor::new(&[300, 18], data).unwrap()).unwrap();
        assert!((f.data()[2] - 0.50167).abs() < 1e-5);
        assert!((f.data()[5] - 0.50167).abs() < 1e-5);
    }

    #[test]
    fn logits_shape_for_every_kind() {
        let x = Tensor::<f64>::from_f64(&[2, 20, 18], &(0..720).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        for kind in ModelKind::ALL {
            let m = Model::<f64>::new(ModelConfig::bench(kind), 5, 1).unwrap();
            let y = m.predict(&x).unwrap();
            assert_eq!(y.shape(), &[2, 5], "{kind}");
            assert!(y.all_finite(), "{kind}");
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let m = Model::<f32>::new(ModelConfig::bench(ModelKind::Cnn), 3, 0).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 10, 17]);
        assert!(matches!(m.predict(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn freezing_head_removes_its_size() {
        let mut m = Model::<f32>::new(ModelConfig::bench(ModelKind::Gru), 4, 0).unwrap();
        let before = m.param_count();
        m.set_trainable("head", false);
        assert_eq!(before - m.param_count(), 48 * 4 + 4);
    }
}
