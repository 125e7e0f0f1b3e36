//! Brute-force reference implementations for checking the fast paths.
//! Everything here is 64-bit, deliberately naive, and shares no code with
//! the routines it checks beyond primitive arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::numerics::gradcheck::{check_gradients, max_rel_err};
use crate::numerics::{Graph, Tensor, Var};
use crate::ssm::{Coupling, SsmVars, StateSpaceParams};

/// Outcome of comparing a fast path against an oracle.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub values: Vec<f64>,
    pub max_abs_diff: f64,
    pub tolerance: f64,
}

impl OracleResult {
    pub fn compare(oracle: Vec<f64>, fast: &[f64], tolerance: f64) -> Self {
        let max_abs_diff = oracle
            .iter()
            .zip(fast)
            .map(|(a, b)| (a - b).abs())
            .fold(if oracle.len() == fast.len() { 0.0 } else { f64::INFINITY }, f64::max);
        OracleResult {
            values: oracle,
            max_abs_diff,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_abs_diff <= self.tolerance
    }
}

/// Direct double-loop causal convolution.
pub fn oracle_conv(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; signal.len()];
    for t in 0..signal.len() {
        for s in 0..=t {
            if s < kernel.len() {
                y[t] += kernel[s] * signal[t - s];
            }
        }
    }
    y
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Sequential evaluation of the discretised system on `u` (`L` rows of `h`
/// values), working from the continuous parameters.
pub fn oracle_recurrence(p: &StateSpaceParams<f64>, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = p.d.numel();
    let m = *p.c_re.shape().last().unwrap();
    let per_channel = p.coupling == Coupling::PerChannel;
    let systems = if per_channel { h } else { 1 };
    // per system s and mode j: (Ā, B̄ row over inputs)
    let mut abar = vec![vec![(0.0, 0.0); m]; systems];
    let mut bbar = vec![vec![vec![(0.0, 0.0); h]; m]; systems];
    for s in 0..systems {
        for j in 0..m {
            let idx = if per_channel { s * m + j } else { j };
            let a = (-p.rho.data()[idx].exp(), p.im.data()[idx]);
            let dt = p.log_dt.data()[if per_channel { s } else { j }].exp();
            let mag = (a.0 * dt).exp();
            let ab = (mag * (a.1 * dt).cos(), mag * (a.1 * dt).sin());
            let num = (ab.0 - 1.0, ab.1);
            let den = a.0 * a.0 + a.1 * a.1;
            let e = ((num.0 * a.0 + num.1 * a.1) / den, (num.1 * a.0 - num.0 * a.1) / den);
            abar[s][j] = ab;
            for c in 0..h {
                let bi = if per_channel {
                    if c != s {
                        continue;
                    }
                    s * m + j
                } else {
                    j * h + c
                };
                bbar[s][j][c] = cmul(e, (p.b_re.data()[bi], p.b_im.data()[bi]));
            }
        }
    }
    let mut x = vec![vec![(0.0, 0.0); m]; systems];
    let mut out = Vec::with_capacity(u.len());
    for row in u {
        for s in 0..systems {
            for j in 0..m {
                let mut v = cmul(abar[s][j], x[s][j]);
                for c in 0..h {
                    v.0 += bbar[s][j][c].0 * row[c];
                    v.1 += bbar[s][j][c].1 * row[c];
                }
                x[s][j] = v;
            }
        }
        let mut y = vec![0.0; h];
        for (c, yc) in y.iter_mut().enumerate() {
            let s = if per_channel { c } else { 0 };
            for j in 0..m {
                let ci = (p.c_re.data()[c * m + j], p.c_im.data()[c * m + j]);
                *yc += cmul(ci, x[s][j]).0;
            }
            *yc += p.d.data()[c] * row[c];
        }
        out.push(y);
    }
    out
}

/// A randomly parameterised system for equivalence checks: decay rates in
/// `[0.05, 1]`, oscillation up to `π·m`, step sizes in `[0.001, 0.1]`,
/// Gaussian `B` and `D`, and `C` scaled by `1/√m`. `n` is the full (even) state size.
pub fn random_system(coupling: Coupling, n: usize, h: usize, seed: u64) -> StateSpaceParams<f64> {
    let m = (n / 2).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a_len, b_len, dt_len) = match coupling {
        Coupling::PerChannel => (h * m, h * m, h),
        Coupling::Mimo => (m, m * h, m),
    };
    let (a_shape, b_shape) = match coupling {
        Coupling::PerChannel => (vec![h, m], vec![h, m]),
        Coupling::Mimo => (vec![m], vec![m, h]),
    };
    let gauss = |rng: &mut ChaCha8Rng, len: usize, std: f64| -> Vec<f64> {
        let dist = Normal::new(0.0, std).expect("positive std");
        (0..len).map(|_| dist.sample(rng)).collect()
    };
    let scale = 1.0 / (m as f64).sqrt();
    let rho = (0..a_len).map(|_| rng.random_range(0.05f64..1.0).ln()).collect();
    let im = (0..a_len).map(|_| rng.random_range(0.0..std::f64::consts::PI * m as f64)).collect();
    let b_re = gauss(&mut rng, b_len, 1.0);
    let b_im = gauss(&mut rng, b_len, 1.0);
    let c_re = gauss(&mut rng, h * m, scale);
    let c_im = gauss(&mut rng, h * m, scale);
    let d = gauss(&mut rng, h, 1.0);
    let log_dt = (0..dt_len).map(|_| rng.random_range(0.001f64.ln()..0.1f64.ln())).collect();
    let t = |shape: &[usize], v: Vec<f64>| Tensor::new(shape, v).expect("shape");
    StateSpaceParams {
        coupling,
        rho: t(&a_shape, rho),
        im: t(&a_shape, im),
        b_re: t(&b_shape, b_re),
        b_im: t(&b_shape, b_im),
        c_re: t(&[h, m], c_re),
        c_im: t(&[h, m], c_im),
        d: t(&[h], d),
        log_dt: t(&[dt_len], log_dt),
    }
}

/// Uniform `[-1, 1]` input of shape `[L, h]`.
pub fn random_signal(l: usize, h: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[l, h], (0..l * h).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Casts every field of a system.
pub fn cast_system<U: crate::numerics::Real>(p: &StateSpaceParams<f64>) -> StateSpaceParams<U> {
    StateSpaceParams {
        coupling: p.coupling,
        rho: p.rho.cast(),
        im: p.im.cast(),
        b_re: p.b_re.cast(),
        b_im: p.b_im.cast(),
        c_re: p.c_re.cast(),
        c_im: p.c_im.cast(),
        d: p.d.cast(),
        log_dt: p.log_dt.cast(),
    }
}

/// Majority vote by sorting classes on (votes, summed probability, −index).
pub fn oracle_vote(window_probs: &[Vec<f64>]) -> usize {
    let c = window_probs[0].len();
    let top = |p: &Vec<f64>| {
        let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        p.iter().position(|&v| v == best).unwrap()
    };
    let mut table: Vec<(usize, f64, usize)> = (0..c)
        .map(|j| {
            let votes = window_probs.iter().filter(|p| top(p) == j).count();
            let mass = window_probs.iter().map(|p| p[j]).sum();
            (votes, mass, j)
        })
        .collect();
    table.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.partial_cmp(&a.1).unwrap()).then(a.2.cmp(&b.2)));
    table[0].2
}

/// Rank of `true_class` after a full sort by descending score, equal scores
/// ordered by ascending class index.
pub fn oracle_rank(scores: &[f64], true_class: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&c| c == true_class).unwrap() + 1
}

/// min, max, mean, population std, q25, q50, q75 of one channel, using a
/// full sort and linear interpolation between order statistics.
pub fn oracle_stats(channel: &[f64]) -> [f64; 7] {
    let n = channel.len() as f64;
    let mut s = channel.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let q = |p: f64| {
        let pos = p * (n - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    [s[0], s[s.len() - 1], mean, var.sqrt(), q(0.25), q(0.5), q(0.75)]
}

/// Result of finite-difference checking one layer type.
#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub probes: usize,
    pub max_rel_err: f64,
}

type LossFn = Box<dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Contracts `y` with a fixed random tensor so every output entry matters.
fn project(g: &Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(rand_tensor(&mut rng, &g.shape(y), 1.0));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn ssm_vars(v: &[Var]) -> SsmVars {
    SsmVars {
        rho: v[1],
        im: v[2],
        b_re: v[3],
        b_im: v[4],
        c_re: v[5],
        c_im: v[6],
        d: v[7],
        log_dt: v[8],
    }
}

fn ssm_case(rng: &mut ChaCha8Rng, coupling: Coupling) -> Vec<Tensor<f64>> {
    let (b, l, h, m) = (2, 7, 3, 4);
    let a_shape: &[usize] = if coupling == Coupling::PerChannel { &[h, m] } else { &[m] };
    let b_shape: &[usize] = if coupling == Coupling::PerChannel { &[h, m] } else { &[m, h] };
    let dt_len = if coupling == Coupling::PerChannel { h } else { m };
    let mut rho = rand_tensor(rng, a_shape, 0.5);
    rho = rho.map(|v| v - 0.7);
    let im = rand_tensor(rng, a_shape, 3.0);
    let log_dt = rand_tensor(rng, &[dt_len], 0.5).map(|v| v - 1.5);
    vec![
        rand_tensor(rng, &[b, l, h], 1.0),
        rho,
        im,
        rand_tensor(rng, b_shape, 1.0),
        rand_tensor(rng, b_shape, 1.0),
        rand_tensor(rng, &[h, m], 1.0),
        rand_tensor(rng, &[h, m], 1.0),
        rand_tensor(rng, &[h], 1.0),
        log_dt,
    ]
}

/// Finite-difference check (step `1e-5`, 64-bit) of every differentiable
/// layer type, with at least `min_probes` probed entries per layer.
pub fn layer_gradient_suite(seed: u64, min_probes: usize) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, LossFn)> = Vec::new();
    let (b, l, h) = (2, 6, 4);

    cases.push((
        "linear",
        vec![rand_tensor(&mut rng, &[b, l, h], 1.0), rand_tensor(&mut rng, &[h, 5], 1.0), rand_tensor(&mut rng, &[5], 1.0)],
        Box::new(|g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            project(g, y, 1)
        }),
    ));
    cases.push((
        "matmul",
        vec![rand_tensor(&mut rng, &[3, 4], 1.0), rand_tensor(&mut rng, &[4, 2], 1.0)],
        Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, 2)
        }),
    ));
    cases.push((
        "conv1d_causal_dilated",
        vec![rand_tensor(&mut rng, &[b, l, 3], 1.0), rand_tensor(&mut rng, &[3, 3, 2], 1.0), rand_tensor(&mut rng, &[2], 1.0)],
        Box::new(|g, v| {
            let y = g.conv1d(v[0], v[1], v[2], 2, 4)?;
            project(g, y, 3)
        }),
    ));
    cases.push((
        "conv1d_centred",
        vec![rand_tensor(&mut rng, &[b, l, 3], 1.0), rand_tensor(&mut rng, &[5, 3, 2], 1.0), rand_tensor(&mut rng, &[2], 1.0)],
        Box::new(|g, v| {
            let y = g.conv1d(v[0], v[1], v[2], 1, 2)?;
            project(g, y, 4)
        }),
    ));
    cases.push((
        "layer_norm",
        vec![rand_tensor(&mut rng, &[b, l, h], 1.0), rand_tensor(&mut rng, &[h], 1.0), rand_tensor(&mut rng, &[h], 1.0)],
        Box::new(|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            project(g, y, 5)
        }),
    ));
    cases.push((
        "attention",
        vec![
            rand_tensor(&mut rng, &[b, l, h], 1.0),
            rand_tensor(&mut rng, &[b, l, h], 1.0),
            rand_tensor(&mut rng, &[b, l, h], 1.0),
        ],
        Box::new(|g, v| {
            let y = g.attention(v[0], v[1], v[2], 2)?;
            project(g, y, 6)
        }),
    ));
    cases.push((
        "lstm",
        vec![rand_tensor(&mut rng, &[b, l, 4 * 3], 1.0), rand_tensor(&mut rng, &[3, 4 * 3], 0.5)],
        Box::new(|g, v| {
            let y = g.lstm(v[0], v[1])?;
            project(g, y, 7)
        }),
    ));
    cases.push((
        "gru",
        vec![
            rand_tensor(&mut rng, &[b, l, 3 * 3], 1.0),
            rand_tensor(&mut rng, &[3, 3 * 3], 0.5),
            rand_tensor(&mut rng, &[3 * 3], 0.5),
        ],
        Box::new(|g, v| {
            let y = g.gru(v[0], v[1], v[2])?;
            project(g, y, 8)
        }),
    ));
    cases.push((
        "s4d",
        ssm_case(&mut rng, Coupling::PerChannel),
        Box::new(|g, v| {
            let y = g.s4d(v[0], &ssm_vars(v))?;
            project(g, y, 9)
        }),
    ));
    cases.push((
        "s5",
        ssm_case(&mut rng, Coupling::Mimo),
        Box::new(|g, v| {
            let y = g.s5(v[0], &ssm_vars(v))?;
            project(g, y, 10)
        }),
    ));
    cases.push((
        "softmax_cross_entropy",
        vec![rand_tensor(&mut rng, &[4, 5], 2.0)],
        Box::new(|g, v| g.softmax_cross_entropy(v[0], &[0, 3, 4, 3])),
    ));
    cases.push((
        "elementwise",
        vec![rand_tensor(&mut rng, &[b, l, h], 1.0), rand_tensor(&mut rng, &[b, l, h], 1.0), rand_tensor(&mut rng, &[h], 1.0)],
        Box::new(|g, v| {
            let a = g.gelu(v[0]);
            let c = g.tanh(v[1]);
            let s = g.sigmoid(v[0]);
            let e = g.exp(g.scale(v[1], 0.5));
            let r = g.relu(v[1]);
            let q = g.square(v[0]);
            let x = g.mul(a, c)?;
            let x = g.add(x, s)?;
            let x = g.sub(x, e)?;
            let x = g.add(x, r)?;
            let x = g.add(x, q)?;
            let x = g.add_bias(x, v[2])?;
            let pooled = g.mean_time(x)?;
            project(g, pooled, 11)
        }),
    ));
    cases.push((
        "dropout",
        vec![rand_tensor(&mut rng, &[b, l, h], 1.0)],
        Box::new(|g, v| {
            // fixed mask: same seed at every evaluation
            let y = g.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(12))?;
            project(g, y, 12)
        }),
    ));

    let mut out = Vec::new();
    for (name, params, f) in cases {
        let per = min_probes.div_ceil(params.len());
        let mut probes = Vec::new();
        while probes.len() < min_probes {
            probes.extend(check_gradients(&params, &f, 1e-5, per, &mut rng)?);
        }
        out.push(LayerCheck {
            layer: name,
            probes: probes.len(),
            max_rel_err: max_rel_err(&probes),
        });
    }
    Ok(out)
}
