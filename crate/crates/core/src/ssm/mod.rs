//! Diagonal state space layers: zero-order-hold discretisation, the
//! convolution kernel of the per-channel (S4D) form, the associative scan of
//! the multi-input (S5) form, and single-step recurrent evaluation.
//!
//! Only one mode of each conjugate pair is stored; outputs take `Re(·)`.

mod layers;

pub use layers::SsmVars;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::numerics::{Complex, ComplexVector, Real, Tensor};

/// How inputs couple to the diagonal state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// `h` independent single-input systems of `m` modes each (S4D).
    PerChannel,
    /// One `m`-mode state shared by all `h` channels (S5).
    Mimo,
}

/// Continuous-time parameters.
///
/// | field | `PerChannel` | `Mimo` |
/// |---|---|---|
/// | `rho`, `im` | `[h, m]` | `[m]` |
/// | `b_re`, `b_im` | `[h, m]` | `[m, h]` |
/// | `c_re`, `c_im` | `[h, m]` | `[h, m]` |
/// | `d` | `[h]` | `[h]` |
/// | `log_dt` | `[h]` | `[m]` |
///
/// The diagonal of A is `−exp(rho) + i·im`, so its real part is always negative.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceParams<T: Real> {
    pub coupling: Coupling,
    pub rho: Tensor<T>,
    pub im: Tensor<T>,
    pub b_re: Tensor<T>,
    pub b_im: Tensor<T>,
    pub c_re: Tensor<T>,
    pub c_im: Tensor<T>,
    pub d: Tensor<T>,
    pub log_dt: Tensor<T>,
}

impl<T: Real> StateSpaceParams<T> {
    pub fn channels(&self) -> usize {
        self.d.numel()
    }

    /// Modes per system (per channel for `PerChannel`).
    pub fn modes(&self) -> usize {
        *self.c_re.shape().last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, m) = (self.channels(), self.modes());
        let (a_shape, b_shape, dt_shape): (Vec<usize>, Vec<usize>, Vec<usize>) = match self.coupling {
            Coupling::PerChannel => (vec![h, m], vec![h, m], vec![h]),
            Coupling::Mimo => (vec![m], vec![m, h], vec![m]),
        };
        let checks: [(&str, &Tensor<T>, &[usize]); 8] = [
            ("rho", &self.rho, &a_shape),
            ("im", &self.im, &a_shape),
            ("b_re", &self.b_re, &b_shape),
            ("b_im", &self.b_im, &b_shape),
            ("c_re", &self.c_re, &[h, m]),
            ("c_im", &self.c_im, &[h, m]),
            ("d", &self.d, &[h]),
            ("log_dt", &self.log_dt, &dt_shape),
        ];
        for (name, t, want) in checks {
            if t.shape() != want {
                return Err(Error::Config(format!(
                    "state space field {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        if h == 0 || m == 0 {
            return Err(Error::Config("state space needs at least one channel and one mode".into()));
        }
        Ok(())
    }

    /// Continuous eigenvalue of flattened mode `j`.
    pub fn a(&self, j: usize) -> Complex<T> {
        Complex::new(-self.rho.data()[j].exp(), self.im.data()[j])
    }

    /// Step size of flattened mode `j`.
    pub fn dt(&self, j: usize) -> T {
        let i = match self.coupling {
            Coupling::PerChannel => j / self.modes(),
            Coupling::Mimo => j,
        };
        self.log_dt.data()[i].exp()
    }

    fn c(&self, i: usize) -> Complex<T> {
        Complex::new(self.c_re.data()[i], self.c_im.data()[i])
    }
}

/// Zero-order-hold discretisation of a [`StateSpaceParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSystem<T: Real> {
    pub coupling: Coupling,
    pub channels: usize,
    pub modes: usize,
    /// One entry per flattened mode.
    pub a_bar: ComplexVector<T>,
    /// Same layout as `b_re`/`b_im` of the source parameters.
    pub b_bar: ComplexVector<T>,
}

impl<T: Real> DiscreteSystem<T> {
    fn state_len(&self) -> usize {
        self.a_bar.len()
    }
}

/// `(exp(Δa), (exp(Δa) − 1)/a)` for one mode.
pub(crate) fn zoh<T: Real>(a: Complex<T>, dt: T) -> (Complex<T>, Complex<T>) {
    let abar = a.scale(dt).exp();
    (abar, (abar - Complex::one()) / a)
}

pub fn discretize_zoh<T: Real>(p: &StateSpaceParams<T>) -> Result<DiscreteSystem<T>> {
    p.validate()?;
    let (h, m) = (p.channels(), p.modes());
    let n = p.rho.numel();
    let mut a_bar = ComplexVector::zeros(n);
    let mut scale = Vec::with_capacity(n);
    for j in 0..n {
        let (ab, e) = zoh(p.a(j), p.dt(j));
        a_bar.set(j, ab);
        scale.push(e);
    }
    let mut b_bar = ComplexVector::zeros(p.b_re.numel());
    for i in 0..b_bar.len() {
        // PerChannel: B[h, m] pairs with flattened mode i; Mimo: B[m, h] row i / h
        let j = match p.coupling {
            Coupling::PerChannel => i,
            Coupling::Mimo => i / h,
        };
        b_bar.set(i, scale[j] * Complex::new(p.b_re.data()[i], p.b_im.data()[i]));
    }
    Ok(DiscreteSystem {
        coupling: p.coupling,
        channels: h,
        modes: m,
        a_bar,
        b_bar,
    })
}

fn require(sys_coupling: Coupling, want: Coupling, op: &str) -> Result<()> {
    if sys_coupling != want {
        return Err(Error::Config(format!("{op} requires {want:?} coupling, got {sys_coupling:?}")));
    }
    Ok(())
}

/// `K[h, l] = Re Σ_m C[h,m]·Ā[h,m]^l·B̄[h,m]` for `l < len`, by running powers.
pub fn s4d_kernel<T: Real>(sys: &DiscreteSystem<T>, c_re: &Tensor<T>, c_im: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    require(sys.coupling, Coupling::PerChannel, "s4d_kernel")?;
    let (h, m) = (sys.channels, sys.modes);
    if c_re.shape() != [h, m] || c_im.shape() != [h, m] {
        return Err(Error::shape("s4d_kernel", c_re.shape(), &[h, m]));
    }
    if len == 0 {
        return Err(Error::InvalidLength {
            op: "s4d_kernel",
            len,
            reason: "kernel length must be at least 1",
        });
    }
    let mut k = vec![T::zero(); h * len];
    for j in 0..h * m {
        let w = Complex::new(c_re.data()[j], c_im.data()[j]) * sys.b_bar.get(j);
        let ab = sys.a_bar.get(j);
        let row = &mut k[(j / m) * len..(j / m + 1) * len];
        let mut p = w;
        for v in row.iter_mut() {
            *v = *v + p.re;
            p = p * ab;
        }
    }
    Tensor::new(&[h, len], k)
}

/// Evaluation order of the linear recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanMode {
    /// Work-efficient up-sweep/down-sweep tree with a fixed combination order.
    #[default]
    Tree,
    /// Plain left-to-right loop.
    Sequential,
}

/// Solves `x_k = a ∘ x_{k−1} + v_k` (`x_{−1} = 0`) in place. `v` is `[L, m]`
/// row-major with split real and imaginary parts.
pub fn linear_scan<T: Real>(a: &ComplexVector<T>, v_re: &mut [T], v_im: &mut [T], mode: ScanMode) {
    let m = a.len();
    let l = v_re.len() / m.max(1);
    match mode {
        ScanMode::Sequential => {
            for k in 1..l {
                for j in 0..m {
                    let prev = Complex::new(v_re[(k - 1) * m + j], v_im[(k - 1) * m + j]);
                    let x = a.get(j) * prev + Complex::new(v_re[k * m + j], v_im[k * m + j]);
                    v_re[k * m + j] = x.re;
                    v_im[k * m + j] = x.im;
                }
            }
        }
        ScanMode::Tree => tree_scan(a, v_re, v_im, m, l),
    }
}

fn tree_scan<T: Real>(a: &ComplexVector<T>, v_re: &mut [T], v_im: &mut [T], m: usize, l: usize) {
    if l <= 1 {
        return;
    }
    let n = l.next_power_of_two();
    // element k is (A_k, b_k); combine(e1, e2) = (a2·a1, a2·b1 + b2)
    let mut ea = vec![Complex::<T>::one(); n * m];
    let mut eb = vec![Complex::<T>::zero(); n * m];
    for k in 0..l {
        for j in 0..m {
            ea[k * m + j] = a.get(j);
            eb[k * m + j] = Complex::new(v_re[k * m + j], v_im[k * m + j]);
        }
    }
    let mut half = 1;
    while half < n {
        for i in (2 * half - 1..n).step_by(2 * half) {
            let left = i - half;
            for j in 0..m {
                let (a1, b1) = (ea[left * m + j], eb[left * m + j]);
                let (a2, b2) = (ea[i * m + j], eb[i * m + j]);
                ea[i * m + j] = a2 * a1;
                eb[i * m + j] = a2 * b1 + b2;
            }
        }
        half *= 2;
    }
    for j in 0..m {
        ea[(n - 1) * m + j] = Complex::one();
        eb[(n - 1) * m + j] = Complex::zero();
    }
    while half > 1 {
        half /= 2;
        for i in (2 * half - 1..n).step_by(2 * half) {
            let left = i - half;
            for j in 0..m {
                let (la, lb) = (ea[left * m + j], eb[left * m + j]);
                let (pa, pb) = (ea[i * m + j], eb[i * m + j]);
                ea[left * m + j] = pa;
                eb[left * m + j] = pb;
                ea[i * m + j] = la * pa;
                eb[i * m + j] = la * pb + lb;
            }
        }
    }
    // inclusive = combine(exclusive prefix, own element)
    for k in 0..l {
        for j in 0..m {
            let x = a.get(j) * eb[k * m + j] + Complex::new(v_re[k * m + j], v_im[k * m + j]);
            v_re[k * m + j] = x.re;
            v_im[k * m + j] = x.im;
        }
    }
}

/// Multi-input scan `x_k = Āx_{k−1} + B̄u_k`, `y_k = Re(Cx_k) + d∘u_k`
/// over `u [L, h]` from a zero state.
pub fn s5_scan<T: Real>(
    sys: &DiscreteSystem<T>,
    c_re: &Tensor<T>,
    c_im: &Tensor<T>,
    d: &Tensor<T>,
    u: &Tensor<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    require(sys.coupling, Coupling::Mimo, "s5_scan")?;
    let (h, m) = (sys.channels, sys.modes);
    let &[l, hu] = u.shape() else {
        return Err(Error::shape("s5_scan", u.shape(), &[0, h]));
    };
    if hu != h || c_re.shape() != [h, m] || c_im.shape() != [h, m] || d.shape() != [h] {
        return Err(Error::shape("s5_scan", u.shape(), c_re.shape()));
    }
    let mut vr = vec![T::zero(); l * m];
    let mut vi = vec![T::zero(); l * m];
    crate::numerics::gemm(u.data(), false, &sys.b_bar.re, true, &mut vr, l, h, m, false);
    crate::numerics::gemm(u.data(), false, &sys.b_bar.im, true, &mut vi, l, h, m, false);
    linear_scan(&sys.a_bar, &mut vr, &mut vi, mode);
    let mut y = vec![T::zero(); l * h];
    crate::numerics::gemm(&vr, false, c_re.data(), true, &mut y, l, m, h, false);
    let neg_ci: Vec<T> = c_im.data().iter().map(|&v| -v).collect();
    crate::numerics::gemm(&vi, false, &neg_ci, true, &mut y, l, m, h, true);
    for k in 0..l {
        for c in 0..h {
            y[k * h + c] = y[k * h + c] + d.data()[c] * u.data()[k * h + c];
        }
    }
    Tensor::new(&[l, h], y)
}

/// Hidden state of a discrete system, one entry per flattened mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmState<T: Real> {
    pub x: ComplexVector<T>,
}

impl<T: Real> SsmState<T> {
    pub fn zeros(sys: &DiscreteSystem<T>) -> Self {
        SsmState {
            x: ComplexVector::zeros(sys.state_len()),
        }
    }
}

/// One recurrent update for either coupling; `u_t` and the output have one
/// value per channel.
pub fn step<T: Real>(
    sys: &DiscreteSystem<T>,
    params: &StateSpaceParams<T>,
    state: &SsmState<T>,
    u_t: &[T],
) -> Result<(Vec<T>, SsmState<T>)> {
    let (h, m) = (sys.channels, sys.modes);
    if u_t.len() != h || state.x.len() != sys.state_len() {
        return Err(Error::shape("ssm step", &[u_t.len()], &[h]));
    }
    if state.x.re.iter().chain(&state.x.im).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite state space state".into()));
    }
    let mut next = ComplexVector::zeros(sys.state_len());
    let mut y: Vec<T> = (0..h).map(|c| params.d.data()[c] * u_t[c]).collect();
    match sys.coupling {
        Coupling::PerChannel => {
            for j in 0..h * m {
                let x = sys.a_bar.get(j) * state.x.get(j) + sys.b_bar.get(j).scale(u_t[j / m]);
                next.set(j, x);
                y[j / m] = y[j / m] + (params.c(j) * x).re;
            }
        }
        Coupling::Mimo => {
            for j in 0..m {
                let mut x = sys.a_bar.get(j) * state.x.get(j);
                for (c, &u) in u_t.iter().enumerate() {
                    x += sys.b_bar.get(j * h + c).scale(u);
                }
                next.set(j, x);
            }
            for (c, yc) in y.iter_mut().enumerate() {
                for j in 0..m {
                    *yc = *yc + (params.c(c * m + j) * next.get(j)).re;
                }
            }
        }
    }
    Ok((y, SsmState { x: next }))
}

/// Runs [`step`] over `u [L, h]` from a zero state.
pub fn rollout<T: Real>(params: &StateSpaceParams<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let sys = discretize_zoh(params)?;
    let h = sys.channels;
    if u.shape().len() != 2 || u.shape()[1] != h {
        return Err(Error::shape("rollout", u.shape(), &[0, h]));
    }
    let mut state = SsmState::zeros(&sys);
    let mut out = Vec::with_capacity(u.numel());
    for row in u.data().chunks(h) {
        let (y, s) = step(&sys, params, &state, row)?;
        out.extend(y);
        state = s;
    }
    Tensor::new(u.shape(), out)
}

/// Convolutional evaluation of a per-channel system over `u [L, h]`.
pub fn s4d_apply<T: Real>(params: &StateSpaceParams<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let sys = discretize_zoh(params)?;
    let (h, l) = (sys.channels, u.shape()[0]);
    if u.shape() != [l, h] {
        return Err(Error::shape("s4d_apply", u.shape(), &[l, h]));
    }
    let k = s4d_kernel(&sys, &params.c_re, &params.c_im, l)?;
    let mut y = vec![T::zero(); l * h];
    for c in 0..h {
        let sig: Vec<T> = (0..l).map(|t| u.data()[t * h + c]).collect();
        let conv = crate::numerics::causal_conv_fft(
            &Tensor::new(&[l], sig.clone())?,
            &Tensor::new(&[l], k.data()[c * l..(c + 1) * l].to_vec())?,
        )?;
        for t in 0..l {
            y[t * h + c] = conv.data()[t] + params.d.data()[c] * sig[t];
        }
    }
    Tensor::new(&[l, h], y)
}

fn lin_init<T: Real>(modes: usize) -> (Vec<T>, Vec<T>) {
    let rho = vec![T::c(0.5f64.ln()); modes];
    let im = (0..modes).map(|k| T::c(std::f64::consts::PI * k as f64)).collect();
    (rho, im)
}

fn check_even(n: usize) -> Result<usize> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::Config(format!("state size must be a positive even number, got {n}")));
    }
    Ok(n / 2)
}

fn normals<T: Real>(rng: &mut ChaCha8Rng, count: usize, std: f64) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..count).map(|_| T::c(dist.sample(rng))).collect()
}

fn log_dts<T: Real>(rng: &mut ChaCha8Rng, count: usize) -> Vec<T> {
    let dist = Uniform::new(0.001f64.ln(), 0.1f64.ln()).expect("valid range");
    (0..count).map(|_| T::c(dist.sample(rng))).collect()
}

/// Per-channel initialisation: `a_k = −½ + iπk`, `B = 1`, complex standard
/// normal `C`, `D = 1`, `log Δ ~ U(log 0.001, log 0.1)`. `n` is the full
/// (conjugate-pair) state size; `n/2` modes are stored.
pub fn init_s4d<T: Real>(n: usize, h: usize, seed: u64) -> Result<StateSpaceParams<T>> {
    let m = check_even(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rho1, im1) = lin_init::<T>(m);
    let rho = rho1.iter().cycle().take(h * m).copied().collect();
    let im = im1.iter().cycle().take(h * m).copied().collect();
    let c_re = normals(&mut rng, h * m, std::f64::consts::FRAC_1_SQRT_2);
    let c_im = normals(&mut rng, h * m, std::f64::consts::FRAC_1_SQRT_2);
    let p = StateSpaceParams {
        coupling: Coupling::PerChannel,
        rho: Tensor::new(&[h, m], rho)?,
        im: Tensor::new(&[h, m], im)?,
        b_re: Tensor::full(&[h, m], T::one()),
        b_im: Tensor::zeros(&[h, m]),
        c_re: Tensor::new(&[h, m], c_re)?,
        c_im: Tensor::new(&[h, m], c_im)?,
        d: Tensor::full(&[h], T::one()),
        log_dt: Tensor::new(&[h], log_dts(&mut rng, h))?,
    };
    p.validate()?;
    Ok(p)
}

/// Multi-input initialisation: same eigenvalues, `B ~ CN(0, 1/h)`,
/// `C ~ CN(0, 1/m)`, `D = 1`, one step size per mode.
pub fn init_s5<T: Real>(n: usize, h: usize, seed: u64) -> Result<StateSpaceParams<T>> {
    let m = check_even(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rho, im) = lin_init::<T>(m);
    let bs = (0.5 / h.max(1) as f64).sqrt();
    let cs = (0.5 / m as f64).sqrt();
    let p = StateSpaceParams {
        coupling: Coupling::Mimo,
        rho: Tensor::new(&[m], rho)?,
        im: Tensor::new(&[m], im)?,
        b_re: Tensor::new(&[m, h], normals(&mut rng, m * h, bs))?,
        b_im: Tensor::new(&[m, h], normals(&mut rng, m * h, bs))?,
        c_re: Tensor::new(&[h, m], normals(&mut rng, h * m, cs))?,
        c_im: Tensor::new(&[h, m], normals(&mut rng, h * m, cs))?,
        d: Tensor::full(&[h], T::one()),
        log_dt: Tensor::new(&[m], log_dts(&mut rng, m))?,
    };
    p.validate()?;
    Ok(p)
}
