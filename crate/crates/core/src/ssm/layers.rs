//! Differentiable state space layers on the tape. Both take and return
//! `[batch, time, channels]`.

use super::{linear_scan, zoh, ScanMode};
use crate::error::{Error, Result};
use crate::numerics::fft::{conv_pair_with_spectrum, conv_size, kernel_spectrum};
use crate::numerics::{gemm, Complex, ComplexVector, FftPlan, Graph, Real, Tensor, Var};

/// Tape handles of one layer's parameters; shapes as in
/// [`StateSpaceParams`](super::StateSpaceParams).
#[derive(Clone, Copy, Debug)]
pub struct SsmVars {
    pub rho: Var,
    pub im: Var,
    pub b_re: Var,
    pub b_im: Var,
    pub c_re: Var,
    pub c_im: Var,
    pub d: Var,
    pub log_dt: Var,
}

impl SsmVars {
    fn inputs(&self, u: Var) -> [Var; 9] {
        [u, self.rho, self.im, self.b_re, self.b_im, self.c_re, self.c_im, self.d, self.log_dt]
    }
}

fn cx<T: Real>(re: &[T], im: &[T], i: usize) -> Complex<T> {
    Complex::new(re[i], im[i])
}

/// Gradient of the loss w.r.t. `a` and `Δ` given gradients w.r.t.
/// `Ā = exp(Δa)` and `E = (Ā − 1)/a`.
fn zoh_backward<T: Real>(a: Complex<T>, dt: T, abar: Complex<T>, g_abar: Complex<T>, g_e: Complex<T>) -> (Complex<T>, T) {
    let one = Complex::one();
    let inv_a = one / a;
    let g_total = g_abar + g_e * inv_a.conj();
    let de_da = -((abar - one) * inv_a * inv_a);
    let g_a = g_total * abar.scale(dt).conj() + g_e * de_da.conj();
    let g_dt = (g_total * (a * abar).conj()).re;
    (g_a, g_dt)
}

fn check_shape(op: &'static str, t: &Tensor<impl Real>, want: &[usize]) -> Result<()> {
    if t.shape() != want {
        return Err(Error::shape(op, t.shape(), want));
    }
    Ok(())
}

/// Extracts column `c` of `[B, L, H]` for batch `b`.
fn gather<T: Real>(x: &[T], b: usize, c: usize, l: usize, h: usize, out: &mut [T]) {
    for (t, o) in out.iter_mut().enumerate() {
        *o = x[(b * l + t) * h + c];
    }
}

impl<T: Real> Graph<T> {
    /// Per-channel diagonal layer evaluated as an FFT convolution with its
    /// kernel, plus feedthrough.
    pub fn s4d(&self, u: Var, p: &SsmVars) -> Result<Var> {
        let inputs = p.inputs(u);
        let vals: Vec<_> = inputs.iter().map(|&v| self.value(v)).collect();
        let &[bsz, l, h] = vals[0].shape() else {
            return Err(Error::shape("s4d", vals[0].shape(), &[0, 0, 0]));
        };
        let m = *vals[5].shape().last().unwrap_or(&0);
        for (i, t) in vals.iter().enumerate().skip(1) {
            let want: &[usize] = if i >= 7 { &[h] } else { &[h, m] };
            check_shape("s4d", t, want)?;
        }
        let (rho, im) = (vals[1].data(), vals[2].data());
        let (b_re, b_im, c_re, c_im) = (vals[3].data(), vals[4].data(), vals[5].data(), vals[6].data());
        let (d, log_dt) = (vals[7].data().to_vec(), vals[8].data());

        let mut modes = Vec::with_capacity(h * m);
        for j in 0..h * m {
            let a = Complex::new(-rho[j].exp(), im[j]);
            let dt = log_dt[j / m].exp();
            let (abar, e) = zoh(a, dt);
            let b = cx(b_re, b_im, j);
            let c = cx(c_re, c_im, j);
            modes.push(Mode { a, dt, abar, e, b, c });
        }
        let mut kernel = vec![T::zero(); h * l];
        for (j, md) in modes.iter().enumerate() {
            let mut pw = md.c * md.e * md.b;
            for v in &mut kernel[(j / m) * l..(j / m + 1) * l] {
                *v = *v + pw.re;
                pw = pw * md.abar;
            }
        }

        let plan = FftPlan::<T>::new(conv_size(l))?;
        let n = plan.len();
        let (mut re, mut im_buf) = (vec![T::zero(); n], vec![T::zero(); n]);
        let mut sa = vec![T::zero(); l];
        let mut oa = vec![T::zero(); l];
        let ud = vals[0].data();
        let mut y = vec![T::zero(); bsz * l * h];
        for c in 0..h {
            let spec = kernel_spectrum(&plan, &kernel[c * l..(c + 1) * l]);
            // one sequence per transform: packing two rows into the real and
            // imaginary parts would make a row's output depend on its neighbour
            for b0 in 0..bsz {
                gather(ud, b0, c, l, h, &mut sa);
                conv_pair_with_spectrum(&plan, &spec, &sa, None, &mut re, &mut im_buf, &mut oa, None);
                for t in 0..l {
                    let i = (b0 * l + t) * h + c;
                    y[i] = oa[t] + d[c] * ud[i];
                }
            }
        }
        let out = Tensor::new(&[bsz, l, h], y)?;
        drop(vals);

        Ok(self.custom(&inputs, out, move |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, need: &[bool]| {
            let (gd, ud) = (g.data(), inp[0].data());
            let mut grads: Vec<Option<Tensor<T>>> = vec![None; 9];
            let (mut re, mut im) = (vec![T::zero(); n], vec![T::zero(); n]);
            let (mut sa, mut sb) = (vec![T::zero(); l], vec![T::zero(); l]);
            let (mut oa, mut ob) = (vec![T::zero(); l], vec![T::zero(); l]);

            if need[0] {
                let mut du = vec![T::zero(); bsz * l * h];
                for c in 0..h {
                    // correlation with the kernel = convolution with its conjugate spectrum
                    let mut spec = kernel_spectrum(&plan, &kernel[c * l..(c + 1) * l]);
                    spec.im.iter_mut().for_each(|v| *v = -*v);
                    for b0 in (0..bsz).step_by(2) {
                        gather(gd, b0, c, l, h, &mut sa);
                        let pair = b0 + 1 < bsz;
                        if pair {
                            gather(gd, b0 + 1, c, l, h, &mut sb);
                        }
                        conv_pair_with_spectrum(
                            &plan,
                            &spec,
                            &sa,
                            pair.then_some(&sb[..]),
                            &mut re,
                            &mut im,
                            &mut oa,
                            pair.then_some(&mut ob[..]),
                        );
                        for t in 0..l {
                            let i = (b0 * l + t) * h + c;
                            du[i] = oa[t] + d[c] * gd[i];
                            if pair {
                                let i = ((b0 + 1) * l + t) * h + c;
                                du[i] = ob[t] + d[c] * gd[i];
                            }
                        }
                    }
                }
                grads[0] = Some(Tensor::new(&[bsz, l, h], du).unwrap());
            }
            if need[7] {
                let mut dd = vec![T::zero(); h];
                for (i, (&gv, &uv)) in gd.iter().zip(ud).enumerate() {
                    dd[i % h] = dd[i % h] + gv * uv;
                }
                grads[7] = Some(Tensor::new(&[h], dd).unwrap());
            }
            if !need[1..7].iter().any(|&x| x) && !need[8] {
                return grads;
            }

            // dK[c, s] = Σ_b Σ_t g[b,t,c]·u[b,t−s,c]
            let mut dk = vec![T::zero(); h * l];
            let half = T::c(0.5);
            for c in 0..h {
                let mut acc = ComplexVector::<T>::zeros(n);
                for b in 0..bsz {
                    re.fill(T::zero());
                    im.fill(T::zero());
                    gather(ud, b, c, l, h, &mut re[..l]);
                    gather(gd, b, c, l, h, &mut im[..l]);
                    plan.process(&mut re, &mut im, false);
                    for k in 0..n {
                        let z = cx(&re, &im, k);
                        let zm = cx(&re, &im, (n - k) % n).conj();
                        let uk = (z + zm).scale(half);
                        let dz = (z - zm).scale(half);
                        let gk = Complex::new(dz.im, -dz.re);
                        acc.set(k, acc.get(k) + uk.conj() * gk);
                    }
                }
                plan.process(&mut acc.re, &mut acc.im, true);
                dk[c * l..(c + 1) * l].copy_from_slice(&acc.re[..l]);
            }

            let mut g_rho = vec![T::zero(); h * m];
            let mut g_im = vec![T::zero(); h * m];
            let (mut g_bre, mut g_bim) = (vec![T::zero(); h * m], vec![T::zero(); h * m]);
            let (mut g_cre, mut g_cim) = (vec![T::zero(); h * m], vec![T::zero(); h * m]);
            let mut g_logdt = vec![T::zero(); h];
            for (j, md) in modes.iter().enumerate() {
                let row = &dk[(j / m) * l..(j / m + 1) * l];
                let (mut acc_w, mut acc_a) = (Complex::zero(), Complex::zero());
                let (mut prev, mut pw) = (Complex::zero(), Complex::one());
                for (s, &gk) in row.iter().enumerate() {
                    acc_w += pw.conj().scale(gk);
                    acc_a += prev.conj().scale(gk * T::c(s as f64));
                    prev = pw;
                    pw = pw * md.abar;
                }
                let bbar = md.e * md.b;
                let w = md.c * bbar;
                let g_abar = w.conj() * acc_a;
                let g_c = acc_w * bbar.conj();
                let g_bbar = acc_w * md.c.conj();
                let g_b = g_bbar * md.e.conj();
                let g_e = g_bbar * md.b.conj();
                let (g_a, g_dt) = zoh_backward(md.a, md.dt, md.abar, g_abar, g_e);
                g_rho[j] = g_a.re * md.a.re;
                g_im[j] = g_a.im;
                g_bre[j] = g_b.re;
                g_bim[j] = g_b.im;
                g_cre[j] = g_c.re;
                g_cim[j] = g_c.im;
                g_logdt[j / m] = g_logdt[j / m] + g_dt * md.dt;
            }
            let hm = [h, m];
            for (i, v) in [(1, g_rho), (2, g_im), (3, g_bre), (4, g_bim), (5, g_cre), (6, g_cim)] {
                if need[i] {
                    grads[i] = Some(Tensor::new(&hm, v).unwrap());
                }
            }
            if need[8] {
                grads[8] = Some(Tensor::new(&[h], g_logdt).unwrap());
            }
            grads
        }))
    }

    /// Multi-input diagonal layer evaluated with the associative scan.
    pub fn s5(&self, u: Var, p: &SsmVars) -> Result<Var> {
        let inputs = p.inputs(u);
        let vals: Vec<_> = inputs.iter().map(|&v| self.value(v)).collect();
        let &[bsz, l, h] = vals[0].shape() else {
            return Err(Error::shape("s5", vals[0].shape(), &[0, 0, 0]));
        };
        let m = vals[1].numel();
        let wants: [&[usize]; 8] = [&[m], &[m], &[m, h], &[m, h], &[h, m], &[h, m], &[h], &[m]];
        for (t, want) in vals[1..].iter().zip(wants) {
            check_shape("s5", t, want)?;
        }
        let (rho, im, log_dt) = (vals[1].data(), vals[2].data(), vals[8].data());
        let (b_re, b_im) = (vals[3].data().to_vec(), vals[4].data().to_vec());
        let (c_re, c_im) = (vals[5].data().to_vec(), vals[6].data().to_vec());
        let d = vals[7].data().to_vec();

        let mut modes = Vec::with_capacity(m);
        let mut a_bar = ComplexVector::zeros(m);
        for j in 0..m {
            let a = Complex::new(-rho[j].exp(), im[j]);
            let dt = log_dt[j].exp();
            let (abar, e) = zoh(a, dt);
            a_bar.set(j, abar);
            modes.push(Mode {
                a,
                dt,
                abar,
                e,
                b: Complex::zero(),
                c: Complex::zero(),
            });
        }
        let (mut bb_re, mut bb_im) = (vec![T::zero(); m * h], vec![T::zero(); m * h]);
        for i in 0..m * h {
            let z = modes[i / h].e * cx(&b_re, &b_im, i);
            bb_re[i] = z.re;
            bb_im[i] = z.im;
        }
        let rows = bsz * l;
        let ud = vals[0].data();
        let (mut xr, mut xi) = (vec![T::zero(); rows * m], vec![T::zero(); rows * m]);
        gemm(ud, false, &bb_re, true, &mut xr, rows, h, m, false);
        gemm(ud, false, &bb_im, true, &mut xi, rows, h, m, false);
        for b in 0..bsz {
            let r = b * l * m..(b + 1) * l * m;
            linear_scan(&a_bar, &mut xr[r.clone()], &mut xi[r], ScanMode::Tree);
        }
        let mut y = vec![T::zero(); rows * h];
        gemm(&xr, false, &c_re, true, &mut y, rows, m, h, false);
        let neg_cim: Vec<T> = c_im.iter().map(|&v| -v).collect();
        gemm(&xi, false, &neg_cim, true, &mut y, rows, m, h, true);
        for (i, v) in y.iter_mut().enumerate() {
            *v = *v + d[i % h] * ud[i];
        }
        let out = Tensor::new(&[bsz, l, h], y)?;
        drop(vals);

        Ok(self.custom(&inputs, out, move |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, need: &[bool]| {
            let (gd, ud) = (g.data(), inp[0].data());
            let mut grads: Vec<Option<Tensor<T>>> = vec![None; 9];
            if need[7] {
                let mut dd = vec![T::zero(); h];
                for (i, (&gv, &uv)) in gd.iter().zip(ud).enumerate() {
                    dd[i % h] = dd[i % h] + gv * uv;
                }
                grads[7] = Some(Tensor::new(&[h], dd).unwrap());
            }
            if need[5] || need[6] {
                let mut dc = vec![T::zero(); h * m];
                gemm(gd, true, &xr, false, &mut dc, h, rows, m, false);
                grads[5] = Some(Tensor::new(&[h, m], dc).unwrap());
                let mut dc = vec![T::zero(); h * m];
                gemm(gd, true, &xi, false, &mut dc, h, rows, m, false);
                dc.iter_mut().for_each(|v| *v = -*v);
                grads[6] = Some(Tensor::new(&[h, m], dc).unwrap());
            }
            let upstream = need[0] || need[1] || need[2] || need[3] || need[4] || need[8];
            if !upstream {
                return grads;
            }
            // λ_k = conj(C)ᵀ g_k + conj(Ā) λ_{k+1}
            let (mut lr, mut li) = (vec![T::zero(); rows * m], vec![T::zero(); rows * m]);
            gemm(gd, false, &c_re, false, &mut lr, rows, h, m, false);
            gemm(gd, false, &neg_cim, false, &mut li, rows, h, m, false);
            let mut g_abar = vec![Complex::<T>::zero(); m];
            for b in 0..bsz {
                for k in (0..l).rev() {
                    for (j, md) in modes.iter().enumerate() {
                        let i = (b * l + k) * m + j;
                        let mut lam = cx(&lr, &li, i);
                        if k + 1 < l {
                            lam += md.abar.conj() * cx(&lr, &li, i + m);
                            lr[i] = lam.re;
                            li[i] = lam.im;
                        }
                        if k > 0 {
                            g_abar[j] += lam * cx(&xr, &xi, i - m).conj();
                        }
                    }
                }
            }
            if need[0] {
                let mut du = vec![T::zero(); rows * h];
                gemm(&lr, false, &bb_re, false, &mut du, rows, m, h, false);
                gemm(&li, false, &bb_im, false, &mut du, rows, m, h, true);
                for (i, v) in du.iter_mut().enumerate() {
                    *v = *v + d[i % h] * gd[i];
                }
                grads[0] = Some(Tensor::new(&[bsz, l, h], du).unwrap());
            }
            let (mut gbb_re, mut gbb_im) = (vec![T::zero(); m * h], vec![T::zero(); m * h]);
            gemm(&lr, true, ud, false, &mut gbb_re, m, rows, h, false);
            gemm(&li, true, ud, false, &mut gbb_im, m, rows, h, false);
            let (mut g_bre, mut g_bim) = (vec![T::zero(); m * h], vec![T::zero(); m * h]);
            let mut g_e = vec![Complex::<T>::zero(); m];
            for i in 0..m * h {
                let gbb = cx(&gbb_re, &gbb_im, i);
                let gb = gbb * modes[i / h].e.conj();
                g_bre[i] = gb.re;
                g_bim[i] = gb.im;
                g_e[i / h] += gbb * cx(&b_re, &b_im, i).conj();
            }
            let (mut g_rho, mut g_im, mut g_logdt) = (vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]);
            for (j, md) in modes.iter().enumerate() {
                let (g_a, g_dt) = zoh_backward(md.a, md.dt, md.abar, g_abar[j], g_e[j]);
                g_rho[j] = g_a.re * md.a.re;
                g_im[j] = g_a.im;
                g_logdt[j] = g_dt * md.dt;
            }
            for (i, v, shape) in [
                (1, g_rho, vec![m]),
                (2, g_im, vec![m]),
                (3, g_bre, vec![m, h]),
                (4, g_bim, vec![m, h]),
                (8, g_logdt, vec![m]),
            ] {
                if need[i] {
                    grads[i] = Some(Tensor::new(&shape, v).unwrap());
                }
            }
            grads
        }))
    }
}

#[derive(Clone, Copy)]
struct Mode<T: Real> {
    a: Complex<T>,
    dt: T,
    abar: Complex<T>,
    e: Complex<T>,
    b: Complex<T>,
    c: Complex<T>,
}
