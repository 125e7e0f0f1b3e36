//! Fused LSTM and GRU sequence operations with backpropagation through time.
//!
//! The input-to-hidden projection is done beforehand with [`Graph::linear`];
//! these ops take the projected sequence `z [B, L, G·H]` and run the
//! hidden-to-hidden recurrence from a zero initial state.

use super::graph::{sigmoid, Graph, Var};
use super::{gemm, Real, Tensor};
use crate::error::{Error, Result};

fn check<T: Real>(g: &Graph<T>, z: Var, w_hh: Var, gates: usize) -> Result<(usize, usize, usize)> {
    let (zs, ws) = (g.shape(z), g.shape(w_hh));
    match (zs.as_slice(), ws.as_slice()) {
        (&[b, l, gh], &[h, gh2]) if gh == gates * h && gh2 == gh && l > 0 => Ok((b, l, h)),
        _ => Err(Error::shape("recurrent", &zs, &ws)),
    }
}

impl<T: Real> Graph<T> {
    /// LSTM recurrence, gate order (input, forget, cell, output). Returns the
    /// hidden sequence `[B, L, H]`.
    pub fn lstm(&self, z: Var, w_hh: Var) -> Result<Var> {
        let (b, l, h) = check(self, z, w_hh, 4)?;
        let (zv, wv) = (self.value(z), self.value(w_hh));
        let g4 = 4 * h;
        let mut acts = vec![T::zero(); b * l * g4];
        let mut cells = vec![T::zero(); b * l * h];
        let mut hs = vec![T::zero(); b * l * h];
        let mut hprev = vec![T::zero(); b * h];
        let mut cprev = vec![T::zero(); b * h];
        let mut pre = vec![T::zero(); b * g4];
        for t in 0..l {
            gemm(&hprev, false, wv.data(), false, &mut pre, b, h, g4, false);
            for bi in 0..b {
                let zrow = &zv.data()[(bi * l + t) * g4..(bi * l + t + 1) * g4];
                let arow = &mut acts[(bi * l + t) * g4..(bi * l + t + 1) * g4];
                for j in 0..g4 {
                    let a = zrow[j] + pre[bi * g4 + j];
                    arow[j] = if (2 * h..3 * h).contains(&j) { a.tanh() } else { sigmoid(a) };
                }
                for j in 0..h {
                    let (i, f, gg, o) = (arow[j], arow[h + j], arow[2 * h + j], arow[3 * h + j]);
                    let c = f * cprev[bi * h + j] + i * gg;
                    cprev[bi * h + j] = c;
                    cells[(bi * l + t) * h + j] = c;
                    let hv = o * c.tanh();
                    hprev[bi * h + j] = hv;
                    hs[(bi * l + t) * h + j] = hv;
                }
            }
        }
        let out = Tensor::new(&[b, l, h], hs)?;
        Ok(self.custom(&[z, w_hh], out, move |g: &Tensor<T>, inp: &[&Tensor<T>], out: &Tensor<T>, need: &[bool]| {
            let (wd, gd, hd) = (inp[1].data(), g.data(), out.data());
            let mut dz = vec![T::zero(); b * l * g4];
            let mut dw = vec![T::zero(); h * g4];
            let mut dh_next = vec![T::zero(); b * h];
            let mut dc_next = vec![T::zero(); b * h];
            let mut da = vec![T::zero(); b * g4];
            let mut hprev = vec![T::zero(); b * h];
            for t in (0..l).rev() {
                for bi in 0..b {
                    let arow = &acts[(bi * l + t) * g4..(bi * l + t + 1) * g4];
                    for j in 0..h {
                        let (i, f, gg, o) = (arow[j], arow[h + j], arow[2 * h + j], arow[3 * h + j]);
                        let c = cells[(bi * l + t) * h + j];
                        let cp = if t > 0 { cells[(bi * l + t - 1) * h + j] } else { T::zero() };
                        let dh = gd[(bi * l + t) * h + j] + dh_next[bi * h + j];
                        let tc = c.tanh();
                        let dc = dh * o * (T::one() - tc * tc) + dc_next[bi * h + j];
                        dc_next[bi * h + j] = dc * f;
                        let row = &mut da[bi * g4..(bi + 1) * g4];
                        row[j] = dc * gg * i * (T::one() - i);
                        row[h + j] = dc * cp * f * (T::one() - f);
                        row[2 * h + j] = dc * i * (T::one() - gg * gg);
                        row[3 * h + j] = dh * tc * o * (T::one() - o);
                    }
                    dz[(bi * l + t) * g4..(bi * l + t + 1) * g4].copy_from_slice(&da[bi * g4..(bi + 1) * g4]);
                    for j in 0..h {
                        hprev[bi * h + j] = if t > 0 { hd[(bi * l + t - 1) * h + j] } else { T::zero() };
                    }
                }
                if need[1] {
                    gemm(&hprev, true, &da, false, &mut dw, h, b, g4, true);
                }
                gemm(&da, false, wd, true, &mut dh_next, b, g4, h, false);
            }
            vec![
                need[0].then(|| Tensor::new(&[b, l, g4], dz).unwrap()),
                need[1].then(|| Tensor::new(&[h, g4], dw).unwrap()),
            ]
        }))
    }

    /// GRU recurrence, gate order (reset, update, candidate), with the
    /// hidden-side bias inside the reset product. Returns `[B, L, H]`.
    pub fn gru(&self, z: Var, w_hh: Var, b_hh: Var) -> Result<Var> {
        let (b, l, h) = check(self, z, w_hh, 3)?;
        let g3 = 3 * h;
        if self.shape(b_hh) != [g3] {
            return Err(Error::shape("gru bias", &self.shape(b_hh), &[g3]));
        }
        let (zv, wv, bv) = (self.value(z), self.value(w_hh), self.value(b_hh));
        // per step: r, u, n, hidden-side candidate pre-activation
        let mut acts = vec![T::zero(); b * l * 4 * h];
        let mut hs = vec![T::zero(); b * l * h];
        let mut hprev = vec![T::zero(); b * h];
        let mut pre = vec![T::zero(); b * g3];
        for t in 0..l {
            gemm(&hprev, false, wv.data(), false, &mut pre, b, h, g3, false);
            for bi in 0..b {
                let zrow = &zv.data()[(bi * l + t) * g3..(bi * l + t + 1) * g3];
                let prow = &pre[bi * g3..(bi + 1) * g3];
                let arow = &mut acts[(bi * l + t) * 4 * h..(bi * l + t + 1) * 4 * h];
                for j in 0..h {
                    let hr_n = prow[2 * h + j] + bv.data()[2 * h + j];
                    let r = sigmoid(zrow[j] + prow[j] + bv.data()[j]);
                    let u = sigmoid(zrow[h + j] + prow[h + j] + bv.data()[h + j]);
                    let n = (zrow[2 * h + j] + r * hr_n).tanh();
                    let hv = (T::one() - u) * n + u * hprev[bi * h + j];
                    arow[j] = r;
                    arow[h + j] = u;
                    arow[2 * h + j] = n;
                    arow[3 * h + j] = hr_n;
                    hprev[bi * h + j] = hv;
                    hs[(bi * l + t) * h + j] = hv;
                }
            }
        }
        let out = Tensor::new(&[b, l, h], hs)?;
        Ok(self.custom(&[z, w_hh, b_hh], out, move |g: &Tensor<T>, inp: &[&Tensor<T>], out: &Tensor<T>, need: &[bool]| {
            let (wd, gd, hd) = (inp[1].data(), g.data(), out.data());
            let mut dz = vec![T::zero(); b * l * g3];
            let mut dw = vec![T::zero(); h * g3];
            let mut db = vec![T::zero(); g3];
            let mut dh_next = vec![T::zero(); b * h];
            let mut dhr = vec![T::zero(); b * g3];
            let mut hprev = vec![T::zero(); b * h];
            let mut carry = vec![T::zero(); b * h];
            for t in (0..l).rev() {
                for bi in 0..b {
                    let arow = &acts[(bi * l + t) * 4 * h..(bi * l + t + 1) * 4 * h];
                    let dzrow = &mut dz[(bi * l + t) * g3..(bi * l + t + 1) * g3];
                    let hrow = &mut dhr[bi * g3..(bi + 1) * g3];
                    for j in 0..h {
                        let (r, u, n, hr_n) = (arow[j], arow[h + j], arow[2 * h + j], arow[3 * h + j]);
                        let hp = if t > 0 { hd[(bi * l + t - 1) * h + j] } else { T::zero() };
                        hprev[bi * h + j] = hp;
                        let dh = gd[(bi * l + t) * h + j] + dh_next[bi * h + j];
                        let dan = dh * (T::one() - u) * (T::one() - n * n);
                        let dar = dan * hr_n * r * (T::one() - r);
                        let dau = dh * (hp - n) * u * (T::one() - u);
                        dzrow[j] = dar;
                        dzrow[h + j] = dau;
                        dzrow[2 * h + j] = dan;
                        hrow[j] = dar;
                        hrow[h + j] = dau;
                        hrow[2 * h + j] = dan * r;
                        carry[bi * h + j] = dh * u;
                    }
                }
                if need[1] {
                    gemm(&hprev, true, &dhr, false, &mut dw, h, b, g3, true);
                }
                for row in dhr.chunks(g3) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                dh_next.copy_from_slice(&carry);
                gemm(&dhr, false, wd, true, &mut dh_next, b, g3, h, true);
            }
            vec![
                need[0].then(|| Tensor::new(&[b, l, g3], dz).unwrap()),
                need[1].then(|| Tensor::new(&[h, g3], dw).unwrap()),
                need[2].then(|| Tensor::new(&[g3], db).unwrap()),
            ]
        }))
    }
}
