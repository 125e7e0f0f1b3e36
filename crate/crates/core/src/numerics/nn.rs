//! Layer-level differentiable operations: dense, dilated 1-D convolution,
//! layer norm, multi-head attention, dropout and the classification loss.
//! Inputs are channel-last: `[batch, time, channels]`.

use rand::Rng;

use super::graph::{Graph, Var};
use super::{gemm, Real, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

impl<T: Real> Graph<T> {
    /// `x [.., in] · w [in, out] (+ b [out])`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let fin = *xv.shape().last().unwrap_or(&0);
        if wv.shape().len() != 2 || wv.shape()[0] != fin || fin == 0 {
            return Err(Error::shape("linear", xv.shape(), wv.shape()));
        }
        let fout = wv.shape()[1];
        let rows = xv.numel() / fin;
        let mut out = vec![T::zero(); rows * fout];
        gemm(xv.data(), false, wv.data(), false, &mut out, rows, fin, fout, false);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = fout;
        let out = Tensor::new(&shape, out)?;
        let y = self.custom(&[x, w], out, move |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, need: &[bool]| {
            let gx = need[0].then(|| {
                let mut d = vec![T::zero(); rows * fin];
                gemm(g.data(), false, inp[1].data(), true, &mut d, rows, fout, fin, false);
                Tensor::new(inp[0].shape(), d).unwrap()
            });
            let gw = need[1].then(|| {
                let mut d = vec![T::zero(); fin * fout];
                gemm(inp[0].data(), true, g.data(), false, &mut d, fin, rows, fout, false);
                Tensor::new(&[fin, fout], d).unwrap()
            });
            vec![gx, gw]
        });
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Dilated 1-D convolution over time with zero padding.
    ///
    /// `x [B, L, Cin]`, `w [K, Cin, Cout]`, `b [Cout]`; output keeps length `L`.
    /// Tap `k` reads `x[t + k·dilation − pad_left]`, so `pad_left =
    /// (K−1)·dilation` gives a causal convolution and half of that a centred one.
    pub fn conv1d(&self, x: Var, w: Var, b: Var, dilation: usize, pad_left: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (&[bsz, l, cin], &[k, wcin, cout]) = (xv.shape(), wv.shape()) else {
            return Err(Error::shape("conv1d", xv.shape(), wv.shape()));
        };
        if wcin != cin || dilation == 0 || pad_left > (k - 1) * dilation {
            return Err(Error::shape("conv1d", xv.shape(), wv.shape()));
        }
        let taps = tap_ranges(k, l, dilation, pad_left);
        let mut out = vec![T::zero(); bsz * l * cout];
        for bi in 0..bsz {
            let xb = &xv.data()[bi * l * cin..(bi + 1) * l * cin];
            let ob = &mut out[bi * l * cout..(bi + 1) * l * cout];
            for &(kk, t0, t1, s0) in &taps {
                let n = t1 - t0;
                gemm(
                    &xb[s0 * cin..(s0 + n) * cin],
                    false,
                    &wv.data()[kk * cin * cout..(kk + 1) * cin * cout],
                    false,
                    &mut ob[t0 * cout..t1 * cout],
                    n,
                    cin,
                    cout,
                    true,
                );
            }
        }
        let y = Tensor::new(&[bsz, l, cout], out)?;
        let y = self.custom(&[x, w], y, move |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, need: &[bool]| {
            let (xd, wd, gd) = (inp[0].data(), inp[1].data(), g.data());
            let mut gx = need[0].then(|| vec![T::zero(); bsz * l * cin]);
            let mut gw = need[1].then(|| vec![T::zero(); k * cin * cout]);
            for bi in 0..bsz {
                let gb = &gd[bi * l * cout..(bi + 1) * l * cout];
                for &(kk, t0, t1, s0) in &taps {
                    let n = t1 - t0;
                    if let Some(gx) = gx.as_mut() {
                        gemm(
                            &gb[t0 * cout..t1 * cout],
                            false,
                            &wd[kk * cin * cout..(kk + 1) * cin * cout],
                            true,
                            &mut gx[(bi * l + s0) * cin..(bi * l + s0 + n) * cin],
                            n,
                            cout,
                            cin,
                            true,
                        );
                    }
                    if let Some(gw) = gw.as_mut() {
                        gemm(
                            &xd[(bi * l + s0) * cin..(bi * l + s0 + n) * cin],
                            true,
                            &gb[t0 * cout..t1 * cout],
                            false,
                            &mut gw[kk * cin * cout..(kk + 1) * cin * cout],
                            cin,
                            n,
                            cout,
                            true,
                        );
                    }
                }
            }
            vec![
                gx.map(|d| Tensor::new(&[bsz, l, cin], d).unwrap()),
                gw.map(|d| Tensor::new(&[k, cin, cout], d).unwrap()),
            ]
        });
        self.add_bias(y, b)
    }

    /// Layer normalisation over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gamma));
        let h = *xv.shape().last().unwrap_or(&0);
        if gv.shape() != [h] || self.shape(beta) != [h] {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        let eps = T::c(LN_EPS);
        let hn = T::c(h as f64);
        let stats = move |row: &[T]| {
            let mu = row.iter().copied().sum::<T>() / hn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / hn;
            (mu, T::one() / (var + eps).sqrt())
        };
        let mut out = vec![T::zero(); xv.numel()];
        for (orow, row) in out.chunks_mut(h).zip(xv.data().chunks(h)) {
            let (mu, rstd) = stats(row);
            for ((o, &v), &gm) in orow.iter_mut().zip(row).zip(gv.data()) {
                *o = (v - mu) * rstd * gm;
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let y = self.custom(&[x, gamma], out, move |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, need: &[bool]| {
            let (xd, gm) = (inp[0].data(), inp[1].data());
            let mut gx = vec![T::zero(); xd.len()];
            let mut ggm = vec![T::zero(); h];
            let mut xhat = vec![T::zero(); h];
            let mut dxhat = vec![T::zero(); h];
            for ((row, grow), gxrow) in xd.chunks(h).zip(g.data().chunks(h)).zip(gx.chunks_mut(h)) {
                let (mu, rstd) = stats(row);
                for j in 0..h {
                    xhat[j] = (row[j] - mu) * rstd;
                    dxhat[j] = grow[j] * gm[j];
                    ggm[j] = ggm[j] + grow[j] * xhat[j];
                }
                let m1 = dxhat.iter().copied().sum::<T>() / hn;
                let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / hn;
                for j in 0..h {
                    gxrow[j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                }
            }
            vec![
                need[0].then(|| Tensor::new(inp[0].shape(), gx).unwrap()),
                need[1].then(|| Tensor::new(&[h], ggm).unwrap()),
            ]
        });
        self.add_bias(y, beta)
    }

    /// Mean softmax cross-entropy of `logits [B, C]` against integer labels.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let &[b, c] = lv.shape() else {
            return Err(Error::shape("softmax_cross_entropy", lv.shape(), &[labels.len(), 0]));
        };
        if labels.len() != b || labels.iter().any(|&y| y >= c) {
            return Err(Error::Contract(format!(
                "{} labels (max {:?}) for logits {:?}",
                labels.len(),
                labels.iter().max(),
                lv.shape()
            )));
        }
        let probs = softmax_rows(lv.data(), c);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -(probs[i * c + y].max(T::min_positive_value())).ln())
            .sum::<T>()
            / T::c(b as f64);
        let labels = labels.to_vec();
        Ok(self.custom(&[logits], Tensor::scalar(loss), move |g: &Tensor<T>, _: &[&Tensor<T>], _: &Tensor<T>, _: &[bool]| {
            let s = g.data()[0] / T::c(b as f64);
            let mut d = probs.clone();
            for (i, &y) in labels.iter().enumerate() {
                d[i * c + y] = d[i * c + y] - T::one();
            }
            for v in d.iter_mut() {
                *v = *v * s;
            }
            vec![Some(Tensor::new(&[b, c], d).unwrap())]
        }))
    }

    /// Inverted dropout. Identity when `rate == 0`.
    pub fn dropout(&self, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be < 1")));
        }
        let shape = self.shape(x);
        let keep = T::c(1.0 / (1.0 - rate));
        let mask = (0..shape.iter().product::<usize>())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(&shape, mask)?);
        self.mul(x, m)
    }

    /// Unmasked scaled dot-product attention with `heads` heads.
    ///
    /// `q, k, v [B, L, H]` with `H` divisible by `heads`; output `[B, L, H]`.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let &[b, l, h] = qv.shape() else {
            return Err(Error::shape("attention", qv.shape(), kv.shape()));
        };
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() || heads == 0 || h % heads != 0 {
            return Err(Error::shape("attention", qv.shape(), kv.shape()));
        }
        let dh = h / heads;
        let scale = T::one() / T::c(dh as f64).sqrt();
        let hs = h as isize;
        let mut out = vec![T::zero(); b * l * h];
        let mut probs = vec![T::zero(); b * heads * l * l];
        for bi in 0..b {
            for hd in 0..heads {
                let off = bi * l * h + hd * dh;
                let p = &mut probs[(bi * heads + hd) * l * l..(bi * heads + hd + 1) * l * l];
                // S = Q K^T
                T::gemm_raw(l, dh, l, scale, &qv.data()[off..], hs, 1, &kv.data()[off..], 1, hs, T::zero(), p, l as isize, 1);
                softmax_rows_in_place(p, l);
                T::gemm_raw(l, l, dh, T::one(), p, l as isize, 1, &vv.data()[off..], hs, 1, T::zero(), &mut out[off..], hs, 1);
            }
        }
        let out = Tensor::new(&[b, l, h], out)?;
        Ok(self.custom(&[q, k, v], out, move |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, _: &[bool]| {
            let (qd, kd, vd, gd) = (inp[0].data(), inp[1].data(), inp[2].data(), g.data());
            let mut gq = vec![T::zero(); b * l * h];
            let mut gk = vec![T::zero(); b * l * h];
            let mut gv = vec![T::zero(); b * l * h];
            let mut dp = vec![T::zero(); l * l];
            let ls = l as isize;
            for bi in 0..b {
                for hd in 0..heads {
                    let off = bi * l * h + hd * dh;
                    let p = &probs[(bi * heads + hd) * l * l..(bi * heads + hd + 1) * l * l];
                    // dV = P^T dO
                    T::gemm_raw(l, l, dh, T::one(), p, 1, ls, &gd[off..], hs, 1, T::zero(), &mut gv[off..], hs, 1);
                    // dP = dO V^T
                    T::gemm_raw(l, dh, l, T::one(), &gd[off..], hs, 1, &vd[off..], 1, hs, T::zero(), &mut dp, ls, 1);
                    // dS = P ∘ (dP − rowsum(dP ∘ P))
                    for (drow, prow) in dp.chunks_mut(l).zip(p.chunks(l)) {
                        let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
                        for (d, &pp) in drow.iter_mut().zip(prow) {
                            *d = pp * (*d - dot);
                        }
                    }
                    T::gemm_raw(l, l, dh, scale, &dp, ls, 1, &kd[off..], hs, 1, T::zero(), &mut gq[off..], hs, 1);
                    T::gemm_raw(l, l, dh, scale, &dp, 1, ls, &qd[off..], hs, 1, T::zero(), &mut gk[off..], hs, 1);
                }
            }
            let t = |d| Some(Tensor::new(&[b, l, h], d).unwrap());
            vec![t(gq), t(gk), t(gv)]
        }))
    }
}

/// `(k, t0, t1, s0)`: output rows `t0..t1` read input rows from `s0` for tap `k`.
fn tap_ranges(k: usize, l: usize, dilation: usize, pad_left: usize) -> Vec<(usize, usize, usize, usize)> {
    (0..k)
        .filter_map(|kk| {
            let shift = (kk * dilation) as isize - pad_left as isize;
            let t0 = (-shift).max(0) as usize;
            let t1 = (l as isize - shift).min(l as isize).max(0) as usize;
            (t0 < t1).then(|| (kk, t0, t1, (t0 as isize + shift) as usize))
        })
        .collect()
}

pub(crate) fn softmax_rows<T: Real>(x: &[T], c: usize) -> Vec<T> {
    let mut out = x.to_vec();
    softmax_rows_in_place(&mut out, c);
    out
}

fn softmax_rows_in_place<T: Real>(x: &mut [T], c: usize) {
    for row in x.chunks_mut(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_conv_ignores_future() {
        let g = Graph::<f64>::new();
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let xv = g.constant(Tensor::new(&[1, 8, 1], x).unwrap());
        let w = g.param(Tensor::from_f64(&[2, 1, 1], &[1.0, 10.0]).unwrap());
        let b = g.param(Tensor::zeros(&[1]));
        // taps: k=0 reads t-2, k=1 reads t (dilation 2)
        let y = g.conv1d(xv, w, b, 2, 2).unwrap();
        let y = g.value(y);
        assert_eq!(&y.data()[..4], &[0.0, 10.0, 20.0, 31.0]);
    }

    #[test]
    fn centred_conv_matches_direct_sum() {
        let g = Graph::<f64>::new();
        let xv = g.constant(Tensor::from_f64(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.param(Tensor::from_f64(&[3, 1, 1], &[1.0, 1.0, 1.0]).unwrap());
        let b = g.param(Tensor::from_f64(&[1], &[0.5]).unwrap());
        let y = g.conv1d(xv, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3.5, 6.5, 9.5, 7.5]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let g = Graph::<f64>::new();
        let l = g.param(Tensor::zeros(&[2, 4]));
        let loss = g.softmax_cross_entropy(l, &[0, 3]).unwrap();
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);
        assert!(g.softmax_cross_entropy(l, &[0, 4]).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
        let gm = g.param(Tensor::full(&[3], 1.0));
        let bt = g.param(Tensor::zeros(&[3]));
        let y = g.value(g.layer_norm(x, gm, bt).unwrap());
        for row in y.data().chunks(3) {
            let mean: f64 = row.iter().sum::<f64>() / 3.0;
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn attention_with_identical_keys_averages_values() {
        let g = Graph::<f64>::new();
        let q = g.constant(Tensor::from_f64(&[1, 3, 2], &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]).unwrap());
        let k = g.constant(Tensor::zeros(&[1, 3, 2]));
        let v = g.constant(Tensor::from_f64(&[1, 3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = g.value(g.attention(q, k, v, 2).unwrap());
        for row in y.data().chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 4.0).abs() < 1e-12);
        }
    }
}
