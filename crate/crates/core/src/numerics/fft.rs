//! FFT plans over split real/imaginary buffers and FFT-based causal convolution.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{ComplexVector, Real, Tensor};
use crate::error::{Error, Result};

/// Forward and inverse transforms for one power-of-two size.
#[derive(Clone)]
pub struct FftPlan<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> fmt::Debug for FftPlan<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FftPlan").field("n", &self.n).finish()
    }
}

impl<T: Real> FftPlan<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidLength {
                op: "fft",
                len: n,
                reason: "length must be a power of two",
            });
        }
        let mut planner = FftPlanner::new();
        Ok(FftPlan {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place transform. The inverse includes the `1/n` normalisation.
    pub fn process(&self, re: &mut [T], im: &mut [T], inverse: bool) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n, "fft buffer length != plan length");
        let mut buf: Vec<Complex<T>> = re.iter().zip(im.iter()).map(|(&r, &i)| Complex::new(r, i)).collect();
        if inverse {
            self.inverse.process(&mut buf);
        } else {
            self.forward.process(&mut buf);
        }
        let s = if inverse { T::one() / T::c(n as f64) } else { T::one() };
        for ((r, i), z) in re.iter_mut().zip(im.iter_mut()).zip(&buf) {
            *r = z.re * s;
            *i = z.im * s;
        }
    }
}

/// Discrete Fourier transform of a power-of-two length vector.
pub fn fft<T: Real>(x: &ComplexVector<T>) -> Result<ComplexVector<T>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.clone();
    plan.process(&mut out.re, &mut out.im, false);
    Ok(out)
}

pub fn ifft<T: Real>(x: &ComplexVector<T>) -> Result<ComplexVector<T>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.clone();
    plan.process(&mut out.re, &mut out.im, true);
    Ok(out)
}

/// Smallest power of two that holds a linear convolution of two length-`l`
/// sequences without wrap-around.
pub(crate) fn conv_size(l: usize) -> usize {
    (2 * l).next_power_of_two()
}

/// Causal convolution `y[t] = Σ_{s≤t} kernel[s]·signal[t−s]` via zero-padded FFT.
pub fn causal_conv_fft<T: Real>(signal: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    if signal.shape().len() != 1 || signal.shape() != kernel.shape() {
        return Err(Error::shape("causal_conv_fft", signal.shape(), kernel.shape()));
    }
    let l = signal.numel();
    let plan = FftPlan::new(conv_size(l))?;
    let mut out = vec![T::zero(); l];
    let spec = kernel_spectrum(&plan, kernel.data());
    let mut re = vec![T::zero(); plan.len()];
    let mut im = vec![T::zero(); plan.len()];
    conv_pair_with_spectrum(&plan, &spec, signal.data(), None, &mut re, &mut im, &mut out, None);
    Tensor::new(&[l], out)
}

pub(crate) fn kernel_spectrum<T: Real>(plan: &FftPlan<T>, kernel: &[T]) -> ComplexVector<T> {
    let mut k = ComplexVector::zeros(plan.len());
    k.re[..kernel.len()].copy_from_slice(kernel);
    plan.process(&mut k.re, &mut k.im, false);
    k
}

/// Convolves up to two real signals with one real kernel in a single complex
/// transform: `a` rides in the real part and `b` in the imaginary part, which
/// stays separable because the kernel spectrum is Hermitian.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_pair_with_spectrum<T: Real>(
    plan: &FftPlan<T>,
    spec: &ComplexVector<T>,
    a: &[T],
    b: Option<&[T]>,
    re: &mut [T],
    im: &mut [T],
    out_a: &mut [T],
    out_b: Option<&mut [T]>,
) {
    let l = a.len();
    re.fill(T::zero());
    im.fill(T::zero());
    re[..l].copy_from_slice(a);
    if let Some(b) = b {
        im[..l].copy_from_slice(b);
    }
    plan.process(re, im, false);
    for i in 0..plan.len() {
        let (xr, xi) = (re[i], im[i]);
        let (kr, ki) = (spec.re[i], spec.im[i]);
        re[i] = xr * kr - xi * ki;
        im[i] = xr * ki + xi * kr;
    }
    plan.process(re, im, true);
    out_a.copy_from_slice(&re[..l]);
    if let Some(ob) = out_b {
        ob.copy_from_slice(&im[..l]);
    }
}
