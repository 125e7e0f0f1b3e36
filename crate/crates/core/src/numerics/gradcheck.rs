//! Central finite-difference checking of tape gradients (64-bit only).

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Absolute floor in the relative-error denominator, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        let d = (self.analytic - self.numeric).abs();
        d / self.analytic.abs().max(self.numeric.abs()).max(REL_FLOOR)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    Probe {
        param: 0,
        index: 0,
        analytic,
        numeric,
    }
    .rel_err()
}

/// Compares analytic gradients of `loss_fn` with central differences on
/// `probes_per_param` randomly chosen entries of every parameter tensor.
pub fn check_gradients<F>(
    params: &[Tensor<f64>],
    loss_fn: F,
    step: f64,
    probes_per_param: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Probe>>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = loss_fn(&g, &vars)?;
        let v = g.value(loss).data()[0];
        Ok(v)
    };
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = loss_fn(&g, &vars)?;
    let grads = g.backward(loss)?;

    let mut probes = Vec::new();
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]);
        for _ in 0..probes_per_param.min(p.numel()) {
            let idx = rng.random_range(0..p.numel());
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[idx] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            probes.push(Probe {
                param: pi,
                index: idx,
                analytic: analytic.data()[idx],
                numeric: (up - down) / (2.0 * step),
            });
        }
    }
    Ok(probes)
}

pub fn max_rel_err(probes: &[Probe]) -> f64 {
    probes.iter().map(Probe::rel_err).fold(0.0, f64::max)
}
