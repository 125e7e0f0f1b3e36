//! Define-by-run reverse-mode tape.
//!
//! Every operation appends a node holding its output value and a local
//! gradient rule. Nodes are only ever appended, so the tape is in topological
//! order by construction and `backward` is a single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use super::{gemm, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local gradient rule of one tape node.
///
/// Returns one entry per input; `None` where `needs[i]` is false or the input
/// is not differentiable.
pub trait Backward<T: Real> {
    fn backward(
        &self,
        grad: &Tensor<T>,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

impl<T, F> Backward<T> for F
where
    T: Real,
    F: Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>,
{
    fn backward(
        &self,
        grad: &Tensor<T>,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        self(grad, inputs, output, needs)
    }
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    rule: Option<Box<dyn Backward<T>>>,
    needs_grad: bool,
}

/// Tape of recorded operations. Confined to one thread.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` is off the path.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            rule: None,
            needs_grad: requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Records an operation computed outside the tape. `rule` is dropped
    /// without being stored when no input needs a gradient.
    pub fn custom(&self, inputs: &[Var], output: Tensor<T>, rule: impl Backward<T> + 'static) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|v| nodes[v.0].needs_grad);
        nodes.push(Node {
            value: Rc::new(output),
            inputs: inputs.iter().map(|v| v.0).collect(),
            rule: if needs_grad { Some(Box::new(rule)) } else { None },
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let shapes = nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(rule) = &node.rule else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &*nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| nodes[j].needs_grad).collect();
            let local = rule.backward(&g, &inputs, &node.value, &needs);
            debug_assert_eq!(local.len(), node.inputs.len());
            for (&j, lg) in node.inputs.iter().zip(local) {
                let Some(lg) = lg else { continue };
                if !nodes[j].needs_grad {
                    continue;
                }
                debug_assert_eq!(lg.shape(), nodes[j].value.shape(), "gradient shape for node {j}");
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&lg),
                    slot @ None => *slot = Some(lg),
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let xv = self.value(x);
        let out = xv.map(f);
        self.custom(&[x], out, move |g: &Tensor<T>, inp: &[&Tensor<T>], out: &Tensor<T>, _: &[bool]| {
            let data = g
                .data()
                .iter()
                .zip(inp[0].data())
                .zip(out.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(inp[0].shape(), data).unwrap())]
        })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Rc<Tensor<T>>, Rc<Tensor<T>>)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        Ok((av, bv))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("add", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.custom(&[a, b], out, |g: &Tensor<T>, _: &[&Tensor<T>], _: &Tensor<T>, n: &[bool]| {
            vec![n[0].then(|| g.clone()), n[1].then(|| g.clone())]
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("sub", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.custom(&[a, b], out, |g: &Tensor<T>, _: &[&Tensor<T>], _: &Tensor<T>, n: &[bool]| {
            vec![n[0].then(|| g.clone()), n[1].then(|| g.map(|x| -x))]
        }))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("mul", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.custom(&[a, b], out, |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, n: &[bool]| {
            let prod = |other: &Tensor<T>| {
                let d = g.data().iter().zip(other.data()).map(|(&g, &o)| g * o).collect();
                Tensor::new(g.shape(), d).unwrap()
            };
            vec![n[0].then(|| prod(inp[1])), n[1].then(|| prod(inp[0]))]
        }))
    }

    pub fn scale(&self, x: Var, s: T) -> Var {
        self.unary(x, move |v| v * s, move |_, _| s)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| x + x)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, x: Var) -> Var {
        self.unary(x, gelu, gelu_grad)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let out = (*xv).clone().reshape(shape)?;
        Ok(self.custom(&[x], out, |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, _: &[bool]| {
            vec![Some(g.clone().reshape(inp[0].shape()).unwrap())]
        }))
    }

    pub fn sum(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>();
        self.custom(&[x], Tensor::scalar(s), |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, _: &[bool]| {
            vec![Some(Tensor::full(inp[0].shape(), g.data()[0]))]
        })
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = T::c(self.value(x).numel() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// `x + b` where `b`'s shape is a suffix of `x`'s, broadcasting over the
    /// leading dimensions (bias vectors, positional tables).
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if !xv.shape().ends_with(bv.shape()) || bv.numel() == 0 {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let n = bv.numel();
        let b_shape = bv.shape().to_vec();
        let mut out = (*xv).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o = *o + bb;
            }
        }
        Ok(self.custom(&[x, b], out, move |g: &Tensor<T>, _: &[&Tensor<T>], _: &Tensor<T>, need: &[bool]| {
            let gb = need[1].then(|| {
                let mut acc = vec![T::zero(); n];
                for row in g.data().chunks(n) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                Tensor::new(&b_shape, acc).unwrap()
            });
            vec![need[0].then(|| g.clone()), gb]
        }))
    }

    /// Rank-2 matrix product, differentiable in both arguments.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.matmul(&bv)?;
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        Ok(self.custom(&[a, b], out, move |g: &Tensor<T>, inp: &[&Tensor<T>], _: &Tensor<T>, need: &[bool]| {
            let ga = need[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm(g.data(), false, inp[1].data(), true, &mut d, m, n, k, false);
                Tensor::new(&[m, k], d).unwrap()
            });
            let gb = need[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm(inp[0].data(), true, g.data(), false, &mut d, k, m, n, false);
                Tensor::new(&[k, n], d).unwrap()
            });
            vec![ga, gb]
        }))
    }

    /// Mean over the time axis: `[B, L, H] -> [B, H]`.
    pub fn mean_time(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let &[b, l, h] = xv.shape() else {
            return Err(Error::shape("mean_time", xv.shape(), &[0, 0, 0]));
        };
        let inv = T::one() / T::c(l as f64);
        let mut out = vec![T::zero(); b * h];
        for bi in 0..b {
            let o = &mut out[bi * h..(bi + 1) * h];
            for row in xv.data()[bi * l * h..(bi + 1) * l * h].chunks(h) {
                for (a, &v) in o.iter_mut().zip(row) {
                    *a = *a + v;
                }
            }
            for a in o.iter_mut() {
                *a = *a * inv;
            }
        }
        let out = Tensor::new(&[b, h], out)?;
        Ok(self.custom(&[x], out, move |g: &Tensor<T>, _: &[&Tensor<T>], _: &Tensor<T>, _: &[bool]| {
            let mut d = vec![T::zero(); b * l * h];
            for bi in 0..b {
                let gr = &g.data()[bi * h..(bi + 1) * h];
                for row in d[bi * l * h..(bi + 1) * l * h].chunks_mut(h) {
                    for (a, &v) in row.iter_mut().zip(gr) {
                        *a = v * inv;
                    }
                }
            }
            vec![Some(Tensor::new(&[b, l, h], d).unwrap())]
        }))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let k = T::c(GELU_K);
    let c = T::c(0.044715);
    T::c(0.5) * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T, _y: T) -> T {
    let k = T::c(GELU_K);
    let c = T::c(0.044715);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let dinner = k * (T::one() + T::c(3.0) * c * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::<f64>::new();
        let w = g.param(Tensor::from_f64(&[3], &[0.3, -1.0, 2.0]).unwrap());
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let g = Graph::<f64>::new();
        let w = g.param(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn off_path_parameter_gets_zero_gradient() {
        let g = Graph::<f64>::new();
        let w = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let unused = g.param(Tensor::from_f64(&[2, 2], &[1.0; 4]).unwrap());
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let g = Graph::<f64>::new();
        let w = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[1], &[3.0]).unwrap());
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap(); // 2x^2
        let grads = g.backward(g.sum(z)).unwrap();
        assert_eq!(grads.get(x).data(), &[12.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let g = Graph::<f32>::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
    }
}
