//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Nodes whose inputs never require a gradient are
//! skipped during the backward pass; frozen sub-networks cost nothing there.

use super::ops::{self, ConvGeom, PoolGeom};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat(Vec<Var>),
    Upsample2x(Var),
    Sigmoid(Var),
    Bce {
        p: Var,
        labels: Vec<T>,
    },
    Add(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T: Scalar = f32> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when the variable received none.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records a constant: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geom = ConvGeom::new(x, k, b, stride, pad)?;
        let out = ops::conv2d_forward(&geom, x.data(), k.data(), b.data());
        let t = Tensor::new(vec![geom.c_out, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            t,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let g = PoolGeom::new(x, k, k, stride)?;
        let (out, argmax) = ops::maxpool_forward(&g, x.data());
        let t = Tensor::new(vec![g.c, g.out_h, g.out_w], out)?;
        let rg = self.rg(input);
        Ok(self.push(t, Op::MaxPool { input, argmax }, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = ops::global_avg_pool(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::GlobalAvgPool(x), rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let t = ops::fully_connected(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Concatenates along the leading axis; trailing axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.ndim() == 0 || v.shape()[1..] != tail[..] {
                return Err(Error::Dimension(format!(
                    "concat trailing axes {:?} vs {:?}",
                    tail,
                    v.shape()
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::Concat(parts.to_vec()), rg))
    }

    /// Nearest-neighbour 2x upsampling of a `[C,H,W]` tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                for xx in 0..ow {
                    out.push(row[xx / 2]);
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Upsample2x(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = ops::sigmoid_normalize(self.value(x));
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    /// Mean binary cross-entropy of probabilities `p` against {0,1} labels.
    pub fn bce(&mut self, p: Var, labels: &[T]) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != labels.len() || labels.is_empty() {
            return Err(Error::Dimension(format!(
                "bce: {} probabilities vs {} labels",
                pv.len(),
                labels.len()
            )));
        }
        ops::check_labels(labels)?;
        let loss = ops::bce_value(pv.data(), labels);
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "add: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Back-propagates from a one-element output.
    pub fn backward(&self, out: Var) -> Result<Grads<T>> {
        if self.value(out).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[out.0] = Some(vec![T::one()]);

        fn acc<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
            match slot {
                Some(s) => s.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
                None => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let need = [self.rg(*input), self.rg(*kernel), self.rg(*bias)];
                    let (gi, gk, gb) = ops::conv2d_backward(
                        geom,
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        &g,
                        need,
                    );
                    if let Some(gi) = gi {
                        acc(&mut grads[input.0], gi);
                    }
                    if let Some(gk) = gk {
                        acc(&mut grads[kernel.0], gk);
                    }
                    if let Some(gb) = gb {
                        acc(&mut grads[bias.0], gb);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    acc(&mut grads[x.0], gx);
                }
                Op::MaxPool { input, argmax } => {
                    let mut gx = vec![T::zero(); self.value(*input).len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        gx[src] = gx[src] + gv;
                    }
                    acc(&mut grads[input.0], gx);
                }
                Op::GlobalAvgPool(x) => {
                    let (k, h, w) = self.value(*x).chw()?;
                    let plane = h * w;
                    let inv = T::one() / T::from_f64(plane as f64);
                    let mut gx = Vec::with_capacity(k * plane);
                    for &gv in g.iter().take(k) {
                        gx.extend(std::iter::repeat_n(gv * inv, plane));
                    }
                    acc(&mut grads[x.0], gx);
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let d = xv.len();
                    if self.rg(*x) {
                        let mut gx = vec![T::zero(); d];
                        for (r, &gv) in g.iter().enumerate() {
                            for (dst, &wij) in gx.iter_mut().zip(&wv[r * d..(r + 1) * d]) {
                                *dst = *dst + gv * wij;
                            }
                        }
                        acc(&mut grads[x.0], gx);
                    }
                    if self.rg(*w) {
                        let mut gw = Vec::with_capacity(wv.len());
                        for &gv in &g {
                            gw.extend(xv.iter().map(|&xj| gv * xj));
                        }
                        acc(&mut grads[w.0], gw);
                    }
                    if self.rg(*b) {
                        acc(&mut grads[b.0], g.clone());
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        if self.rg(*p) {
                            acc(&mut grads[p.0], g[off..off + len].to_vec());
                        }
                        off += len;
                    }
                }
                Op::Upsample2x(x) => {
                    let (c, h, w) = self.value(*x).chw()?;
                    let mut gx = vec![T::zero(); c * h * w];
                    let ow = 2 * w;
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..ow {
                                let dst = (ch * h + y / 2) * w + xx / 2;
                                gx[dst] = gx[dst] + g[(ch * 2 * h + y) * ow + xx];
                            }
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
                Op::Sigmoid(x) => {
                    let s = node.value.data();
                    let gx = g
                        .iter()
                        .zip(s)
                        .map(|(&gv, &sv)| gv * sv * (T::one() - sv))
                        .collect();
                    acc(&mut grads[x.0], gx);
                }
                Op::Bce { p, labels } => {
                    let gp = ops::bce_grad(self.value(*p).data(), labels, g[0]);
                    acc(&mut grads[p.0], gp);
                }
                Op::Reshape(x) => {
                    acc(&mut grads[x.0], g);
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads[a.0], g.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads[b.0], g);
                    }
                }
            }
        }
        // only leaves keep their gradient
        for (i, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                *slot = None;
            }
        }
        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_bce_logit_gradient() {
        // d/dz BCE(sigmoid(z), l) = (sigmoid(z) - l) / C
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::from_vec(vec![0.3, -1.2, 2.0]));
        let p = tape.sigmoid(z);
        let labels = [1.0, 0.0, 0.0];
        let loss = tape.bce(p, &labels).unwrap();
        let g = tape.backward(loss).unwrap();
        let pv = tape.value(p).data().to_vec();
        for ((gz, pz), l) in g.get(z).unwrap().iter().zip(pv).zip(labels) {
            assert!((gz - (pz - l) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let w = tape.leaf(Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap());
        let b = tape.leaf(Tensor::from_vec(vec![0.0]));
        let y = tape.linear(x, w, b).unwrap();
        let p = tape.sigmoid(y);
        let loss = tape.bce(p, &[1.0]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).is_none());
        assert!(g.get(w).is_some());
        assert!(g.get(y).is_none(), "interior nodes are dropped");
    }

    #[test]
    fn concat_splits_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(vec![1.0]));
        let b = tape.leaf(Tensor::from_vec(vec![2.0, 3.0]));
        let c = tape.concat(&[a, b]).unwrap();
        let w = tape.constant(Tensor::new(vec![1, 3], vec![1.0, 10.0, 100.0]).unwrap());
        let zero = tape.constant(Tensor::from_vec(vec![0.0]));
        let y = tape.linear(c, w, zero).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0]);
        assert_eq!(g.get(b).unwrap(), &[10.0, 100.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(tape.backward(a).is_err());
    }
}
