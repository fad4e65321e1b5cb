//! Reverse-mode tape over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for the adjoint pass.

use crate::diffcore::conv::{Conv3dSpec, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Mean {
        x: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
    SelectLast {
        x: Var,
        cols: Vec<usize>,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Upsample {
        x: Var,
        fh: usize,
        fw: usize,
    },
    SpectralScale {
        w: Var,
        u: Vec<T>,
        v: Vec<T>,
        sigma: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Adjoints from one backward pass, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `x` of shape `(B,T,C,H,W)`, `w` of shape `(Cout,Cin,kt,kh,kw)`, `b` of shape `(Cout)`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv3dSpec) -> Result<Var> {
        let geom = ConvGeom::new(spec, self.shape(x))?;
        self.value(w).expect_shape(&spec.weight_shape())?;
        if let Some(b) = b {
            self.value(b).expect_shape(&[spec.out_ch])?;
        }
        let out = geom.forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(&geom.out_shape(), out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(value, Op::Conv3d { x, w, b, geom }, ng))
    }

    /// `max(x, 0) + slope·min(x, 0)`; the derivative at 0 is `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let ng = self.ng(x);
        self.push(value, Op::LeakyRelu { x, slope }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let ng = self.ng(x);
        self.push(value, Op::Sigmoid { x }, ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        let ng = self.ng(x);
        self.push(value, Op::Abs { x }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub { a, b }, ng))
    }

    /// `scale·x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let ng = self.ng(x);
        self.push(value, Op::Affine { x, scale }, ng)
    }

    /// Arithmetic mean over every element, as a 0-d tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let ng = self.ng(x);
        self.push(value, Op::Mean { x }, ng)
    }

    /// `Σ c_i·x_i` over same-shaped operands.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::Shape("empty weighted sum".into()))?;
        let shape = self.shape(first).to_vec();
        let mut acc = Tensor::zeros(&shape);
        for &(v, c) in terms {
            let t = self.value(v);
            t.expect_shape(&shape)?;
            for (a, &x) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += c * x;
            }
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        Ok(self.push(
            acc,
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            ng,
        ))
    }

    /// Gather the listed indices of the last axis.
    pub fn select_last(&mut self, x: Var, cols: Vec<usize>) -> Result<Var> {
        let w = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::Shape("select on scalar".into()))?;
        if let Some(&c) = cols.iter().find(|&&c| c >= w) {
            return Err(Error::Shape(format!("column {c} outside width {w}")));
        }
        let value = self.value(x).select_last(&cols);
        let ng = self.ng(x);
        Ok(self.push(value, Op::SelectLast { x, cols }, ng))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).narrow(axis, start, len)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Narrow { x, axis, start }, ng))
    }

    /// Nearest-neighbour upsampling of the two spatial axes of a 5-D tensor.
    pub fn upsample(&mut self, x: Var, fh: usize, fw: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 5 || fh == 0 || fw == 0 {
            return Err(Error::Shape(format!("upsample({fh},{fw}) of {s:?}")));
        }
        let (h, w) = (s[3], s[4]);
        let src = self.value(x).data();
        let planes = src.len() / (h * w);
        let mut out = Vec::with_capacity(src.len() * fh * fw);
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..h * fh {
                let row = &plane[(y / fh) * w..(y / fh + 1) * w];
                for xx in 0..w * fw {
                    out.push(row[xx / fw]);
                }
            }
        }
        let value = Tensor::from_vec(&[s[0], s[1], s[2], h * fh, w * fw], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Upsample { x, fh, fw }, ng))
    }

    /// `w / σ` with `σ = uᵀ·W·v`, `W` being `w` flattened to `(rows × rest)`.
    ///
    /// `u` and `v` are treated as constants; `σ` is differentiated through `W`.
    pub fn spectral_scale(&mut self, w: Var, u: Vec<T>, v: Vec<T>) -> Result<Var> {
        let wt = self.value(w);
        let rows = wt.shape().first().copied().unwrap_or(1);
        let cols = wt.len() / rows.max(1);
        if u.len() != rows || v.len() != cols {
            return Err(Error::Shape(format!(
                "spectral vectors ({}, {}) for a {rows}×{cols} weight",
                u.len(),
                v.len()
            )));
        }
        let sigma = bilinear(wt.data(), &u, &v);
        let value = wt.map(|x| x / sigma);
        let ng = self.ng(w);
        Ok(self.push(value, Op::SpectralScale { w, u, v, sigma }, ng))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, delta: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let mut dx = self.ng(*x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = self.ng(*w).then(|| Tensor::zeros(wv.shape()));
                let mut db = b
                    .filter(|b| self.ng(*b))
                    .map(|_| Tensor::zeros(&[geom.spec.out_ch]));
                geom.backward(
                    xv.data(),
                    wv.data(),
                    g.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    acc(*b, db);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let d = self
                    .value(*x)
                    .zip_map(g, |v, gv| if v > T::zero() { gv } else { gv * *slope })
                    .expect("same shape");
                acc(*x, d);
            }
            Op::Sigmoid { x } => {
                let d = node
                    .value
                    .zip_map(g, |y, gv| gv * y * (T::one() - y))
                    .expect("same shape");
                acc(*x, d);
            }
            Op::Abs { x } => {
                let d = self
                    .value(*x)
                    .zip_map(g, |v, gv| {
                        if v > T::zero() {
                            gv
                        } else if v < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .expect("same shape");
                acc(*x, d);
            }
            Op::Add { a, b } => {
                if self.ng(*a) {
                    acc(*a, g.clone());
                }
                if self.ng(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.ng(*a) {
                    acc(*a, g.clone());
                }
                if self.ng(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Affine { x, scale } => acc(*x, g.map(|v| v * *scale)),
            Op::Mean { x } => {
                let xv = self.value(*x);
                let per = g.item() / T::of(xv.len() as f64);
                acc(*x, Tensor::full(xv.shape(), per));
            }
            Op::WeightedSum { terms } => {
                for &(v, c) in terms {
                    if self.ng(v) {
                        acc(v, g.map(|x| x * c));
                    }
                }
            }
            Op::SelectLast { x, cols } => {
                let xs = self.shape(*x);
                let w = *xs.last().unwrap();
                let mut d = Tensor::zeros(xs);
                let k = cols.len();
                for (r, gr) in g.data().chunks(k).enumerate() {
                    let row = &mut d.data_mut()[r * w..(r + 1) * w];
                    for (&c, &gv) in cols.iter().zip(gr) {
                        row[c] += gv;
                    }
                }
                acc(*x, d);
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis + 1..].iter().product();
                let n = xs[*axis];
                let len = g.shape()[*axis];
                let mut d = Tensor::zeros(xs);
                for o in 0..outer {
                    let dst = &mut d.data_mut()[(o * n + start) * inner..][..len * inner];
                    dst.copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, d);
            }
            Op::Upsample { x, fh, fw } => {
                let xs = self.shape(*x);
                let (h, w) = (xs[3], xs[4]);
                let (oh, ow) = (h * fh, w * fw);
                let mut d = Tensor::zeros(xs);
                let planes = d.len() / (h * w);
                for p in 0..planes {
                    let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut d.data_mut()[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for xx in 0..ow {
                            dst[(y / fh) * w + xx / fw] += src[y * ow + xx];
                        }
                    }
                }
                acc(*x, d);
            }
            Op::SpectralScale { w, u, v, sigma } => {
                // d(W/σ) = G/σ − <G, W>/σ² · u vᵀ
                let wv = self.value(*w);
                let inner: T = g
                    .data()
                    .iter()
                    .zip(wv.data())
                    .map(|(&a, &b)| a * b)
                    .sum();
                let coef = inner / (*sigma * *sigma);
                let cols = v.len();
                let mut d = g.map(|x| x / *sigma);
                for (i, &ui) in u.iter().enumerate() {
                    for (j, &vj) in v.iter().enumerate() {
                        d.data_mut()[i * cols + j] -= coef * ui * vj;
                    }
                }
                acc(*w, d);
            }
        }
    }
}

/// `uᵀ·W·v` for row-major `W`.
pub(crate) fn bilinear<T: Scalar>(w: &[T], u: &[T], v: &[T]) -> T {
    let cols = v.len();
    u.iter()
        .enumerate()
        .map(|(i, &ui)| {
            let row: T = w[i * cols..(i + 1) * cols]
                .iter()
                .zip(v)
                .map(|(&a, &b)| a * b)
                .sum();
            ui * row
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_leaky_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);
        let l = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(l).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn subgradient_at_zero_is_negative_slope() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let l = g.leaky_relu(x, 0.2);
        let m = g.mean(l);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.2]);
    }

    #[test]
    fn identity_conv_is_identity() {
        let spec = Conv3dSpec::new(1, 1, [1, 1, 1], [1, 1, 1]);
        let mut g = Graph::<f64>::new();
        let data = Tensor::from_fn(&[1, 2, 1, 3, 4], |i| (i[1] * 12 + i[3] * 4 + i[4]) as f64);
        let x = g.constant(data.clone());
        let w = g.constant(Tensor::full(&[1, 1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv3d(x, w, Some(b), spec).unwrap();
        assert_eq!(g.value(y), &data);
    }

    #[test]
    fn impulse_gives_block_of_ones() {
        let spec = Conv3dSpec::new(1, 1, [1, 3, 3], [1, 1, 1]);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 2, 1, 7, 7], |i| {
            if i[3] == 3 && i[4] == 3 {
                1.0
            } else {
                0.0
            }
        }));
        let w = g.constant(Tensor::full(&[1, 1, 1, 3, 3], 1.0));
        let y = g.conv3d(x, w, None, spec).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[1, 2, 1, 7, 7]);
        for t in 0..2 {
            for r in 0..7 {
                for c in 0..7 {
                    let v = out.data()[(t * 7 + r) * 7 + c];
                    let inside = (2..=4).contains(&r) && (2..=4).contains(&c);
                    assert_eq!(v, if inside { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 1, 1, 1]));
        assert!(g
            .conv3d(x, w, None, Conv3dSpec::new(3, 1, [1, 1, 1], [1, 1, 1]))
            .is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(&[3], 1.0));
        let b = g.input(Tensor::full(&[3], 2.0));
        let s = g.sub(a, b).unwrap();
        let m = g.mean(s);
        let grads = g.backward(m).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[-1.0 / 3.0; 3]);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::full(&[3], 1.0));
        assert!(g.backward(a).is_err());
    }
}
