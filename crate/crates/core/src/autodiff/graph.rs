//! The computation tape and its primitive set.
//!
//! Every primitive records its forward value on the tape together with
//! whatever it needs for the adjoint. `backward` walks the tape once in
//! reverse; nodes that do not depend on a parameter leaf are skipped.

use std::rc::Rc;

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Bcast {
    Same,
    Suffix,
    Map(Rc<Vec<usize>>),
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
        if a == b {
            return Ok(Bcast::Same);
        }
        if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
            return Ok(Bcast::Suffix);
        }
        if b.len() > a.len() {
            return Err(Error::shape(op, format!("cannot broadcast {:?} into {:?}", b, a)));
        }
        let pad = a.len() - b.len();
        let mut bdims = vec![1; pad];
        bdims.extend_from_slice(b);
        for (&ad, &bd) in a.iter().zip(&bdims) {
            if bd != ad && bd != 1 {
                return Err(Error::shape(op, format!("cannot broadcast {:?} into {:?}", b, a)));
            }
        }
        // strides of b (0 along broadcast dims)
        let mut strides = vec![0; bdims.len()];
        let mut acc = 1;
        for d in (0..bdims.len()).rev() {
            strides[d] = if bdims[d] == 1 { 0 } else { acc };
            acc *= bdims[d];
        }
        let total: usize = a.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; a.len()];
        for _ in 0..total {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for d in (0..a.len()).rev() {
                idx[d] += 1;
                if idx[d] < a[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Bcast::Map(Rc::new(map)))
    }

    #[inline]
    fn rhs(&self, i: usize, nb: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix => i % nb,
            Bcast::Map(m) => m[i],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Hardtanh,
}

#[derive(Clone, Copy, Debug)]
enum RowOp {
    Softmax,
    Cumsum,
    RevCumprod,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var, Bcast),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Unary(Unary, Var),
    Row(RowOp, Var),
    Sum { src: Var, axis: usize },
    SumAll(Var),
    Embedding { table: Var, ids: Vec<usize> },
    MulConst { src: Var, mask: Tensor },
    Conv { x: Var, w: Var, window: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    Take { src: Var, idx: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A reverse-mode tape. One per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf whose adjoint is collected by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn binary(&mut self, kind: Binary, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bc = Bcast::resolve(name, av.shape(), bv.shape())?;
        let nb = bv.len();
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(ad.len());
        for (i, &x) in ad.iter().enumerate() {
            let y = bd[bc.rhs(i, nb)];
            out.push(match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            });
        }
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Binary(kind, a, b, bc), ng))
    }

    /// Elementwise sum; `b` broadcasts into the shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, "div", a, b)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.nodes[x.0].value.map(|v| scale * v + shift);
        let ng = self.ng(x);
        self.push(value, Op::Affine(x, scale), ng)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(av.data(), bv.data(), &mut out, m, k, n, false, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", xv.shape())));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let d = xv.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshaped(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {} of {:?}", axis, base)));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {}", base, s, axis),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = &self.nodes[p.0].value;
                let w = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let s = xv.shape();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("{}..{} on axis {} of {:?}", start, end, axis, s),
            ));
        }
        let (outer, len, inner) = axis_split(s, axis);
        let mut shape = s.to_vec();
        shape[axis] = end - start;
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        let d = xv.data();
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&d[base + start * inner..base + end * inner]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Slice {
                src: x,
                axis,
                start,
            },
            ng,
        ))
    }

    /// Slice of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let axis = self.shape(x).len().saturating_sub(1);
        self.slice(x, axis, start, end)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Relu => |v| if v > 0.0 { v } else { 0.0 },
            Unary::Hardtanh => |v| v.clamp(-1.0, 1.0),
        };
        let value = self.nodes[x.0].value.map(f);
        let ng = self.ng(x);
        self.push(value, Op::Unary(kind, x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    /// `max(-1, min(1, x))`; the subgradient at ±1 is 0.
    pub fn hardtanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Hardtanh, x)
    }

    fn row_op(&mut self, kind: RowOp, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let w = xv.last_dim();
        if w == 0 {
            return Err(Error::shape("row op", "empty last axis"));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(w) {
            match kind {
                RowOp::Softmax => softmax_in_place(row),
                RowOp::Cumsum => {
                    let mut acc = 0.0;
                    for v in row.iter_mut() {
                        acc += *v;
                        *v = acc;
                    }
                }
                RowOp::RevCumprod => {
                    let mut acc = 1.0;
                    for v in row.iter_mut().rev() {
                        acc *= *v;
                        *v = acc;
                    }
                }
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let ng = self.ng(x);
        Ok(self.push(value, Op::Row(kind, x), ng))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.row_op(RowOp::Softmax, x)
    }

    /// Cumulative sum over the last axis.
    pub fn cumsum(&mut self, x: Var) -> Result<Var> {
        self.row_op(RowOp::Cumsum, x)
    }

    /// Suffix product over the last axis: `y_i = prod_{j >= i} x_j`.
    pub fn rev_cumprod(&mut self, x: Var) -> Result<Var> {
        self.row_op(RowOp::RevCumprod, x)
    }

    /// `cumsum(softmax(x))` over the last axis. Rounding can push partial
    /// sums a few ulps past 1; those are clamped so every entry stays in
    /// (0, 1]. The backward pass of the sum does not read its output, so the
    /// clamp leaves gradients unchanged.
    pub fn cumax(&mut self, x: Var) -> Result<Var> {
        let s = self.softmax(x)?;
        let c = self.cumsum(s)?;
        for v in self.nodes[c.0].value.data_mut() {
            *v = v.min(1.0);
        }
        Ok(c)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let s = xv.shape();
        if axis >= s.len() {
            return Err(Error::shape("sum", format!("axis {} of {:?}", axis, s)));
        }
        let (outer, len, inner) = axis_split(s, axis);
        let mut out = vec![0.0; outer * inner];
        let d = xv.data();
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (dst, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sum { src: x, axis }, ng))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::shape("mean", format!("axis {}", axis)))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.affine(s, 1.0 / n as f64, 0.0))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(v), Op::SumAll(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len().max(1);
        let s = self.sum(x);
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    /// Row lookup: `table[ids[r], :]` for each r, shape `[ids.len(), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = &self.nodes[table.0].value;
        if tv.rank() != 2 {
            return Err(Error::shape("embedding", format!("table {:?}", tv.shape())));
        }
        let (v, e) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::shape(
                    "embedding",
                    format!("id {} out of range for table of {} rows", id, v),
                ));
            }
            out.extend_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), e], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Elementwise product with a fixed mask of the same shape.
    pub fn mul_const(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.shape() != mask.shape() {
            return Err(Error::shape(
                "mul_const",
                format!("{:?} vs mask {:?}", xv.shape(), mask.shape()),
            ));
        }
        let out: Vec<f64> = xv.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let ng = self.ng(x);
        Ok(self.push(value, Op::MulConst { src: x, mask }, ng))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    /// Identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.shape(x), p, rng);
        self.mul_const(x, mask)
    }

    /// Valid 1-d convolution over the time axis: `x` is `[T, C]`, `w` is
    /// `[window * C, O]`; output row t sees input rows `t .. t + window`.
    /// Causality comes from left-padding the input by `window - 1` rows.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, window: usize) -> Result<Var> {
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        if xv.rank() != 2 || wv.rank() != 2 || window == 0 {
            return Err(Error::shape(
                "causal_conv1d",
                format!("x {:?}, w {:?}, window {}", xv.shape(), wv.shape(), window),
            ));
        }
        let (t, c) = (xv.shape()[0], xv.shape()[1]);
        let (kc, o) = (wv.shape()[0], wv.shape()[1]);
        if kc != window * c || t < window {
            return Err(Error::shape(
                "causal_conv1d",
                format!("x {:?}, w {:?}, window {}", xv.shape(), wv.shape(), window),
            ));
        }
        let tout = t - window + 1;
        let mut out = vec![0.0; tout * o];
        let (xd, wd) = (xv.data(), wv.data());
        for r in 0..tout {
            let col = &xd[r * c..(r + window) * c];
            gemm(col, wd, &mut out[r * o..(r + 1) * o], 1, kc, o, false, false);
        }
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(
            Tensor::from_parts(vec![tout, o], out),
            Op::Conv { x, w, window },
            ng,
        ))
    }

    /// Per-row negative log-likelihood of `targets` under `softmax(logits)`, shape `[n]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} vs {} targets", lv.shape(), targets.len()),
            ));
        }
        let v = lv.shape()[1];
        let mut probs = lv.data().to_vec();
        let mut out = Vec::with_capacity(targets.len());
        for (row, &t) in probs.chunks_mut(v).zip(targets) {
            if t >= v {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("target {} out of range for {} classes", t, v),
                ));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.push(lse - row[t]);
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::from_parts(vec![targets.len()], out),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: Tensor::from_parts(lv.shape().to_vec(), probs),
            },
            ng,
        ))
    }

    /// Gather flat elements: output `[idx.len()]`.
    pub fn take(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            out.push(*xv.data().get(i).ok_or_else(|| {
                Error::shape("take", format!("index {} of {:?}", i, xv.shape()))
            })?);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::vector(out),
            Op::Take {
                src: x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b, bc) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let nb = bv.len();
                if self.ng(*a) {
                    let da: Vec<f64> = match kind {
                        Binary::Add => gd.to_vec(),
                        Binary::Sub => gd.to_vec(),
                        Binary::Mul => gd
                            .iter()
                            .enumerate()
                            .map(|(k, gv)| gv * bv.data()[bc.rhs(k, nb)])
                            .collect(),
                        Binary::Div => gd
                            .iter()
                            .enumerate()
                            .map(|(k, gv)| gv / bv.data()[bc.rhs(k, nb)])
                            .collect(),
                    };
                    self.acc(grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.ng(*b) {
                    let out = node.value.data();
                    self.acc_with(grads, *b, |db| {
                        for (k, gv) in gd.iter().enumerate() {
                            let j = bc.rhs(k, nb);
                            db[j] += match kind {
                                Binary::Add => *gv,
                                Binary::Sub => -gv,
                                Binary::Mul => gv * av.data()[k],
                                Binary::Div => -gv * out[k] / bv.data()[j],
                            };
                        }
                    });
                }
            }
            Op::Affine(x, scale) => {
                let mut t = g.clone();
                t.scale_assign(*scale);
                self.acc(grads, *x, t);
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.ng(*a) {
                    self.acc_with(grads, *a, |da| {
                        gemm(gd, bv.data(), da, m, n, k, false, true);
                    });
                }
                if self.ng(*b) {
                    self.acc_with(grads, *b, |db| {
                        gemm(av.data(), gd, db, k, m, n, true, false);
                    });
                }
            }
            Op::Transpose(x) => {
                let s = g.shape();
                let (r, c) = (s[0], s[1]);
                self.acc_with(grads, *x, |dx| {
                    for a in 0..r {
                        for b in 0..c {
                            dx[b * r + a] += gd[a * c + b];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                self.acc(grads, *x, Tensor::from_parts(shape, gd.to_vec()));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    if self.ng(*p) {
                        self.acc_with(grads, *p, |dp| {
                            for o in 0..outer {
                                let src = &gd[(o * total + offset) * inner
                                    ..(o * total + offset + len) * inner];
                                for (d, s) in dp[o * len * inner..(o + 1) * len * inner]
                                    .iter_mut()
                                    .zip(src)
                                {
                                    *d += s;
                                }
                            }
                        });
                    }
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let full = self.nodes[src.0].value.shape();
                let (outer, len, inner) = axis_split(full, *axis);
                let width = node.value.shape()[*axis];
                self.acc_with(grads, *src, |dx| {
                    for o in 0..outer {
                        let dst = &mut dx[(o * len + start) * inner
                            ..(o * len + start + width) * inner];
                        for (d, s) in dst
                            .iter_mut()
                            .zip(&gd[o * width * inner..(o + 1) * width * inner])
                        {
                            *d += s;
                        }
                    }
                });
            }
            Op::Unary(kind, x) => {
                let xv = self.nodes[x.0].value.data();
                let y = node.value.data();
                let dx: Vec<f64> = (0..gd.len())
                    .map(|k| {
                        gd[k]
                            * match kind {
                                Unary::Sigmoid => y[k] * (1.0 - y[k]),
                                Unary::Tanh => 1.0 - y[k] * y[k],
                                Unary::Relu => {
                                    if xv[k] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Unary::Hardtanh => {
                                    if xv[k] > -1.0 && xv[k] < 1.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                            }
                    })
                    .collect();
                self.acc(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Row(kind, x) => {
                let w = node.value.last_dim();
                let y = node.value.data();
                let xv = self.nodes[x.0].value.data();
                let mut dx = vec![0.0; gd.len()];
                for r in 0..gd.len() / w {
                    let gr = &gd[r * w..(r + 1) * w];
                    let yr = &y[r * w..(r + 1) * w];
                    let dr = &mut dx[r * w..(r + 1) * w];
                    match kind {
                        RowOp::Softmax => {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for k in 0..w {
                                dr[k] = yr[k] * (gr[k] - dot);
                            }
                        }
                        RowOp::Cumsum => {
                            let mut acc = 0.0;
                            for k in (0..w).rev() {
                                acc += gr[k];
                                dr[k] = acc;
                            }
                        }
                        RowOp::RevCumprod => {
                            let xr = &xv[r * w..(r + 1) * w];
                            let mut acc = 0.0;
                            for k in 0..w {
                                acc = if k == 0 { gr[0] } else { acc * xr[k - 1] + gr[k] };
                                let suffix = if k + 1 < w { yr[k + 1] } else { 1.0 };
                                dr[k] = acc * suffix;
                            }
                        }
                    }
                }
                self.acc(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Sum { src, axis } => {
                let full = self.nodes[src.0].value.shape();
                let (outer, len, inner) = axis_split(full, *axis);
                self.acc_with(grads, *src, |dx| {
                    for o in 0..outer {
                        let gs = &gd[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for (d, s) in dx[base..base + inner].iter_mut().zip(gs) {
                                *d += s;
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let gv = gd[0];
                self.acc_with(grads, *x, |dx| {
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let e = node.value.last_dim();
                self.acc_with(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, s) in dt[id * e..(id + 1) * e].iter_mut().zip(&gd[r * e..(r + 1) * e])
                        {
                            *d += s;
                        }
                    }
                });
            }
            Op::MulConst { src, mask } => {
                let dx: Vec<f64> = gd.iter().zip(mask.data()).map(|(a, b)| a * b).collect();
                self.acc(grads, *src, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Conv { x, w, window } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let c = xv.shape()[1];
                let kc = window * c;
                let o = wv.shape()[1];
                let tout = node.value.shape()[0];
                if self.ng(*w) {
                    self.acc_with(grads, *w, |dw| {
                        for r in 0..tout {
                            let col = &xv.data()[r * c..(r + window) * c];
                            gemm(col, &gd[r * o..(r + 1) * o], dw, kc, 1, o, true, false);
                        }
                    });
                }
                if self.ng(*x) {
                    self.acc_with(grads, *x, |dx| {
                        for r in 0..tout {
                            gemm(
                                &gd[r * o..(r + 1) * o],
                                wv.data(),
                                &mut dx[r * c..(r + window) * c],
                                1,
                                o,
                                kc,
                                false,
                                true,
                            );
                        }
                    });
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = probs.last_dim();
                let mut dl = probs.data().to_vec();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * v + t] -= 1.0;
                    for x in &mut dl[r * v..(r + 1) * v] {
                        *x *= gd[r];
                    }
                }
                self.acc(grads, *logits, Tensor::from_parts(probs.shape().to_vec(), dl));
            }
            Op::Take { src, idx } => {
                self.acc_with(grads, *src, |dx| {
                    for (k, &j) in idx.iter().enumerate() {
                        dx[j] += gd[k];
                    }
                });
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Inverted-dropout mask: entries are 0 or `1/(1-p)`.
pub fn dropout_mask<R: Rng>(shape: &[usize], p: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 - p;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}
