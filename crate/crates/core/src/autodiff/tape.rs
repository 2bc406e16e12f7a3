//! Define-by-run reverse-mode differentiation over dense arrays.
//!
//! Every operation appends a node holding its output value and enough
//! context to propagate adjoints. Nodes are only ever appended, so the node
//! list is already in topological order and `backward` is a single reverse
//! sweep. A tape is meant to live for one training step.

use crate::autodiff::array::{split_axis, strides, Array};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    /// Element-wise (Hadamard) product.
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary { kind: BinaryOp, a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, dims: BmmDims },
    Permute { a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    Softmax { a: Var, axis: usize },
    Relu { a: Var },
    Sigmoid { a: Var },
    Abs { a: Var },
    Powf { a: Var, p: f64 },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { a: Var, axis: usize, start: usize },
    SumAxis { a: Var, axis: usize },
    Sum { a: Var },
    Mean { a: Var },
}

#[derive(Clone, Copy, Debug)]
struct BmmDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Operation record plus per-node values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not influence the loss or was recorded as a constant.
    pub fn get(&self, var: Var) -> Option<Array> {
        let data = self.grads.get(var.0)?.as_ref()?;
        Some(Array::new(self.shapes[var.0].clone(), data.clone()).expect("gradient shape"))
    }

    /// Gradient as a flat slice (row-major), `None` as in [`Gradients::get`].
    pub fn get_data(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0)?.as_deref()
    }

    /// Deliberately perturbs one stored gradient entry. Only used to verify
    /// that gradient checking detects faults.
    pub fn corrupt(&mut self, var: Var, index: usize, delta: f64) {
        if let Some(Some(g)) = self.grads.get_mut(var.0) {
            g[index] += delta;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Existing [`Var`] handles become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_raw(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Array, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    // ---- element-wise -------------------------------------------------

    /// Element-wise binary operation with size-1 axis broadcasting
    /// (shapes are right-aligned, missing leading axes count as size 1).
    pub fn elementwise(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::Shape {
            op: "elementwise",
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let f = match kind {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let ia = Broadcast::new(&sa, &out_shape);
        let ib = Broadcast::new(&sb, &out_shape);
        let total: usize = out_shape.iter().product();
        let data = match (&ia, &ib) {
            (Broadcast::Same, Broadcast::Same) => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            (Broadcast::Same, Broadcast::Cycle(_)) => av.iter().zip(bv.iter().cycle()).map(|(&x, &y)| f(x, y)).collect(),
            (Broadcast::Cycle(_), Broadcast::Same) => av.iter().cycle().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..total).map(|i| f(av[ia.index(i)], bv[ib.index(i)])).collect(),
        };
        let value = Array::new(out_shape, data)?;
        Ok(self.push(value, Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(value, Op::Scale { a, c }, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar { a }, &[a])
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        match kind {
            Activation::Relu => {
                let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
                self.push(value, Op::Relu { a }, &[a])
            }
            Activation::Sigmoid => {
                let value = self.value(a).map(sigmoid);
                self.push(value, Op::Sigmoid { a }, &[a])
            }
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs { a }, &[a])
    }

    /// `x^p` element-wise. Inputs must be positive when `p` is not an integer.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(p));
        self.push(value, Op::Powf { a, p }, &[a])
    }

    // ---- linear algebra -----------------------------------------------

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Array::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched matrix product of `[B, m, k]` and `[B, k, n]`. Either operand
    /// may be 2-D (or have batch size 1), in which case it is shared across
    /// the batch.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::Shape {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let split = |s: &[usize]| -> Option<(usize, usize, usize)> {
            match s.len() {
                2 => Some((1, s[0], s[1])),
                3 => Some((s[0], s[1], s[2])),
                _ => None,
            }
        };
        let (ba, m, k) = split(&sa).ok_or_else(err)?;
        let (bb, k2, n) = split(&sb).ok_or_else(err)?;
        if k != k2 || (ba != bb && ba != 1 && bb != 1) {
            return Err(err());
        }
        let batch = ba.max(bb);
        let dims = BmmDims {
            batch,
            a_batched: ba > 1,
            b_batched: bb > 1,
            m,
            k,
            n,
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            let ao = if dims.a_batched { t * m * k } else { 0 };
            let bo = if dims.b_batched { t * k * n } else { 0 };
            gemm_nn(
                &av[ao..ao + m * k],
                &bv[bo..bo + k * n],
                &mut out[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Array::new(vec![batch, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, dims }, &[a, b]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(Error::invalid(
                "permute",
                format!("axes {axes:?} are not a permutation for shape {shape:?}"),
            ));
        }
        let (data, out_shape) = permute_data(self.value(a).data(), &shape, axes);
        let value = Array::new(out_shape, data)?;
        Ok(self.push(
            value,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            &[a],
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::invalid("transpose", "needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape.to_vec()).map_err(|_| Error::Shape {
            op: "reshape",
            lhs: self.shape(a).to_vec(),
            rhs: shape.to_vec(),
        })?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    // ---- normalisation / structure -------------------------------------

    /// Softmax along `axis`, stabilised by subtracting the slice maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for t in 0..len {
                    mx = mx.max(x[base + t * inner]);
                }
                let mut z = 0.0;
                for t in 0..len {
                    let e = (x[base + t * inner] - mx).exp();
                    y[base + t * inner] = e;
                    z += e;
                }
                for t in 0..len {
                    y[base + t * inner] /= z;
                }
            }
        }
        let value = Array::new(shape, y)?;
        Ok(self.push(value, Op::Softmax { a, axis }, &[a]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = vec![0.0; out_shape.iter().product()];
        let mut offset = 0;
        for &v in inputs {
            let len = self.shape(v)[axis];
            let src = self.value(v).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                out[dst..dst + len * inner]
                    .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        let value = Array::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            out.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Array::new(out_shape, out)?;
        Ok(self.push(value, Op::Narrow { a, axis, start }, &[a]))
    }

    // ---- reductions -----------------------------------------------------

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                "reduce_sum",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let src = &x[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Array::new(out_shape, out)?;
        Ok(self.push(value, Op::SumAxis { a, axis }, &[a]))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Array::scalar(s), Op::Sum { a }, &[a])
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a).data();
        let s = x.iter().sum::<f64>() / x.len() as f64;
        self.push(Array::scalar(s), Op::Mean { a }, &[a])
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_value.shape()),
            ));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes[..n]
                .iter()
                .map(|node| node.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let out_shape = node.value.shape();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ia = Broadcast::new(sa, out_shape);
                let ib = Broadcast::new(sb, out_shape);
                if self.needs(*a) {
                    let ga = accum(grads, *a, av.len());
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryOp::Add | BinaryOp::Sub => gi,
                            BinaryOp::Mul => gi * bv[ib.index(i)],
                        };
                        ga[ia.index(i)] += d;
                    }
                }
                if self.needs(*b) {
                    let gb = accum(grads, *b, bv.len());
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryOp::Add => gi,
                            BinaryOp::Sub => -gi,
                            BinaryOp::Mul => gi * av[ia.index(i)],
                        };
                        gb[ib.index(i)] += d;
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.needs(*a) {
                    let ga = accum(grads, *a, g.len());
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d += c * gi;
                    }
                }
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                if self.needs(*a) {
                    let ga = accum(grads, *a, g.len());
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    gemm_nt(g, bv, accum(grads, *a, m * k), m, n, k);
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    gemm_tn(av, g, accum(grads, *b, k * n), m, k, n);
                }
            }
            Op::BatchMatMul { a, b, dims } => {
                let BmmDims {
                    batch,
                    a_batched,
                    b_batched,
                    m,
                    k,
                    n,
                } = *dims;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let ga = accum(grads, *a, av.len());
                    for t in 0..batch {
                        let ao = if a_batched { t * m * k } else { 0 };
                        let bo = if b_batched { t * k * n } else { 0 };
                        gemm_nt(
                            &g[t * m * n..(t + 1) * m * n],
                            &bv[bo..bo + k * n],
                            &mut ga[ao..ao + m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.needs(*b) {
                    let gb = accum(grads, *b, bv.len());
                    for t in 0..batch {
                        let ao = if a_batched { t * m * k } else { 0 };
                        let bo = if b_batched { t * k * n } else { 0 };
                        gemm_tn(
                            &av[ao..ao + m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut gb[bo..bo + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Permute { a, axes } => {
                if self.needs(*a) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inverse[ax] = i;
                    }
                    let (back, _) = permute_data(g, node.value.shape(), &inverse);
                    let ga = accum(grads, *a, g.len());
                    for (d, v) in ga.iter_mut().zip(back) {
                        *d += v;
                    }
                }
            }
            Op::Softmax { a, axis } => {
                if self.needs(*a) {
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                    let ga = accum(grads, *a, g.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len)
                                .map(|t| g[base + t * inner] * out[base + t * inner])
                                .sum();
                            for t in 0..len {
                                let j = base + t * inner;
                                ga[j] += out[j] * (g[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::Relu { a } => {
                if self.needs(*a) {
                    let x = self.value(*a).data();
                    let ga = accum(grads, *a, g.len());
                    for ((d, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sigmoid { a } => {
                if self.needs(*a) {
                    let ga = accum(grads, *a, g.len());
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Abs { a } => {
                if self.needs(*a) {
                    let x = self.value(*a).data();
                    let ga = accum(grads, *a, g.len());
                    for ((d, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *d += gi;
                        } else if xi < 0.0 {
                            *d -= gi;
                        }
                    }
                }
            }
            Op::Powf { a, p } => {
                if self.needs(*a) {
                    let x = self.value(*a).data();
                    let ga = accum(grads, *a, g.len());
                    for ((d, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        *d += gi * p * xi.powf(p - 1.0);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.needs(v) {
                        let gv = accum(grads, v, outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            for (d, s) in gv[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(&g[src..src + len * inner])
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow { a, axis, start } => {
                if self.needs(*a) {
                    let in_shape = self.shape(*a);
                    let (outer, full, inner) = split_axis(in_shape, *axis);
                    let len = node.value.shape()[*axis];
                    let ga = accum(grads, *a, outer * full * inner);
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        for (d, s) in ga[dst..dst + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::SumAxis { a, axis } => {
                if self.needs(*a) {
                    let (outer, len, inner) = split_axis(self.shape(*a), *axis);
                    let ga = accum(grads, *a, outer * len * inner);
                    for o in 0..outer {
                        for t in 0..len {
                            let dst = (o * len + t) * inner;
                            for (d, s) in ga[dst..dst + inner]
                                .iter_mut()
                                .zip(&g[o * inner..(o + 1) * inner])
                            {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if self.needs(*a) {
                    let len = self.value(*a).len();
                    for d in accum(grads, *a, len).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean { a } => {
                if self.needs(*a) {
                    let len = self.value(*a).len();
                    let s = g[0] / len as f64;
                    for d in accum(grads, *a, len).iter_mut() {
                        *d += s;
                    }
                }
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize], i: usize| {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    (0..rank)
        .map(|i| {
            let (x, y) = (pad(a, i), pad(b, i));
            match (x, y) {
                _ if x == y => Some(x),
                (1, _) => Some(y),
                (_, 1) => Some(x),
                _ => None,
            }
        })
        .collect()
}

/// How an operand's flat index follows from a flat output index.
enum Broadcast {
    Same,
    /// The operand matches the trailing axes of the output and repeats
    /// every `len` entries.
    Cycle(usize),
    Map(Vec<usize>),
}

impl Broadcast {
    fn new(in_shape: &[usize], out_shape: &[usize]) -> Self {
        if in_shape == out_shape {
            return Broadcast::Same;
        }
        let trimmed: &[usize] = {
            let lead = in_shape.iter().take_while(|&&d| d == 1).count();
            &in_shape[lead..]
        };
        if out_shape.ends_with(trimmed) {
            return Broadcast::Cycle(trimmed.iter().product());
        }
        Broadcast::Map(broadcast_map(in_shape, out_shape))
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Cycle(len) => i % len,
            Broadcast::Map(m) => m[i],
        }
    }
}

/// For every flat index of `out_shape`, the flat index into an operand of
/// `in_shape` under size-1 broadcasting.
fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let off = rank - in_shape.len();
    let in_strides = strides(in_shape);
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < off || in_shape[i - off] == 1 {
                0
            } else {
                in_strides[i - off]
            }
        })
        .collect();
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..total {
        map.push(pos);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            pos += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            pos -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..src.len() {
        out.push(src[pos]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            pos += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            pos -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

/// `c += a · b` for `a: [m, k]`, `b: [k, n]`.
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, (a, k, 1), (b, n, 1), c);
}

/// `c += a · bᵀ` for `a: [m, n]`, `b: [k, n]`, `c: [m, k]`.
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    gemm(m, n, k, (a, n, 1), (b, 1, n), c);
}

/// `c += aᵀ · b` for `a: [m, k]`, `b: [m, n]`, `c: [k, n]`.
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(k, m, n, (a, 1, k), (b, n, 1), c);
}

/// `c[m, n] += a[m, k] · b[k, n]` with operands given as
/// `(data, row stride, column stride)`; `c` is row-major.
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], usize, usize), b: (&[f64], usize, usize), c: &mut [f64]) {
    assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the bounds above cover every index the strides address.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
