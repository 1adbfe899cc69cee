use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    /// Natural log of `max(x, 1e-12)`.
    Log,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    Scale(Var, S),
    Softmax(Var),
    Reduce {
        kind: ReduceKind,
        input: Var,
        axis: Option<usize>,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    AddRow {
        input: Var,
        bias: Var,
    },
    MulCol {
        input: Var,
        col: Var,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
    grad: Option<Vec<S>>,
}

/// Define-by-run recording of tensor operations for reverse-mode
/// differentiation. Nodes are appended in evaluation order, so the node list
/// is always topologically sorted.
#[derive(Clone, Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

fn shape_str(s: &[usize]) -> String {
    let dims: Vec<String> = s.iter().map(ToString::to_string).collect();
    format!("[{}]", dims.join("x"))
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> S {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a leaf; `None` before any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, format!("expected a matrix, got {}", shape_str(s))));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "tensor_engine::matmul";
        let (m, k) = self.matrix_dims(OP, a)?;
        let (k2, n) = self.matrix_dims(OP, b)?;
        if k != k2 {
            return Err(Error::dim(
                OP,
                format!(
                    "inner dimensions disagree: {} x {}",
                    shape_str(self.shape(a)),
                    shape_str(self.shape(b))
                ),
            ));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == S::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let na = self.value(a).numel();
        let nb = self.value(b).numel();
        let shape = if sa == sb || nb == 1 {
            sa.to_vec()
        } else if na == 1 {
            sb.to_vec()
        } else {
            return Err(Error::dim(
                "tensor_engine::elementwise",
                format!("{:?} operands {} and {}", kind, shape_str(sa), shape_str(sb)),
            ));
        };
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let f = |x: S, y: S| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<S> = if na == nb {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else if nb == 1 {
            ad.iter().map(|&x| f(x, bd[0])).collect()
        } else {
            bd.iter().map(|&y| f(ad[0], y)).collect()
        };
        let value = Tensor::new(shape, out)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let floor = S::log_floor();
        let value = self.value(a).map(|x| match kind {
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => {
                if x >= S::zero() {
                    S::one() / (S::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (S::one() + e)
                }
            }
            UnaryKind::Relu => x.max(S::zero()),
            UnaryKind::Exp => x.min(S::max_value().ln()).exp(),
            UnaryKind::Log => x.max(floor).ln(),
            UnaryKind::Neg => -x,
        });
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Unary(kind, a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Neg, a)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x * c);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, c), ng)
    }

    /// Softmax over the last dimension, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let k = t.last_dim();
        if k < 2 {
            return Err(Error::dim(
                "tensor_engine::softmax",
                format!("last dimension must be >= 2, got {}", shape_str(t.shape())),
            ));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(k) {
            let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(value, Op::Softmax(a), ng))
    }

    /// Sum or mean, over everything (`axis = None`) or one axis. Reduced
    /// dimensions are kept with size 1.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(a);
        let value = match axis {
            None => {
                let total: S = t.data().iter().copied().sum();
                let n = t.numel();
                let v = match kind {
                    ReduceKind::Sum => total,
                    ReduceKind::Mean => total / S::from_usize_lossy(n),
                };
                Tensor::full(&vec![1; t.rank()], v)
            }
            Some(ax) => {
                if ax >= t.rank() {
                    return Err(Error::dim(
                        "tensor_engine::reduce",
                        format!("axis {ax} invalid for {}", shape_str(t.shape())),
                    ));
                }
                let (outer, len, inner) = split_axis(t.shape(), ax);
                let mut out = vec![S::zero(); outer * inner];
                let d = t.data();
                for o in 0..outer {
                    for l in 0..len {
                        let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let n = S::from_usize_lossy(len);
                    out.iter_mut().for_each(|v| *v = *v / n);
                }
                let mut shape = t.shape().to_vec();
                shape[ax] = 1;
                Tensor::new(shape, out)?
            }
        };
        let ng = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reduce { kind, input: a, axis }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, None)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, Some(axis))
    }

    /// Selects rows of a `[V x d]` table; repeated indices are allowed.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        const OP: &str = "tensor_engine::gather_rows";
        let (v, d) = self.matrix_dims(OP, table)?;
        if indices.is_empty() {
            return Err(Error::contract(OP, "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::Index {
                op: OP,
                index: bad,
                bound: v,
            });
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![indices.len(), d], out)?;
        let ng = self.any_grad(&[table]);
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Adds a bias vector of length `cols` to every row of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("tensor_engine::add_row", a)?;
        if self.value(bias).numel() != n {
            return Err(Error::dim(
                "tensor_engine::add_row",
                format!(
                    "bias {} does not match {}",
                    shape_str(self.shape(bias)),
                    shape_str(self.shape(a))
                ),
            ));
        }
        let bd = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bd) {
                *o += b;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.any_grad(&[a, bias]);
        Ok(self.push(value, Op::AddRow { input: a, bias }, ng))
    }

    /// Scales row `i` of an `[m x n]` matrix by entry `i` of an `[m x 1]` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("tensor_engine::mul_col", a)?;
        if self.shape(col) != [m, 1] {
            return Err(Error::dim(
                "tensor_engine::mul_col",
                format!(
                    "column {} does not match {}",
                    shape_str(self.shape(col)),
                    shape_str(self.shape(a))
                ),
            ));
        }
        let cd = self.value(col).data();
        let mut out = self.value(a).data().to_vec();
        for (row, &c) in out.chunks_mut(n).zip(cd) {
            row.iter_mut().for_each(|v| *v *= c);
        }
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.any_grad(&[a, col]);
        Ok(self.push(value, Op::MulCol { input: a, col }, ng))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "tensor_engine::concat_cols";
        if parts.is_empty() {
            return Err(Error::contract(OP, "nothing to concatenate"));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.matrix_dims(OP, p)?);
        }
        let m = dims[0].0;
        if dims.iter().any(|d| d.0 != m) {
            let shapes: Vec<String> = parts.iter().map(|&p| shape_str(self.shape(p))).collect();
            return Err(Error::dim(OP, format!("row counts differ: {}", shapes.join(", "))));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &(_, n)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(p).data()[i * n..(i + 1) * n]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        let ng = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("tensor_engine::slice_cols", a)?;
        if start >= end || end > n {
            return Err(Error::dim(
                "tensor_engine::slice_cols",
                format!("columns {start}..{end} invalid for {}", shape_str(self.shape(a))),
            ));
        }
        let d = self.value(a).data();
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&d[i * n + start..i * n + end]);
        }
        let value = Tensor::new(vec![m, w], out)?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(value, Op::SliceCols { input: a, start }, ng))
    }

    /// Accumulates d`loss`/d`leaf` into every trainable leaf. Calling it again
    /// without [`Tape::zero_grad`] adds to the existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(
                "tensor_engine::backward",
                format!("loss must be scalar, got {}", shape_str(self.shape(loss))),
            ));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<S>>> = vec![None; n];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, Some(g)) = (&node.op, g) {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let nc = self.shape(*b)[1];
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![S::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * nc..(i + 1) * nc];
                        for p in 0..k {
                            let brow = &bd[p * nc..(p + 1) * nc];
                            let mut acc = S::zero();
                            for (&x, &y) in grow.iter().zip(brow) {
                                acc += x * y;
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![S::zero(); k * nc];
                    for i in 0..m {
                        let grow = &g[i * nc..(i + 1) * nc];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == S::zero() {
                                continue;
                            }
                            for (d, &x) in db[p * nc..(p + 1) * nc].iter_mut().zip(grow) {
                                *d += av * x;
                            }
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Binary(kind, a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let pick = |d: &[S], j: usize| if d.len() == 1 { d[0] } else { d[j] };
                for (operand, other, first) in [(*a, bd, true), (*b, ad, false)] {
                    if !self.nodes[operand.0].needs_grad {
                        continue;
                    }
                    let full: Vec<S> = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gj)| match kind {
                            BinaryKind::Add => gj,
                            BinaryKind::Sub => {
                                if first {
                                    gj
                                } else {
                                    -gj
                                }
                            }
                            BinaryKind::Mul => gj * pick(other, j),
                        })
                        .collect();
                    let reduced = if self.value(operand).numel() == 1 && full.len() != 1 {
                        vec![full.iter().copied().sum()]
                    } else {
                        full
                    };
                    self.accumulate(grads, operand, reduced);
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let floor = S::log_floor();
                let d: Vec<S> = g
                    .iter()
                    .zip(x)
                    .zip(out)
                    .map(|((&gj, &xj), &yj)| match kind {
                        UnaryKind::Tanh => gj * (S::one() - yj * yj),
                        UnaryKind::Sigmoid => gj * yj * (S::one() - yj),
                        UnaryKind::Relu => {
                            if xj > S::zero() {
                                gj
                            } else {
                                S::zero()
                            }
                        }
                        UnaryKind::Exp => gj * yj,
                        UnaryKind::Log => {
                            if xj >= floor {
                                gj / xj
                            } else {
                                S::zero()
                            }
                        }
                        UnaryKind::Neg => -gj,
                    })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, c) => {
                let d = g.iter().map(|&gj| gj * *c).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let k = node.value.last_dim();
                let mut d = vec![S::zero(); g.len()];
                for ((dr, gr), yr) in d.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                    let dot: S = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                    for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Reduce { kind, input, axis } => {
                let t = self.value(*input);
                let d = match axis {
                    None => {
                        let gv = match kind {
                            ReduceKind::Sum => g[0],
                            ReduceKind::Mean => g[0] / S::from_usize_lossy(t.numel()),
                        };
                        vec![gv; t.numel()]
                    }
                    Some(ax) => {
                        let (outer, len, inner) = split_axis(t.shape(), *ax);
                        let norm = match kind {
                            ReduceKind::Sum => S::one(),
                            ReduceKind::Mean => S::one() / S::from_usize_lossy(len),
                        };
                        let mut d = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            for _ in 0..len {
                                d.extend(g[o * inner..(o + 1) * inner].iter().map(|&v| v * norm));
                            }
                        }
                        d
                    }
                };
                self.accumulate(grads, *input, d);
            }
            Op::GatherRows { table, indices } => {
                let dcols = self.shape(*table)[1];
                let mut d = vec![S::zero(); self.value(*table).numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    for (dst, &v) in d[idx * dcols..(idx + 1) * dcols]
                        .iter_mut()
                        .zip(&g[r * dcols..(r + 1) * dcols])
                    {
                        *dst += v;
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::AddRow { input, bias } => {
                let n = self.value(*bias).numel();
                if self.nodes[bias.0].needs_grad {
                    let mut db = vec![S::zero(); n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    self.accumulate(grads, *bias, db);
                }
                self.accumulate(grads, *input, g.to_vec());
            }
            Op::MulCol { input, col } => {
                let n = self.shape(*input)[1];
                let cd = self.value(*col).data();
                let xd = self.value(*input).data();
                if self.nodes[col.0].needs_grad {
                    let dc = g
                        .chunks(n)
                        .zip(xd.chunks(n))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *col, dc);
                }
                if self.nodes[input.0].needs_grad {
                    let mut dx = g.to_vec();
                    for (row, &c) in dx.chunks_mut(n).zip(cd) {
                        row.iter_mut().for_each(|v| *v *= c);
                    }
                    self.accumulate(grads, *input, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[1];
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(m * n);
                        for i in 0..m {
                            d.extend_from_slice(&g[i * total + offset..i * total + offset + n]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { input, start } => {
                let (m, n) = (self.shape(*input)[0], self.shape(*input)[1]);
                let w = node.value.shape()[1];
                let mut d = vec![S::zero(); m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *input, d);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, d: Vec<S>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(d),
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
