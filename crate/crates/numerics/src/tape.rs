use std::f64::consts::PI;

use crate::array::{gemm_acc, Array};
use crate::error::{NumericsError, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule, used to prove that gradient
/// checks actually detect broken derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    /// Multiply the left-operand gradient of every matmul by this factor.
    MatmulGradScale(f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Abs(Var),
    Sqrt(Var),
    SumRows(Var),
    SumAll(Var),
    Softmax(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    WrapColumn(Var),
}

struct Node {
    value: Array,
    grad: Option<Array>,
    op: Op,
    /// Whether any gradient can flow into this node (it is, or depends on, a
    /// tracked leaf).
    tracked: bool,
}

/// Tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is always a valid
/// topological order. Gradients persist across [`Tape::backward`] calls until
/// [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient; zeros if nothing has flowed into `v` yet.
    pub fn grad(&self, v: Var) -> Array {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Array::zeros(node.value.shape()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Array, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let a = &self.nodes[v.0].value;
        (a.rows(), a.cols())
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::Dimension {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    // ---- forward operations -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.value(a).data(),
            m,
            k,
            false,
            self.value(b).data(),
            k,
            n,
            false,
            &mut out,
        );
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Array::matrix(m, n, out), Op::Matmul(a, b), tracked))
    }

    fn broadcast(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = if av.same_shape(bv) {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y));
            Array::new(av.shape().to_vec(), data.collect())?
        } else if bv.is_scalar() {
            let y = bv.data()[0];
            av.map(|x| f(x, y))
        } else if av.is_scalar() {
            let x = av.data()[0];
            bv.map(|y| f(x, y))
        } else {
            return Err(self.shape_err(op_name, a, b));
        };
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, op, tracked))
    }

    /// Elementwise sum; shapes must match or one side must be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 × n` row `row` to every row of the `m × n` matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(self.shape_err("add_row", a, row));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, x) in chunk.iter_mut().zip(&r) {
                *o += x;
            }
        }
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(Array::matrix(m, n, out), Op::AddRow(a, row), tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, c), tracked)
    }

    /// Adds the constant `c` to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let tracked = self.tracked(a);
        self.push(value, Op::Offset(a), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let tracked = self.tracked(a);
        self.push(value, Op::Relu(a), tracked)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let tracked = self.tracked(a);
        self.push(value, Op::Abs(a), tracked)
    }

    /// Square root of non-negative input; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(NumericsError::Contract("sqrt of negative value".into()));
        }
        let value = self.value(a).map(f64::sqrt);
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Sqrt(a), tracked))
    }

    /// Column sums of an `m × n` matrix, as a `1 × n` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let data = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(&data[i * n..(i + 1) * n]) {
                *o += x;
            }
        }
        let tracked = self.tracked(a);
        self.push(Array::matrix(1, n, out), Op::SumRows(a), tracked)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(value, Op::SumAll(a), tracked)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean absolute difference between two same-shaped nodes.
    pub fn abs_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.mean_all(d))
    }

    /// Row-wise softmax, stabilized by subtracting the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.softmax_rows_masked(a, None)
            .expect("unmasked softmax cannot fail")
    }

    /// Row-wise softmax where columns with `mask[j] == false` are treated as
    /// −∞ logits (their probability is exactly zero).
    pub fn softmax_rows_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(mask) = mask {
            if mask.len() != n {
                return Err(NumericsError::Dimension {
                    op: "softmax_rows",
                    lhs: vec![m, n],
                    rhs: vec![mask.len()],
                });
            }
            if !mask.iter().any(|&b| b) {
                return Err(NumericsError::Contract(
                    "softmax row with every column masked".into(),
                ));
            }
        }
        let keep = |j: usize| mask.is_none_or(|mk| mk[j]);
        let data = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &data[i * n..(i + 1) * n];
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in (0..n).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                total += e;
            }
            for o in &mut out[i * n..(i + 1) * n] {
                *o /= total;
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(Array::matrix(m, n, out), Op::Softmax(a), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let tracked = self.tracked(a);
        self.push(value, Op::Transpose(a), tracked)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Contract("concat of nothing".into()))?;
        let m = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(self.shape_err("concat_cols", first, p));
            }
        }
        let n: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Array::matrix(m, n, out),
            Op::ConcatCols(parts.to_vec()),
            tracked,
        ))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Contract("concat of nothing".into()))?;
        let n = self.dims(first).1;
        for &p in parts {
            if self.dims(p).1 != n {
                return Err(self.shape_err("concat_rows", first, p));
            }
        }
        let m: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Array::matrix(m, n, out),
            Op::ConcatRows(parts.to_vec()),
            tracked,
        ))
    }

    /// Selects rows of `table` by index (an embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(NumericsError::Contract(format!(
                "row index {bad} out of range for {m} rows"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(self.value(table).row(i));
        }
        let tracked = self.tracked(table);
        Ok(self.push(
            Array::matrix(indices.len(), n, out),
            Op::GatherRows(table, indices.to_vec()),
            tracked,
        ))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(NumericsError::Dimension {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        let tracked = self.tracked(a);
        Ok(self.push(Array::matrix(m, len, out), Op::SliceCols(a, start), tracked))
    }

    /// Wraps every element of column `col` into `[−π, π)`. The gradient passes
    /// through unchanged (the wrap is piecewise a translation).
    pub fn wrap_column(&mut self, a: Var, col: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if col >= n {
            return Err(NumericsError::Dimension {
                op: "wrap_column",
                lhs: vec![m, n],
                rhs: vec![col],
            });
        }
        let mut value = self.value(a).clone();
        for i in 0..m {
            let x = &mut value.data_mut()[i * n + col];
            *x = wrap_angle(*x);
        }
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::WrapColumn(a), tracked))
    }

    // ---- reverse pass -------------------------------------------------------

    /// Propagates d(loss)/d(node) to every node reachable from `loss`, adding
    /// to any gradients already stored.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].tracked {
                self.propagate(idx, &g, &mut grads);
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut send = |v: Var, contrib: Array| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.tracked(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_acc(g.data(), m, n, false, bv.data(), k, n, true, &mut ga);
                    if let Some(Fault::MatmulGradScale(f)) = self.fault {
                        ga.iter_mut().for_each(|x| *x *= f);
                    }
                    send(*a, Array::matrix(m, k, ga));
                }
                if self.tracked(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_acc(av.data(), m, k, true, g.data(), m, n, false, &mut gb);
                    send(*b, Array::matrix(k, n, gb));
                }
            }
            Op::Add(a, b) => {
                send(*a, reduce_to(g, self.value(*a)));
                send(*b, reduce_to(g, self.value(*b)));
            }
            Op::Sub(a, b) => {
                send(*a, reduce_to(g, self.value(*a)));
                send(*b, reduce_to(&g.map(|x| -x), self.value(*b)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    send(*a, reduce_to(&times(g, bv), av));
                }
                if self.tracked(*b) {
                    send(*b, reduce_to(&times(g, av), bv));
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if self.tracked(*row) {
                    let n = g.cols();
                    let mut r = vec![0.0; n];
                    for chunk in g.data().chunks(n) {
                        for (o, x) in r.iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    send(*row, Array::matrix(1, n, r));
                }
            }
            Op::Scale(a, c) => send(*a, g.map(|x| c * x)),
            Op::Offset(a) => send(*a, g.clone()),
            Op::Relu(a) => {
                send(
                    *a,
                    zip_with(g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::Abs(a) => {
                let sign = |x: f64| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                send(*a, zip_with(g, self.value(*a), |gi, x| gi * sign(x)));
            }
            Op::Sqrt(a) => {
                send(
                    *a,
                    zip_with(g, out, |gi, y| if y > 0.0 { 0.5 * gi / y } else { 0.0 }),
                );
            }
            Op::SumRows(a) => {
                let (m, n) = self.dims(*a);
                let mut ga = Vec::with_capacity(m * n);
                for _ in 0..m {
                    ga.extend_from_slice(g.data());
                }
                send(
                    *a,
                    Array::new(self.value(*a).shape().to_vec(), ga).expect("shape"),
                );
            }
            Op::SumAll(a) => send(*a, Array::filled(self.value(*a).shape(), g.data()[0])),
            Op::Softmax(a) => {
                let n = out.cols();
                let mut ga = vec![0.0; out.len()];
                for ((gr, yr), dst) in g
                    .data()
                    .chunks(n)
                    .zip(out.data().chunks(n))
                    .zip(ga.chunks_mut(n))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        dst[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*a, Array::new(out.shape().to_vec(), ga).expect("shape"));
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Reshape(a) => send(*a, g.reshape(self.value(*a).shape()).expect("shape")),
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    let mut part = Vec::with_capacity(m * w);
                    for i in 0..m {
                        part.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    offset += w;
                    send(
                        *p,
                        Array::new(self.value(*p).shape().to_vec(), part).expect("shape"),
                    );
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let part = g.data()[offset..offset + len].to_vec();
                    offset += len;
                    send(
                        *p,
                        Array::new(self.value(*p).shape().to_vec(), part).expect("shape"),
                    );
                }
            }
            Op::GatherRows(table, indices) => {
                let tv = self.value(*table);
                let n = tv.cols();
                let mut gt = vec![0.0; tv.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for (dst, x) in gt[i * n..(i + 1) * n].iter_mut().zip(g.row(r)) {
                        *dst += x;
                    }
                }
                send(*table, Array::new(tv.shape().to_vec(), gt).expect("shape"));
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims(*a);
                let w = g.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + w].copy_from_slice(g.row(i));
                }
                send(
                    *a,
                    Array::new(self.value(*a).shape().to_vec(), ga).expect("shape"),
                );
            }
            Op::WrapColumn(a) => send(*a, g.clone()),
        }
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

fn zip_with(g: &Array, x: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Array::new(x.shape().to_vec(), data).expect("same shape")
}

/// Elementwise product of `g` with `other`, broadcasting a scalar `other`.
fn times(g: &Array, other: &Array) -> Array {
    if other.is_scalar() && !g.is_scalar() {
        let c = other.data()[0];
        g.map(|x| x * c)
    } else if g.is_scalar() && !other.is_scalar() {
        let c = g.data()[0];
        other.map(|x| x * c)
    } else {
        zip_with(g, other, |a, b| a * b)
    }
}

/// Sums a broadcast gradient back down to the operand's shape.
fn reduce_to(g: &Array, target: &Array) -> Array {
    if target.is_scalar() && !g.is_scalar() {
        Array::filled(target.shape(), g.sum())
    } else if g.is_scalar() && !target.is_scalar() {
        Array::filled(target.shape(), g.data()[0])
    } else {
        Array::new(target.shape().to_vec(), g.data().to_vec()).expect("same shape")
    }
}
