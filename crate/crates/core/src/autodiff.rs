//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is an append-only arena. Every operation pushes a node that
//! holds its forward value and the handles of its parents, so the arena
//! is always in topological order. [`Tape::backward`] walks it once in
//! reverse; a tape serves exactly one backward pass.
//!
//! Shapes must match exactly. The only broadcasts are tensor-with-scalar
//! ([`Tape::scale`], [`Tape::add_scalar`]) and the two explicit row
//! broadcasts [`Tape::add_bias`] and [`Tape::scale_rows`].

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{Tensor, TensorError};

pub mod gradcheck;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowMean(Var),
    GroupSumRows(Var, usize),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var, Option<Vec<bool>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-use record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not require
    /// gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.index()).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.index()).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked by caller")
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    #[inline]
    fn rg(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index()].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Smallest distance from a gradient-carrying input of `relu` or
    /// `clamp` to a point where its derivative jumps; infinite if none.
    pub fn kink_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for node in &self.nodes {
            let (a, points) = match node.op {
                Op::Relu(a) => (a, [0.0, 0.0]),
                Op::Clamp(a, lo, hi) => (a, [lo, hi]),
                _ => continue,
            };
            if !self.rg(a) {
                continue;
            }
            for &x in self.value(a).data() {
                for p in points {
                    best = best.min((x - p).abs());
                }
            }
        }
        best
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.check_same(tb, name)?;
        let value = zip_map(ta, tb, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`; the natural product for weights stored as `[out × in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let value = ta.matmul_nt(tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_bias", ta, tb));
        }
        let cols = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % cols])
            .collect();
        let value = Tensor::new(ta.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    /// Multiplies row `r` of `a` by `scale[r]`, where `scale` is `n × 1`.
    pub fn scale_rows(&mut self, a: Var, scale: Var) -> Result<Var, TensorError> {
        let (ta, ts) = (self.value(a), self.value(scale));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(shape_err("scale_rows", ta, ts));
        }
        let cols = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * ts.data()[i / cols])
            .collect();
        let value = Tensor::new(ta.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(scale);
        Ok(self.push(value, Op::ScaleRows(a, scale), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Elementwise `log(1 + e^x)`; linear for `x > 30`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), math::softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), math::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), math::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), math::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let cols = ta.cols() + tb.cols();
        let mut data = Vec::with_capacity(ta.rows() * cols);
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let value = Tensor::new(ta.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat_rows",
            detail: "no inputs",
        })?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `i` of the output is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= ta.rows() {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    len: ta.rows(),
                });
            }
            data.extend_from_slice(ta.row(i));
        }
        let value = Tensor::new(indices.len(), cols, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let value = self.value(a).reshaped(rows, cols)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Per-row sums as an `n × 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::new(t.rows(), 1, data).expect("positive rows");
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Per-row means as an `n × 1` column.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols() as f64;
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum::<f64>() / n).collect();
        let value = Tensor::new(t.rows(), 1, data).expect("positive rows");
        let rg = self.rg(a);
        self.push(value, Op::RowMean(a), rg)
    }

    /// Sums consecutive blocks of `group` rows: `[g·n × c] → [n × c]`.
    pub fn group_sum_rows(&mut self, a: Var, group: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        if group == 0 || t.rows() % group != 0 {
            return Err(TensorError::Invalid {
                op: "group_sum_rows",
                detail: "row count is not a multiple of the group size",
            });
        }
        let cols = t.cols();
        let out_rows = t.rows() / group;
        let mut data = vec![0.0; out_rows * cols];
        for r in 0..t.rows() {
            let dst = &mut data[(r / group) * cols..(r / group + 1) * cols];
            for (d, s) in dst.iter_mut().zip(t.row(r)) {
                *d += s;
            }
        }
        let value = Tensor::new(out_rows, cols, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::GroupSumRows(a, group), rg))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut z = 0.0;
            for &x in row {
                let e = math::exp(x - max);
                z += e;
                data.push(e);
            }
            for y in &mut data[start..start + cols] {
                *y /= z;
            }
        }
        let value = Tensor::new(t.rows(), cols, data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        self.log_softmax_rows_masked(a, None)
            .expect("unmasked log-softmax cannot fail")
    }

    /// Row-wise log-softmax over the entries where `include` is true.
    /// Excluded entries are set to 0 and receive no gradient. Every row
    /// must include at least one entry.
    pub fn log_softmax_rows_masked(
        &mut self,
        a: Var,
        include: Option<Vec<bool>>,
    ) -> Result<Var, TensorError> {
        let t = self.value(a);
        if let Some(m) = &include {
            if m.len() != t.len() {
                return Err(TensorError::Length {
                    shape: t.shape(),
                    expected: t.len(),
                    got: m.len(),
                });
            }
        }
        let cols = t.cols();
        let inc = |i: usize| include.as_ref().map_or(true, |m| m[i]);
        let mut data = vec![0.0; t.len()];
        for r in 0..t.rows() {
            let idx = r * cols..(r + 1) * cols;
            let max = idx
                .clone()
                .filter(|&i| inc(i))
                .map(|i| t.data()[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::Invalid {
                    op: "log_softmax_rows_masked",
                    detail: "row with no included entries",
                });
            }
            let z: f64 = idx
                .clone()
                .filter(|&i| inc(i))
                .map(|i| math::exp(t.data()[i] - max))
                .sum();
            let lse = max + math::ln(z);
            for i in idx.filter(|&i| inc(i)) {
                data[i] = t.data()[i] - lse;
            }
        }
        let value = Tensor::new(t.rows(), cols, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmaxRows(a, include), rg))
    }

    /// Runs the reverse pass from the scalar `loss`. The tape is consumed;
    /// a second call returns [`TensorError::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let lv = self.value(loss);
        let l = lv.item()?;
        if !l.is_finite() {
            return Err(TensorError::NonFiniteLoss(l));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.index()] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.index()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.index()] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| self.value(v);
        let elementwise = |v: Var, f: &dyn Fn(f64, f64, f64) -> f64| {
            // f(input, output, upstream)
            let x = val(v);
            let data = x
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect();
            Tensor::new(x.rows(), x.cols(), data).expect("same shape")
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(val(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, val(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul(val(*b)).expect("shapes recorded");
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.matmul_tn(val(*a)));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, zip_map(g, val(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, zip_map(g, val(*a), |x, y| x * y));
                }
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for (i, x) in g.data().iter().enumerate() {
                        gb[i % cols] += x;
                    }
                    self.accumulate(grads, *b, Tensor::new(1, cols, gb).expect("cols > 0"));
                }
            }
            Op::ScaleRows(a, s) => {
                let (ta, ts) = (val(*a), val(*s));
                let cols = ta.cols();
                if self.rg(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * ts.data()[i / cols])
                        .collect();
                    self.accumulate(grads, *a, Tensor::new(ta.rows(), cols, data).expect("shape"));
                }
                if self.rg(*s) {
                    let data = (0..ta.rows())
                        .map(|r| g.row(r).iter().zip(ta.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *s, Tensor::new(ta.rows(), 1, data).expect("shape"));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = elementwise(*a, &|x, _, gi| if x > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = elementwise(*a, &|x, _, gi| gi * math::softplus_grad(x));
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = elementwise(*a, &|_, y, gi| gi * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = elementwise(*a, &|_, y, gi| gi * y);
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = elementwise(*a, &|x, _, gi| gi / x);
                self.accumulate(grads, *a, d);
            }
            Op::Sqrt(a) => {
                let d = elementwise(*a, &|_, y, gi| gi / (2.0 * y));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = elementwise(*a, &|x, _, gi| 2.0 * x * gi);
                self.accumulate(grads, *a, d);
            }
            Op::Recip(a) => {
                let d = elementwise(*a, &|_, y, gi| -gi * y * y);
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = elementwise(*a, &|x, _, gi| if x >= lo && x <= hi { gi } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, Tensor::new(rows, ca, ga).expect("shape"));
                self.accumulate(grads, *b, Tensor::new(rows, cb, gb).expect("shape"));
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    if self.rg(p) {
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        self.accumulate(grads, p, Tensor::new(rows, cols, slice).expect("shape"));
                    }
                    offset += rows;
                }
            }
            Op::GatherRows(a, indices) => {
                let ta = val(*a);
                let cols = ta.cols();
                let mut ga = Tensor::zeros(ta.rows(), cols);
                for (out_row, &src) in indices.iter().enumerate() {
                    let dst = &mut ga.data_mut()[src * cols..(src + 1) * cols];
                    for (d, x) in dst.iter_mut().zip(g.row(out_row)) {
                        *d += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let [r, c] = val(*a).shape();
                self.accumulate(grads, *a, g.reshaped(r, c).expect("same length"));
            }
            Op::Sum(a) => {
                let [r, c] = val(*a).shape();
                self.accumulate(grads, *a, Tensor::full(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let [r, c] = t.shape();
                self.accumulate(grads, *a, Tensor::full(r, c, g.data()[0] / t.len() as f64));
            }
            Op::RowSum(a) | Op::RowMean(a) => {
                let [r, c] = val(*a).shape();
                let k = if matches!(op, Op::RowMean(_)) {
                    1.0 / c as f64
                } else {
                    1.0
                };
                let data = (0..r * c).map(|i| g.data()[i / c] * k).collect();
                self.accumulate(grads, *a, Tensor::new(r, c, data).expect("shape"));
            }
            Op::GroupSumRows(a, group) => {
                let [r, c] = val(*a).shape();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    data.extend_from_slice(g.row(row / group));
                }
                self.accumulate(grads, *a, Tensor::new(r, c, data).expect("shape"));
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                let mut data = Vec::with_capacity(out.len());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(y.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                self.accumulate(grads, *a, Tensor::new(out.rows(), cols, data).expect("shape"));
            }
            Op::LogSoftmaxRows(a, include) => {
                let cols = out.cols();
                let inc = |i: usize| include.as_ref().map_or(true, |m| m[i]);
                let mut data = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let idx = r * cols..(r + 1) * cols;
                    let gsum: f64 = idx.clone().filter(|&i| inc(i)).map(|i| g.data()[i]).sum();
                    for i in idx.filter(|&i| inc(i)) {
                        data[i] = g.data()[i] - math::exp(out.data()[i]) * gsum;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.rows(), cols, data).expect("shape"));
            }
        }
    }
}
