use std::sync::Arc;

use super::tensor::gemm;
use super::{AutodiffError, Tensor};
use crate::graph::SparseMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Softplus(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    Sum(Var),
    Mean(Var),
    Reparam { mu: Var, sigma: Var, noise: Tensor },
    MeanSquaredError { input: Var, target: Tensor },
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
    Transpose(Var),
    Diag(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager record of primitive applications for reverse-mode differentiation.
///
/// Every op evaluates immediately and appends a node; inputs always precede
/// outputs, so the node order is a valid topological order. Ops return an
/// error instead of recording a non-finite value.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a plain tensor, stabilized by max subtraction.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for i in 0..t.rows() {
        let lse = row_log_sum_exp(t.row(i));
        for v in out.row_mut(i) {
            *v = (*v - lse).exp();
        }
    }
    out
}

/// Row-wise log-sum-exp of a plain tensor as an `n x 1` column.
pub fn log_sum_exp_rows(t: &Tensor) -> Tensor {
    Tensor::column(t.iter_rows().map(row_log_sum_exp).collect())
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

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Copy of `var`'s value as a constant, cutting the gradient path.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let requires_grad = self
            .inputs(&op)
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::SpMM(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::LogSumExpRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SelectRows(a, _)
            | Op::PickCols(a, _)
            | Op::Transpose(a)
            | Op::Diag(a) => vec![*a],
            Op::Reparam { mu, sigma, .. } => vec![*mu, *sigma],
            Op::MeanSquaredError { input, .. } => vec![*input],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    /// Sparse (constant) times dense.
    pub fn spmm(&mut self, sparse: &Arc<SparseMatrix>, b: Var) -> Result<Var, AutodiffError> {
        let value = sparse.mul_dense(self.value(b))?;
        self.push("spmm", value, Op::SpMM(Arc::clone(sparse), b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", value, Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of an `n x c` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: av.shape(),
                right: rv.shape(),
            });
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(rv.data()) {
                *v += b;
            }
        }
        self.push("add_row", value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x * factor);
        self.push("scale", value, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x + c);
        self.push("add_scalar", value, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(f64::exp);
        self.push("exp", value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(AutodiffError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = self.value(a).map(f64::ln);
        self.push("log", value, Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push("relu", value, Op::Relu(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(softplus);
        self.push("softplus", value, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x * x);
        self.push("square", value, Op::Square(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = softmax_rows(self.value(a));
        self.push("softmax_rows", value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let lse = log_sum_exp_rows(av);
        let mut value = av.clone();
        for i in 0..value.rows() {
            let l = lse.get(i, 0);
            for v in value.row_mut(i) {
                *v -= l;
            }
        }
        self.push("log_softmax_rows", value, Op::LogSoftmaxRows(a))
    }

    /// Row-wise log-sum-exp as an `n x 1` column.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if self.value(a).cols() == 0 {
            return Err(AutodiffError::Empty {
                op: "log_sum_exp_rows",
            });
        }
        let value = log_sum_exp_rows(self.value(a));
        self.push("log_sum_exp_rows", value, Op::LogSumExpRows(a))
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a))
    }

    /// Mean of all entries as a `1 x 1` tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if self.value(a).is_empty() {
            return Err(AutodiffError::Empty { op: "mean" });
        }
        let value = Tensor::scalar(self.value(a).mean());
        self.push("mean", value, Op::Mean(a))
    }

    /// `mu + sigma * noise` with `noise` held constant.
    pub fn reparameterize(
        &mut self,
        mu: Var,
        sigma: Var,
        noise: Tensor,
    ) -> Result<Var, AutodiffError> {
        same_shape("reparameterize", self.value(mu), self.value(sigma))?;
        same_shape("reparameterize", self.value(mu), &noise)?;
        let scaled = self.value(sigma).zip_map(&noise, |s, e| s * e);
        let value = self.value(mu).zip_map(&scaled, |m, s| m + s);
        self.push("reparameterize", value, Op::Reparam { mu, sigma, noise })
    }

    /// Mean of squared differences against a constant target.
    pub fn mean_squared_error(&mut self, input: Var, target: Tensor) -> Result<Var, AutodiffError> {
        same_shape("mean_squared_error", self.value(input), &target)?;
        if target.is_empty() {
            return Err(AutodiffError::Empty {
                op: "mean_squared_error",
            });
        }
        let sq = self.value(input).zip_map(&target, |a, t| (a - t) * (a - t));
        let value = Tensor::scalar(sq.mean());
        self.push(
            "mean_squared_error",
            value,
            Op::MeanSquaredError { input, target },
        )
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(first) = parts.first() else {
            return Err(AutodiffError::Empty { op: "concat_cols" });
        };
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape(),
                    right: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let rows = self.value(a).rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "select_rows",
                index: bad,
                len: rows,
            });
        }
        let value = self.value(a).select_rows(index);
        self.push("select_rows", value, Op::SelectRows(a, index.to_vec()))
    }

    /// Entry `cols[i]` of each row `i`, as an `n x 1` column.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if cols.len() != av.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "pick_cols",
                left: av.shape(),
                right: (cols.len(), 1),
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= av.cols()) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick_cols",
                index: bad,
                len: av.cols(),
            });
        }
        let value = Tensor::column(
            cols.iter()
                .enumerate()
                .map(|(i, &c)| av.get(i, c))
                .collect(),
        );
        self.push("pick_cols", value, Op::PickCols(a, cols.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a))
    }

    /// Diagonal of a square tensor as an `n x 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "diag",
                left: av.shape(),
                right: (av.cols(), av.rows()),
            });
        }
        let value = Tensor::column((0..av.rows()).map(|i| av.get(i, i)).collect());
        self.push("diag", value, Op::Diag(a))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Each recorded op is visited once, in reverse recording order, and
    /// only paths that reach a trainable leaf are propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contribution: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot => *slot = Some(contribution),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, gemm(g, false, self.value(*b), true));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gemm(self.value(*a), true, g, false));
                }
            }
            Op::SpMM(sparse, b) => {
                if self.wants(*b) {
                    let gb = sparse
                        .transpose_mul_dense(g)
                        .expect("spmm backward shapes match forward");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in g.iter_rows() {
                        for (acc, v) in gr.data_mut().iter_mut().zip(r) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accumulate(grads, *a, g.map(|v| v * f));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| x * y)),
            Op::Log(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Relu(a) => self.accumulate(
                grads,
                *a,
                g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
            ),
            Op::Softplus(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| x * sigmoid(y)))
            }
            Op::Square(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y))
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (s, gi) = (out.row(i), g.row(i));
                    let dot: f64 = s.iter().zip(gi).map(|(p, q)| p * q).sum();
                    for ((dst, p), q) in ga.row_mut(i).iter_mut().zip(s).zip(gi) {
                        *dst = p * (q - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let gi = g.row(i);
                    let total: f64 = gi.iter().sum();
                    for ((dst, ls), q) in ga.row_mut(i).iter_mut().zip(out.row(i)).zip(gi) {
                        *dst = q - ls.exp() * total;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSumExpRows(a) => {
                let mut ga = softmax_rows(self.value(*a));
                for i in 0..ga.rows() {
                    let gi = g.get(i, 0);
                    for v in ga.row_mut(i) {
                        *v *= gi;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::Reparam { mu, sigma, noise } => {
                self.accumulate(grads, *mu, g.clone());
                if self.wants(*sigma) {
                    self.accumulate(grads, *sigma, g.zip_map(noise, |x, e| x * e));
                }
            }
            Op::MeanSquaredError { input, target } => {
                let scale = 2.0 * g.item() / target.len() as f64;
                let gi = self.value(*input).zip_map(target, |a, t| scale * (a - t));
                self.accumulate(grads, *input, gi);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if self.wants(p) {
                        let mut gp = Tensor::zeros(g.rows(), width);
                        for i in 0..g.rows() {
                            gp.row_mut(i)
                                .copy_from_slice(&g.row(i)[offset..offset + width]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += width;
                }
            }
            Op::SelectRows(a, index) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in index.iter().enumerate() {
                    for (dst, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *dst += v;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::PickCols(a, cols) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (i, &j) in cols.iter().enumerate() {
                    ga.set(i, j, g.get(i, 0));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Diag(a) => {
                let n = g.rows();
                let mut ga = Tensor::zeros(n, n);
                for i in 0..n {
                    ga.set(i, i, g.get(i, 0));
                }
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> Tensor {
        Tensor::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(row(&[-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn log_sum_exp_of_zero_row() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 7));
        let y = tape.log_sum_exp_rows(x).unwrap();
        assert!((tape.value(y).item() - 7f64.ln()).abs() < 1e-15);
        assert!((tape.value(y).item() - 1.945910).abs() < 1e-6);
    }

    #[test]
    fn softmax_row_sums_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(row(&[1.0, 2.0, 3.0]));
        let y = tape.softmax_rows(x).unwrap();
        let s = tape.value(y);
        let e = std::f64::consts::E;
        let expected_mid = e.powi(2) / (e + e.powi(2) + e.powi(3));
        assert!((s.sum() - 1.0).abs() < 1e-15);
        assert!((s.get(0, 1) - expected_mid).abs() < 1e-15);
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn unrelated_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let w = tape.leaf(Tensor::scalar(-2.0));
        let loss = tape.square(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get_or_zeros(w, (1, 1)).item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 1));
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NotScalar((2, 1)))
        ));
    }

    #[test]
    fn log_domain_and_exp_overflow_are_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(AutodiffError::Domain { .. })));
        let big = tape.leaf(row(&[1000.0]));
        assert!(matches!(
            tape.exp(big),
            Err(AutodiffError::NonFinite { .. })
        ));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(3, 2)"), "{msg}");
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[-800.0, 0.0, 800.0]));
        let y = tape.softplus(x).unwrap();
        let v = tape.value(y);
        assert_eq!(v.get(0, 2), 800.0);
        assert!((v.get(0, 1) - 2f64.ln()).abs() < 1e-15);
        assert!(v.get(0, 0) >= 0.0 && v.get(0, 0) < 1e-300);
    }
}
