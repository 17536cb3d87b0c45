use std::sync::Arc;

use rayon::prelude::*;

use super::param::{ParamId, ParamStore};
use super::GradError;
use crate::independence;
use crate::matrix::{dot, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather {
        src: Var,
        index: Arc<[usize]>,
    },
    SegmentMean {
        src: Var,
        segment: Arc<[usize]>,
        inv_count: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    LogSoftmaxRows(Var),
    RowDot(Var, Var),
    Diag(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    SumAll(Var),
    SumSquares(Var),
    NormalizeRows {
        src: Var,
        norms: Vec<f64>,
    },
    DCor(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

/// Reverse-mode tape over the fixed primitive set of the model.
///
/// Values are recorded eagerly during the forward pass; [`Tape::backward`]
/// walks the records in reverse and adds parameter gradients into the
/// [`ParamStore`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    parallel: bool,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> GradError {
    GradError::Shape {
        op,
        left: a,
        right: b,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose backward scatter-adds run on the rayon pool. Floating-point
    /// summation order then depends on scheduling, so results are not bit-reproducible.
    pub fn with_parallel(parallel: bool) -> Self {
        Self {
            parallel,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a parameter table as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.values(id).clone(), Op::Param(id))
    }

    /// `out[k] = src[index[k]]`.
    pub fn gather(&mut self, src: Var, index: Arc<[usize]>) -> Result<Var, GradError> {
        let s = self.value(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= s.rows()) {
            return Err(GradError::Index {
                op: "gather",
                index: bad,
                len: s.rows(),
            });
        }
        let out = s.select_rows(&index);
        Ok(self.push(out, Op::Gather { src, index }))
    }

    /// `out[t] = mean of src[k] over k with segment[k] == t`; empty segments give zero rows.
    pub fn segment_mean(
        &mut self,
        src: Var,
        segment: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, GradError> {
        let s = self.value(src);
        if segment.len() != s.rows() {
            return Err(shape_err(
                "segment_mean",
                s.shape(),
                (segment.len(), s.cols()),
            ));
        }
        let mut count = vec![0usize; num_segments];
        for &t in segment.iter() {
            if t >= num_segments {
                return Err(GradError::Index {
                    op: "segment_mean",
                    index: t,
                    len: num_segments,
                });
            }
            count[t] += 1;
        }
        let mut out = Matrix::zeros(num_segments, s.cols());
        for (k, &t) in segment.iter().enumerate() {
            for (o, x) in out.row_mut(t).iter_mut().zip(s.row(k)) {
                *o += x;
            }
        }
        let inv_count: Vec<f64> = count
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();
        for (t, &ic) in inv_count.iter().enumerate() {
            out.row_mut(t).iter_mut().for_each(|v| *v *= ic);
        }
        Ok(self.push(
            out,
            Op::SegmentMean {
                src,
                segment,
                inv_count,
            },
        ))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op_name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Matrix::from_vec(x.rows(), x.cols(), data);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    /// `a (n x k) * b (k x m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", x.shape(), y.shape()));
        }
        let out = matmul(x, y);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a (n x k) * b^T` with `b` of shape `(m x k)`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("matmul_nt", x.shape(), y.shape()));
        }
        let out = matmul_nt(x, y);
        Ok(self.push(out, Op::MatMulNT(a, b)))
    }

    /// `a^T * b` with `a` of shape `(k x n)` and `b` of shape `(k x m)`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(shape_err("matmul_tn", x.shape(), y.shape()));
        }
        let out = matmul_tn(x, y);
        Ok(self.push(out, Op::MatMulTN(a, b)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let out = {
            let t = self.value(a).transpose();
            let mut t = t;
            for r in 0..t.rows() {
                softmax_in_place(t.row_mut(r));
            }
            t.transpose()
        };
        self.push(out, Op::SoftmaxCols(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Per-row dot product, shape `(n x 1)`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("row_dot", x.shape(), y.shape()));
        }
        let data = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
        let out = Matrix::from_vec(x.rows(), 1, data);
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    /// Diagonal of a square matrix as a column.
    pub fn diag(&mut self, a: Var) -> Result<Var, GradError> {
        let x = self.value(a);
        if x.rows() != x.cols() {
            return Err(shape_err("diag", x.shape(), x.shape()));
        }
        let data = (0..x.rows()).map(|i| x.get(i, i)).collect();
        let out = Matrix::from_vec(x.rows(), 1, data);
        Ok(self.push(out, Op::Diag(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Matrix::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Sigmoid(a))
    }

    /// `ln sigmoid(x)`, evaluated without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| log_sigmoid(v)).collect();
        let out = Matrix::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::LogSigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(s), Op::SumAll(a))
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        self.push(Matrix::scalar(s), Op::SumSquares(a))
    }

    /// Scales each row to unit L2 norm. Fails on a zero row.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, GradError> {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let n = dot(x.row(r), x.row(r)).sqrt();
            if n == 0.0 {
                return Err(GradError::ZeroNorm { row: r });
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(self.push(out, Op::NormalizeRows { src: a, norms }))
    }

    /// Distance correlation between two `(1 x d)` rows, treating the `d`
    /// coordinates as observations. Degenerate inputs give 0 and no gradient.
    pub fn dcor(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != 1 || x.shape() != y.shape() {
            return Err(shape_err("dcor", x.shape(), y.shape()));
        }
        let v = independence::dcor(x.data(), y.data()).value;
        Ok(self.push(Matrix::scalar(v), Op::DCor(a, b)))
    }

    /// Propagates `seed` (the gradient of the final objective w.r.t. `out`)
    /// back through every record. Parameter gradients are added into `store`.
    pub fn backward(
        &mut self,
        out: Var,
        seed: Matrix,
        store: &mut ParamStore,
    ) -> Result<Gradients, GradError> {
        if self.consumed {
            return Err(GradError::TapeConsumed);
        }
        if seed.shape() != self.value(out).shape() {
            return Err(shape_err("backward seed", seed.shape(), self.value(out).shape()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads, store);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
        store: &mut ParamStore,
    ) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::Gather { src, index } => {
                let (rows, cols) = val(*src).shape();
                acc(*src, scatter_add(g, index, rows, cols, self.parallel));
            }
            Op::SegmentMean {
                src,
                segment,
                inv_count,
            } => {
                let mut d = Matrix::zeros(segment.len(), g.cols());
                for (k, &t) in segment.iter().enumerate() {
                    let ic = inv_count[t];
                    for (o, gv) in d.row_mut(k).iter_mut().zip(g.row(t)) {
                        *o = gv * ic;
                    }
                }
                acc(*src, d);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, hadamard(g, val(*b)));
                acc(*b, hadamard(g, val(*a)));
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::MatMul(a, b) => {
                acc(*a, matmul_nt(g, val(*b)));
                acc(*b, matmul_tn(val(*a), g));
            }
            Op::MatMulNT(a, b) => {
                acc(*a, matmul(g, val(*b)));
                acc(*b, matmul_tn(g, val(*a)));
            }
            Op::MatMulTN(a, b) => {
                acc(*a, matmul_nt(val(*b), g));
                acc(*b, matmul(val(*a), g));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s = dot(g.row(r), y.row(r));
                    for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - s);
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxCols(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for c in 0..y.cols() {
                    let s: f64 = (0..y.rows()).map(|r| g.get(r, c) * y.get(r, c)).sum();
                    for r in 0..y.rows() {
                        d.set(r, c, y.get(r, c) * (g.get(r, c) - s));
                    }
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s: f64 = g.row(r).iter().sum();
                    for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = gv - yv.exp() * s;
                    }
                }
                acc(*a, d);
            }
            Op::RowDot(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut da = Matrix::zeros(x.rows(), x.cols());
                let mut db = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gr = g.get(r, 0);
                    for c in 0..x.cols() {
                        da.set(r, c, gr * y.get(r, c));
                        db.set(r, c, gr * x.get(r, c));
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Diag(a) => {
                let n = g.rows();
                let mut d = Matrix::zeros(n, n);
                for i in 0..n {
                    d.set(i, i, g.get(i, 0));
                }
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                acc(*a, Matrix::from_vec(y.rows(), y.cols(), data));
            }
            Op::LogSigmoid(a) => {
                let x = val(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, &xv)| gv * sigmoid(-xv))
                    .collect();
                acc(*a, Matrix::from_vec(x.rows(), x.cols(), data));
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::SumSquares(a) => acc(*a, val(*a).scale(2.0 * g.item())),
            Op::NormalizeRows { src, norms } => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let proj = dot(y.row(r), g.row(r));
                    for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = (gv - yv * proj) / norms[r];
                    }
                }
                acc(*src, d);
            }
            Op::DCor(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (gx, gy) = independence::dcor_gradient(x.data(), y.data());
                let s = g.item();
                acc(*a, Matrix::from_vec(1, gx.len(), gx.iter().map(|v| v * s).collect()));
                acc(*b, Matrix::from_vec(1, gy.len(), gy.iter().map(|v| v * s).collect()));
            }
        }
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn scatter_add(g: &Matrix, index: &[usize], rows: usize, cols: usize, parallel: bool) -> Matrix {
    const PAR_MIN_ROWS: usize = 4096;
    if parallel && index.len() >= PAR_MIN_ROWS {
        let data = index
            .par_iter()
            .enumerate()
            .fold(
                || vec![0.0; rows * cols],
                |mut buf, (k, &i)| {
                    for (o, v) in buf[i * cols..(i + 1) * cols].iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                    buf
                },
            )
            .reduce(
                || vec![0.0; rows * cols],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        return Matrix::from_vec(rows, cols, data);
    }
    let mut out = Matrix::zeros(rows, cols);
    for (k, &i) in index.iter().enumerate() {
        for (o, v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
            *o += v;
        }
    }
    out
}

pub(crate) fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, dot(a.row(i), b.row(j)));
        }
    }
    out
}

pub(crate) fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let (k, n, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out.row_mut(i).iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in xs.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    xs.iter_mut().for_each(|v| *v /= total);
}
