//! Minimal reverse-mode differentiation over small dense `f64` matrices.
//!
//! A [`Tape`] records every primitive applied to its variables; calling
//! [`Tape::backward`] on a scalar result walks the recording in reverse and
//! accumulates gradients into every variable that requires them. One tape is
//! confined to one evaluation; distinct tapes can run on distinct threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{op}: expected a column vector, got {shape:?}")]
    NotAVector { op: &'static str, shape: (usize, usize) },
    #[error("softmax temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("backward requires a scalar, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowOutOfRange { op: &'static str, index: usize, rows: usize },
    #[error("concat_rows requires at least one input")]
    EmptyConcat,
}

/// Dense row-major matrix of `f64`. Column vectors are `(n, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Tensor { rows, cols, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { rows: n, cols: 1, data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn as_scalar(&self) -> f64 {
        assert!(self.is_scalar(), "tensor is {:?}, not scalar", self.shape());
        self.data[0]
    }

    /// `self += c * other` (shapes must match).
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn transpose_values(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul_values(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows);
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { rows, cols, data }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Softmax with temperature over a score slice: `exp(s_i/beta) / sum_j
/// exp(s_j/beta)`, computed with max-subtraction. Identical to dividing the
/// scores by `beta` first and applying the unit-temperature softmax.
pub fn softmax_beta_values(scores: &[f64], beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|&s| s / beta).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&t| (t - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

enum Op {
    Leaf,
    Add(VarId, VarId),
    MatMul(VarId, VarId),
    Scale(VarId, f64),
    ScaleVar(VarId, VarId),
    Hadamard(VarId, VarId),
    RowSum(VarId),
    RowMean(VarId),
    RowMax(VarId, Vec<usize>),
    Dot(VarId, VarId),
    Sigmoid(VarId),
    Relu(VarId),
    LeakyRelu(VarId, f64),
    SoftmaxBeta(VarId, f64),
    Log1pExp(VarId),
    Transpose(VarId),
    GatherRows(VarId, Vec<usize>),
    ConcatRows(Vec<VarId>),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
    op: Op,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> VarId {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(value, false, Op::Leaf)
    }

    /// Leaf that accumulates a gradient during [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> VarId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a variable; `None` if backward never reached
    /// it (treat as zero).
    pub fn grad(&self, id: VarId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn grad_or_zeros(&self, id: VarId) -> Tensor {
        let shape = self.nodes[id.0].value.shape();
        self.nodes[id.0].grad.clone().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(AutodiffError::ShapeMismatch { op: "add", lhs: va.shape(), rhs: vb.shape() });
        }
        let mut out = va.clone();
        out.add_scaled(vb, 1.0);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Add(a, b)))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let out = va.matmul_values(vb);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::MatMul(a, b)))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let mut out = self.value(a).clone();
        out.scale_in_place(c);
        let needs = self.needs(a);
        self.push(out, needs, Op::Scale(a, c))
    }

    /// Scalar-variable times tensor (the only broadcast form supported).
    pub fn scale_var(&mut self, a: VarId, s: VarId) -> Result<VarId, AutodiffError> {
        let vs = self.value(s);
        if !vs.is_scalar() {
            return Err(AutodiffError::NotAVector { op: "scale_var", shape: vs.shape() });
        }
        let c = vs.as_scalar();
        let mut out = self.value(a).clone();
        out.scale_in_place(c);
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(out, needs, Op::ScaleVar(a, s)))
    }

    pub fn hadamard(&mut self, a: VarId, b: VarId) -> Result<VarId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "hadamard",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let mut out = va.clone();
        for (x, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *x *= y;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Hadamard(a, b)))
    }

    /// Sums the rows of an `(n, d)` matrix into a `(d, 1)` vector.
    pub fn row_sum(&mut self, a: VarId) -> VarId {
        let v = self.value(a);
        let (n, d) = v.shape();
        let mut out = Tensor::zeros(d, 1);
        for i in 0..n {
            for j in 0..d {
                out.data[j] += v.get(i, j);
            }
        }
        let needs = self.needs(a);
        self.push(out, needs, Op::RowSum(a))
    }

    /// Averages the rows of an `(n, d)` matrix into a `(d, 1)` vector.
    /// Accumulated as a sum of `value * (1/n)` terms so that it agrees
    /// bitwise with uniform-weight attention pooling.
    pub fn row_mean(&mut self, a: VarId) -> VarId {
        let v = self.value(a);
        let (n, d) = v.shape();
        let inv_n = 1.0 / n as f64;
        let mut out = Tensor::zeros(d, 1);
        for i in 0..n {
            for j in 0..d {
                out.data[j] += inv_n * v.get(i, j);
            }
        }
        let needs = self.needs(a);
        self.push(out, needs, Op::RowMean(a))
    }

    /// Coordinate-wise max over the rows of an `(n, d)` matrix, producing a
    /// `(d, 1)` vector. On ties the first (lowest-index) row wins and
    /// receives the whole gradient.
    pub fn row_max(&mut self, a: VarId) -> VarId {
        let v = self.value(a);
        let (n, d) = v.shape();
        let mut out = Tensor::zeros(d, 1);
        let mut argmax = vec![0usize; d];
        for j in 0..d {
            let mut best = v.get(0, j);
            let mut best_i = 0usize;
            for i in 1..n {
                let x = v.get(i, j);
                if x > best {
                    best = x;
                    best_i = i;
                }
            }
            out.data[j] = best;
            argmax[j] = best_i;
        }
        let needs = self.needs(a);
        self.push(out, needs, Op::RowMax(a, argmax))
    }

    pub fn dot(&mut self, u: VarId, v: VarId) -> Result<VarId, AutodiffError> {
        let (vu, vv) = (self.value(u), self.value(v));
        if vu.cols() != 1 {
            return Err(AutodiffError::NotAVector { op: "dot", shape: vu.shape() });
        }
        if vu.shape() != vv.shape() {
            return Err(AutodiffError::ShapeMismatch { op: "dot", lhs: vu.shape(), rhs: vv.shape() });
        }
        let s: f64 = vu.data().iter().zip(vv.data()).map(|(a, b)| a * b).sum();
        let needs = self.needs(u) || self.needs(v);
        Ok(self.push(Tensor::scalar(s), needs, Op::Dot(u, v)))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let mut out = self.value(a).clone();
        for x in out.data_mut() {
            *x = sigmoid(*x);
        }
        let needs = self.needs(a);
        self.push(out, needs, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let mut out = self.value(a).clone();
        for x in out.data_mut() {
            *x = x.max(0.0);
        }
        let needs = self.needs(a);
        self.push(out, needs, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: VarId, slope: f64) -> VarId {
        let mut out = self.value(a).clone();
        for x in out.data_mut() {
            if *x < 0.0 {
                *x *= slope;
            }
        }
        let needs = self.needs(a);
        self.push(out, needs, Op::LeakyRelu(a, slope))
    }

    /// Temperature softmax over an `(n, 1)` score vector.
    pub fn softmax_beta(&mut self, a: VarId, beta: f64) -> Result<VarId, AutodiffError> {
        if !(beta > 0.0) {
            return Err(AutodiffError::BadTemperature(beta));
        }
        let v = self.value(a);
        if v.cols() != 1 {
            return Err(AutodiffError::NotAVector { op: "softmax_beta", shape: v.shape() });
        }
        let out = Tensor::vector(softmax_beta_values(v.data(), beta));
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::SoftmaxBeta(a, beta)))
    }

    pub fn log1p_exp(&mut self, a: VarId) -> VarId {
        let mut out = self.value(a).clone();
        for x in out.data_mut() {
            *x = log1p_exp(*x);
        }
        let needs = self.needs(a);
        self.push(out, needs, Op::Log1pExp(a))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let out = self.value(a).transpose_values();
        let needs = self.needs(a);
        self.push(out, needs, Op::Transpose(a))
    }

    /// Selects rows `indices` of a matrix, in order (rows may repeat).
    pub fn gather_rows(&mut self, a: VarId, indices: Vec<usize>) -> Result<VarId, AutodiffError> {
        let v = self.value(a);
        let d = v.cols();
        let mut out = Tensor::zeros(indices.len(), d);
        for (r, &i) in indices.iter().enumerate() {
            if i >= v.rows() {
                return Err(AutodiffError::RowOutOfRange {
                    op: "gather_rows",
                    index: i,
                    rows: v.rows(),
                });
            }
            for j in 0..d {
                out.set(r, j, v.get(i, j));
            }
        }
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::GatherRows(a, indices)))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::EmptyConcat);
        }
        let d = self.value(parts[0]).cols();
        let mut rows = 0usize;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != d {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: (rows, d),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * d);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_vec(rows, d, data), needs, Op::ConcatRows(parts.to_vec())))
    }

    /// Reverse pass from a scalar variable. Gradients accumulate additively:
    /// a second backward without [`Tape::reset_grads`] adds the same
    /// contribution again. Each call propagates through a private buffer, so
    /// earlier calls never leak into the traversal.
    pub fn backward(&mut self, loss: VarId) -> Result<(), AutodiffError> {
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.value(loss).shape()));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].needs_grad {
            local[loss.0] = Some(Tensor::scalar(1.0));
        }
        macro_rules! accumulate {
            ($id:expr, $delta:expr) => {{
                let id: VarId = $id;
                if self.nodes[id.0].needs_grad {
                    let delta: &Tensor = $delta;
                    match &mut local[id.0] {
                        Some(g) => g.add_scaled(delta, 1.0),
                        slot @ None => *slot = Some(delta.clone()),
                    }
                }
            }};
        }
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(upstream) = local[idx].clone() else { continue };
            // Ops store only VarIds and small aux vectors, so a targeted
            // clone of the op tag keeps the borrow checker happy.
            match &self.nodes[idx].op {
                Op::Leaf => {}
                &Op::Add(a, b) => {
                    accumulate!(a, &upstream);
                    accumulate!(b, &upstream);
                }
                &Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let bt = self.value(b).transpose_values();
                        let da = upstream.matmul_values(&bt);
                        accumulate!(a, &da);
                    }
                    if self.needs(b) {
                        let at = self.value(a).transpose_values();
                        let db = at.matmul_values(&upstream);
                        accumulate!(b, &db);
                    }
                }
                &Op::Scale(a, c) => {
                    let mut da = upstream.clone();
                    da.scale_in_place(c);
                    accumulate!(a, &da);
                }
                &Op::ScaleVar(a, s) => {
                    if self.needs(a) {
                        let mut da = upstream.clone();
                        da.scale_in_place(self.value(s).as_scalar());
                        accumulate!(a, &da);
                    }
                    if self.needs(s) {
                        let ds: f64 = upstream
                            .data()
                            .iter()
                            .zip(self.value(a).data())
                            .map(|(g, x)| g * x)
                            .sum();
                        accumulate!(s, &Tensor::scalar(ds));
                    }
                }
                &Op::Hadamard(a, b) => {
                    if self.needs(a) {
                        let mut da = upstream.clone();
                        for (x, y) in da.data_mut().iter_mut().zip(self.value(b).data()) {
                            *x *= y;
                        }
                        accumulate!(a, &da);
                    }
                    if self.needs(b) {
                        let mut db = upstream.clone();
                        for (x, y) in db.data_mut().iter_mut().zip(self.value(a).data()) {
                            *x *= y;
                        }
                        accumulate!(b, &db);
                    }
                }
                &Op::RowSum(a) => {
                    let (n, d) = self.value(a).shape();
                    let mut da = Tensor::zeros(n, d);
                    for i in 0..n {
                        for j in 0..d {
                            da.set(i, j, upstream.data()[j]);
                        }
                    }
                    accumulate!(a, &da);
                }
                &Op::RowMean(a) => {
                    let (n, d) = self.value(a).shape();
                    let inv_n = 1.0 / n as f64;
                    let mut da = Tensor::zeros(n, d);
                    for i in 0..n {
                        for j in 0..d {
                            da.set(i, j, inv_n * upstream.data()[j]);
                        }
                    }
                    accumulate!(a, &da);
                }
                Op::RowMax(a, argmax) => {
                    let a = *a;
                    let argmax = argmax.clone();
                    let (n, d) = self.value(a).shape();
                    let mut da = Tensor::zeros(n, d);
                    for j in 0..d {
                        da.set(argmax[j], j, upstream.data()[j]);
                    }
                    accumulate!(a, &da);
                }
                &Op::Dot(u, v) => {
                    let s = upstream.as_scalar();
                    if self.needs(u) {
                        let mut du = self.value(v).clone();
                        du.scale_in_place(s);
                        accumulate!(u, &du);
                    }
                    if self.needs(v) {
                        let mut dv = self.value(u).clone();
                        dv.scale_in_place(s);
                        accumulate!(v, &dv);
                    }
                }
                &Op::Sigmoid(a) => {
                    let y = self.nodes[idx].value.clone();
                    let mut da = upstream.clone();
                    for (g, &yi) in da.data_mut().iter_mut().zip(y.data()) {
                        *g *= yi * (1.0 - yi);
                    }
                    accumulate!(a, &da);
                }
                &Op::Relu(a) => {
                    let x = self.value(a).clone();
                    let mut da = upstream.clone();
                    for (g, &xi) in da.data_mut().iter_mut().zip(x.data()) {
                        if xi <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate!(a, &da);
                }
                &Op::LeakyRelu(a, slope) => {
                    let x = self.value(a).clone();
                    let mut da = upstream.clone();
                    for (g, &xi) in da.data_mut().iter_mut().zip(x.data()) {
                        if xi < 0.0 {
                            *g *= slope;
                        }
                    }
                    accumulate!(a, &da);
                }
                &Op::SoftmaxBeta(a, beta) => {
                    let y = self.nodes[idx].value.clone();
                    let gy = &upstream;
                    let inner: f64 = gy.data().iter().zip(y.data()).map(|(g, p)| g * p).sum();
                    let mut da = Tensor::zeros(y.rows(), 1);
                    for i in 0..y.rows() {
                        da.data_mut()[i] = y.data()[i] * (gy.data()[i] - inner) / beta;
                    }
                    accumulate!(a, &da);
                }
                &Op::Log1pExp(a) => {
                    let x = self.value(a).clone();
                    let mut da = upstream.clone();
                    for (g, &xi) in da.data_mut().iter_mut().zip(x.data()) {
                        *g *= sigmoid(xi);
                    }
                    accumulate!(a, &da);
                }
                &Op::Transpose(a) => {
                    let da = upstream.transpose_values();
                    accumulate!(a, &da);
                }
                Op::GatherRows(a, indices) => {
                    let a = *a;
                    let indices = indices.clone();
                    let (n, d) = self.value(a).shape();
                    let mut da = Tensor::zeros(n, d);
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            let cur = da.get(i, j);
                            da.set(i, j, cur + upstream.get(r, j));
                        }
                    }
                    accumulate!(a, &da);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0usize;
                    for p in parts {
                        let (r, d) = self.value(p).shape();
                        if self.needs(p) {
                            let mut dp = Tensor::zeros(r, d);
                            for i in 0..r {
                                for j in 0..d {
                                    dp.set(i, j, upstream.get(offset + i, j));
                                }
                            }
                            accumulate!(p, &dp);
                        }
                        offset += r;
                    }
                }
            }
        }
        for (idx, delta) in local.into_iter().enumerate() {
            if let Some(delta) = delta {
                match &mut self.nodes[idx].grad {
                    Some(g) => g.add_scaled(&delta, 1.0),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }
}

/// Central-difference gradients `(f(p + h e) - f(p - h e)) / 2h`, one tensor
/// per parameter, for any deterministic scalar function of the parameters.
pub fn finite_diff_grad(
    f: &dyn Fn(&[Tensor]) -> f64,
    params: &[Tensor],
    h: f64,
) -> Vec<Tensor> {
    assert!(h > 0.0, "step must be positive");
    let mut grads = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let mut g = Tensor::zeros(p.rows(), p.cols());
        for idx in 0..p.len() {
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + h;
            let up = f(&work);
            work[pi].data_mut()[idx] = orig - h;
            let down = f(&work);
            work[pi].data_mut()[idx] = orig;
            g.data_mut()[idx] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_uniform_on_equal_scores() {
        let w = softmax_beta_values(&[0.0, 0.0, 0.0], 1.0);
        for x in w {
            assert_eq!(x, 1.0 / 3.0);
        }
    }

    #[test]
    fn softmax_high_temperature_flattens() {
        let w = softmax_beta_values(&[1.0, 2.0, 3.0], 1e6);
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn softmax_low_temperature_sharpens() {
        let w = softmax_beta_values(&[1.0, 2.0, 3.0], 1e-2);
        assert!(w[2] > 0.999);
    }

    #[test]
    fn softmax_beta_rejects_nonpositive_temperature() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(tape.softmax_beta(s, 0.0), Err(AutodiffError::BadTemperature(_))));
        assert!(matches!(tape.softmax_beta(s, -1.0), Err(AutodiffError::BadTemperature(_))));
    }

    #[test]
    fn softmax_beta_equals_prescaled_unit_softmax() {
        let scores = [0.3, -1.7, 2.9, 0.0];
        let beta = 4.0;
        let a = softmax_beta_values(&scores, beta);
        let scaled: Vec<f64> = scores.iter().map(|s| s / beta).collect();
        let b = softmax_beta_values(&scaled, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn log1p_exp_at_zero_is_ln2() {
        assert!((log1p_exp(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // Stable on both branches.
        assert!((log1p_exp(50.0) - 50.0).abs() < 1e-12);
        assert!(log1p_exp(-50.0) > 0.0);
    }

    #[test]
    fn backward_of_linear_map_is_the_vector() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let v = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let loss = tape.dot(w, v).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn backward_of_sigmoid_dot_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![0.0, 0.0]));
        let v = tape.constant(Tensor::vector(vec![2.0, -4.0]));
        let z = tape.dot(w, v).unwrap();
        let p = tape.sigmoid(z);
        tape.backward(p).unwrap();
        let g = tape.grad(w).unwrap();
        assert!((g.data()[0] - 0.25 * 2.0).abs() < 1e-15);
        assert!((g.data()[1] - 0.25 * -4.0).abs() < 1e-15);
    }

    #[test]
    fn backward_accumulates_across_uses_and_calls() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.hadamard(x, x).unwrap(); // x^2
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().as_scalar(), 6.0);
        tape.backward(y).unwrap(); // accumulates without reset
        assert_eq!(tape.grad(x).unwrap().as_scalar(), 12.0);
        tape.reset_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(3, 3));
        assert!(matches!(tape.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(tape.matmul(b, a), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn finite_diff_square() {
        let f = |p: &[Tensor]| p[0].as_scalar() * p[0].as_scalar();
        let g = finite_diff_grad(&f, &[Tensor::scalar(3.0)], 1e-5);
        assert!((g[0].as_scalar() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let f = |_: &[Tensor]| 42.0;
        let g = finite_diff_grad(&f, &[Tensor::vector(vec![1.0, 2.0, 3.0])], 1e-5);
        assert_eq!(g[0].data(), &[0.0, 0.0, 0.0]);
    }

    /// A small composed expression exercising most primitives:
    /// loss = log1p_exp(dot(w, softmax-pooled sigmoid reps)).
    fn composed_loss(m: &Tensor, w: &Tensor, a: &Tensor, beta: f64) -> (f64, Tensor, Tensor) {
        let mut tape = Tape::new();
        let mv = tape.constant(m.clone());
        let wv = tape.param(w.clone());
        let av = tape.param(a.clone());
        let reps = tape.sigmoid(mv);
        let scores = tape.matmul(reps, av).unwrap();
        let alpha = tape.softmax_beta(scores, beta).unwrap();
        let alpha_t = tape.transpose(alpha);
        let pooled_row = tape.matmul(alpha_t, reps).unwrap();
        let pooled = tape.transpose(pooled_row);
        let z = tape.dot(wv, pooled).unwrap();
        let loss = tape.log1p_exp(z);
        tape.backward(loss).unwrap();
        (
            tape.value(loss).as_scalar(),
            tape.grad_or_zeros(wv),
            tape.grad_or_zeros(av),
        )
    }

    #[test]
    fn composed_loss_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let m = Tensor::uniform(6, 3, -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(3, 1, -1.0, 1.0, &mut rng);
            let a = Tensor::uniform(3, 1, -1.0, 1.0, &mut rng);
            let (_, gw, ga) = composed_loss(&m, &w, &a, 1.0);
            let m2 = m.clone();
            let f = move |p: &[Tensor]| composed_loss(&m2, &p[0], &p[1], 1.0).0;
            let fd = finite_diff_grad(&f, &[w.clone(), a.clone()], 1e-5);
            assert!(gw.max_abs_diff(&fd[0]) < 1e-7, "w grads diverge");
            assert!(ga.max_abs_diff(&fd[1]) < 1e-7, "a grads diverge");
        }
    }

    #[test]
    fn scaling_loss_by_power_of_two_scales_grads_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Tensor::uniform(4, 3, -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(3, 1, -1.0, 1.0, &mut rng);
        let a = Tensor::uniform(3, 1, -1.0, 1.0, &mut rng);

        let run = |c: f64| {
            let mut tape = Tape::new();
            let mv = tape.constant(m.clone());
            let wv = tape.param(w.clone());
            let av = tape.param(a.clone());
            let reps = tape.sigmoid(mv);
            let scores = tape.matmul(reps, av).unwrap();
            let alpha = tape.softmax_beta(scores, 1.0).unwrap();
            let alpha_t = tape.transpose(alpha);
            let pooled_row = tape.matmul(alpha_t, reps).unwrap();
            let pooled = tape.transpose(pooled_row);
            let z = tape.dot(wv, pooled).unwrap();
            let base = tape.log1p_exp(z);
            let loss = tape.scale(base, c);
            tape.backward(loss).unwrap();
            (tape.grad_or_zeros(wv), tape.grad_or_zeros(av))
        };

        let (gw1, ga1) = run(1.0);
        let (gw2, ga2) = run(2.0);
        for (x, y) in gw1.data().iter().zip(gw2.data()) {
            assert_eq!(2.0 * x, *y);
        }
        for (x, y) in ga1.data().iter().zip(ga2.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn gather_concat_scale_var_round_trip_grads() {
        // loss = sum of (s * rows [1,0] of X) checked against finite diffs.
        let x0 = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s0 = Tensor::scalar(1.5);
        let eval = |x: &Tensor, s: &Tensor| -> (f64, Tensor, Tensor) {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let sv = tape.param(s.clone());
            let picked = tape.gather_rows(xv, vec![1, 0, 1]).unwrap();
            let scaled = tape.scale_var(picked, sv).unwrap();
            let both = tape.concat_rows(&[scaled, picked]).unwrap();
            let summed = tape.row_sum(both);
            let ones = tape.constant(Tensor::vector(vec![1.0, 1.0]));
            let loss = tape.dot(summed, ones).unwrap();
            tape.backward(loss).unwrap();
            (tape.value(loss).as_scalar(), tape.grad_or_zeros(xv), tape.grad_or_zeros(sv))
        };
        let (_, gx, gs) = eval(&x0, &s0);
        let f = |p: &[Tensor]| eval(&p[0], &p[1]).0;
        let fd = finite_diff_grad(&f, &[x0.clone(), s0.clone()], 1e-6);
        assert!(gx.max_abs_diff(&fd[0]) < 1e-7);
        assert!(gs.max_abs_diff(&fd[1]) < 1e-7);
    }

    #[test]
    fn row_max_routes_gradient_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(3, 1, vec![2.0, 5.0, 5.0]));
        let m = tape.row_max(x);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_is_a_probability_vector(
            scores in proptest::collection::vec(-50.0f64..50.0, 1..12),
            beta in 0.01f64..1000.0,
        ) {
            let w = softmax_beta_values(&scores, beta);
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }
}
