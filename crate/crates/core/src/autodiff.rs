//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is built per image: every operation appends a node holding its
//! forward value, and [`Graph::backward`] walks the tape in reverse. Parameters
//! enter through [`Graph::param`] and their gradients are read back by id.

use std::collections::HashMap;
use std::sync::Arc;

use crate::scalar::{c, Scalar};
use crate::tensor::{Matrix, SparseRows};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Square(Var),
    Abs(Var),
    Max(Var, Var),
    Min(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        rstd: Vec<T>,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Sum(Var),
    SumCols(Var),
    MeanRows(Var),
    Sparse(Var, Arc<SparseRows<T>>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
    track: bool,
    counting: bool,
    flops: u64,
    constants: Vec<Var>,
    replay: Option<std::vec::IntoIter<Matrix<T>>>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph that records gradients for parameters.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            track: true,
            counting: false,
            flops: 0,
            constants: Vec::new(),
            replay: None,
        }
    }

    /// A tracking graph whose `constant` leaves take `values` in creation
    /// order instead of their argument. Finite-difference checks use it to
    /// hold value-derived constants (detached boxes) at a base point.
    pub fn replaying(values: Vec<Matrix<T>>) -> Self {
        Self {
            replay: Some(values.into_iter()),
            ..Self::new()
        }
    }

    /// Values of every `constant` leaf in creation order.
    pub fn constant_values(&self) -> Vec<Matrix<T>> {
        self.constants.iter().map(|&v| self.value(v).clone()).collect()
    }

    /// A graph whose parameters are treated as constants.
    pub fn inference() -> Self {
        Self {
            track: false,
            ..Self::new()
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    /// Start counting matmul FLOPs (2·m·k·n per product).
    pub fn count_flops(&mut self, on: bool) {
        self.counting = on;
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        let value = match self.replay.as_mut().and_then(|r| r.next()) {
            Some(v) => {
                assert_eq!(v.shape(), value.shape(), "replayed constant has a different shape");
                v
            }
            None => value,
        };
        let v = self.push(value, Op::Leaf, false);
        self.constants.push(v);
        v
    }

    /// Leaf for parameter `id`; repeated calls with the same id share one node.
    pub fn param(&mut self, id: usize, value: &Matrix<T>) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, self.track);
        self.params.insert(id, v);
        v
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn unary(&mut self, a: Var, value: Matrix<T>, op: Op<T>) -> Var {
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix<T>, op: Op<T>) -> Var {
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: operand shapes differ");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        if self.counting {
            let (m, k) = self.shape(a);
            self.flops += 2 * (m * k * self.shape(b).1) as u64;
        }
        self.binary(a, b, value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        if self.counting {
            let (m, k) = self.shape(a);
            self.flops += 2 * (m * k * self.shape(b).0) as u64;
        }
        self.binary(a, b, value, Op::MatMulNt(a, b))
    }

    /// `x · w + bias` with a `[1, n]` bias row.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.binary(a, b, value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.binary(a, b, value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.binary(a, b, value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.binary(a, b, value, Op::Div(a, b))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "max");
        let value = self.value(a).zip_map(self.value(b), |x, y| x.max(y));
        self.binary(a, b, value, Op::Max(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "min");
        let value = self.value(a).zip_map(self.value(b), |x, y| x.min(y));
        self.binary(a, b, value, Op::Min(a, b))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row: bias shape");
        let b = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..r {
            for (x, &y) in value.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.binary(a, row, value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.unary(a, value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.unary(a, value, Op::AddScalar(a))
    }

    /// `s - a`.
    pub fn rsub_scalar(&mut self, s: T, a: Var) -> Var {
        let n = self.scale(a, -T::one());
        self.add_scalar(n, s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| {
            let u = c::<T>(GELU_K) * (x + c::<T>(GELU_C) * x * x * x);
            c::<T>(0.5) * x * (T::one() + u.tanh())
        });
        self.unary(a, value, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::exp);
        self.unary(a, value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::ln);
        self.unary(a, value, Op::Ln(a))
    }

    /// Numerically stable `ln(1 + eˣ)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.unary(a, value, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.unary(a, value, Op::Square(a))
    }

    /// Elementwise `|a|`; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::abs);
        self.unary(a, value, Op::Abs(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.unary(a, value, Op::SoftmaxRows(a))
    }

    /// Per-row layer normalization with `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let (r, n) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, n));
        assert_eq!(self.shape(beta), (1, n));
        let xv = self.value(x);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let nf = T::from_usize(n).unwrap();
        let mut xhat = Matrix::zeros(r, n);
        let mut out = Matrix::zeros(r, n);
        let mut rstd = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat.set(i, j, h);
                out.set(i, j, h * gv[j] + bv[j]);
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        self.unary(a, value, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let value = Matrix::from_fn(src.rows(), len, |i, j| src.get(i, start + j));
        self.unary(a, value, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select_rows(idx);
        self.unary(a, value, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                value.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.unary(a, value, Op::Transpose(a))
    }

    /// Sum of all elements as a `[1, 1]` matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.unary(a, value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Per-row sums, `[rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = Matrix::from_fn(src.rows(), 1, |i, _| src.row(i).iter().copied().sum());
        self.unary(a, value, Op::SumCols(a))
    }

    /// Column-wise mean over rows, `[1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let inv = T::one() / T::from_usize(src.rows()).unwrap();
        let value = Matrix::from_fn(1, src.cols(), |_, j| {
            (0..src.rows()).map(|i| src.get(i, j)).sum::<T>() * inv
        });
        self.unary(a, value, Op::MeanRows(a))
    }

    /// Applies a fixed row-sparse linear map (bilinear resampling).
    pub fn sparse(&mut self, a: Var, map: Arc<SparseRows<T>>) -> Var {
        let value = map.apply(self.value(a));
        self.unary(a, value, Op::Sparse(a, map))
    }

    /// Reverse pass from a `[1, 1]` root. Returns gradients for every
    /// parameter reached, keyed by parameter id.
    pub fn backward(&self, root: Var) -> HashMap<usize, Matrix<T>> {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        self.params
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].take().map(|g| (id, g)))
            .collect()
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x / y));
                }
                if self.ng(*b) {
                    let t = g.zip_map(out, |x, o| x * o);
                    self.accumulate(grads, *b, t.zip_map(bv, |x, y| -x / y));
                }
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                let is_max = matches!(node.op, Op::Max(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick_a = |x: T, y: T| if is_max { x >= y } else { x <= y };
                let n = g.len();
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                let mut gb = Matrix::zeros(g.rows(), g.cols());
                for i in 0..n {
                    if pick_a(av.data()[i], bv.data()[i]) {
                        ga.data_mut()[i] = g.data()[i];
                    } else {
                        gb.data_mut()[i] = g.data()[i];
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*row) {
                    let gr = Matrix::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum());
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Abs(a) => {
                let d = g.zip_map(self.value(*a), |x, v| {
                    if v > T::zero() {
                        x
                    } else if v < T::zero() {
                        -x
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(out, |x, y| x * y * (T::one() - y));
                self.accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let d = g.zip_map(self.value(*a), |gx, x| gx * gelu_grad(x));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| x * y)),
            Op::Ln(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Softplus(a) => {
                let d = g.zip_map(self.value(*a), |x, y| x * sigmoid(y));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(self.value(*a), |x, y| x * (y + y));
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, gy) = (out.row(i), g.row(i));
                    let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = y[j] * (gy[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, n) = xhat.shape();
                let gv = self.value(*gamma).data();
                if self.ng(*gamma) {
                    let d = Matrix::from_fn(1, n, |_, j| (0..r).map(|i| g.get(i, j) * xhat.get(i, j)).sum());
                    self.accumulate(grads, *gamma, d);
                }
                if self.ng(*beta) {
                    let d = Matrix::from_fn(1, n, |_, j| (0..r).map(|i| g.get(i, j)).sum());
                    self.accumulate(grads, *beta, d);
                }
                if self.ng(*x) {
                    let nf = T::from_usize(n).unwrap();
                    let mut d = Matrix::zeros(r, n);
                    for i in 0..r {
                        let gh: Vec<T> = (0..n).map(|j| g.get(i, j) * gv[j]).collect();
                        let mean_g = gh.iter().copied().sum::<T>() / nf;
                        let mean_gx = (0..n).map(|j| gh[j] * xhat.get(i, j)).sum::<T>() / nf;
                        for j in 0..n {
                            d.set(i, j, rstd[i] * (gh[j] - mean_g - xhat.get(i, j) * mean_gx));
                        }
                    }
                    self.accumulate(grads, *x, d);
                }
            }
            Op::SliceRows(a, start) => {
                let (r, cc) = self.shape(*a);
                let mut d = Matrix::zeros(r, cc);
                for i in 0..g.rows() {
                    d.row_mut(start + i).copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let (r, cc) = self.shape(*a);
                let mut d = Matrix::zeros(r, cc);
                for i in 0..r {
                    d.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let (r, cc) = self.shape(*a);
                let mut d = Matrix::zeros(r, cc);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice_rows(off, rows));
                    }
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.shape(p).1;
                    if self.ng(p) {
                        let d = Matrix::from_fn(g.rows(), cols, |i, j| g.get(i, off + j));
                        self.accumulate(grads, p, d);
                    }
                    off += cols;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let (r, cc) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, cc, g.get(0, 0)));
            }
            Op::SumCols(a) => {
                let (r, cc) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::from_fn(r, cc, |i, _| g.get(i, 0)));
            }
            Op::MeanRows(a) => {
                let (r, cc) = self.shape(*a);
                let inv = T::one() / T::from_usize(r).unwrap();
                self.accumulate(grads, *a, Matrix::from_fn(r, cc, |_, j| g.get(0, j) * inv));
            }
            Op::Sparse(a, map) => self.accumulate(grads, *a, map.apply_transpose(g)),
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn inverse_sigmoid<T: Scalar>(p: T) -> T {
    let eps = c::<T>(1e-5);
    let p = p.max(eps).min(T::one() - eps);
    (p / (T::one() - p)).ln()
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = c::<T>(GELU_K);
    let cc = c::<T>(GELU_C);
    let u = k * (x + cc * x * x * x);
    let t = u.tanh();
    let half = c::<T>(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + c::<T>(3.0) * cc * x * x)
}
