//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Graph`] evaluates eagerly: every op call computes its value
//! immediately, records the operation, and returns a [`Var`] handle. The
//! tape is rebuilt per forward pass (sequence lengths vary between
//! batches), and [`Graph::backward`] replays it in reverse, accumulating
//! gradients additively for every `requires_grad` leaf.
//!
//! Every op output is scanned for NaN/Inf and reported as an error rather
//! than propagated; training divergence surfaces here first.

use crate::scalar::Scalar;

use super::math;
use super::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, thiserror::Error)]
pub enum TapeError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadOperand {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}

/// Recorded primitive. Saved fields hold whatever the backward pass needs
/// beyond the input/output values themselves.
#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    ScaleByVar(Var, Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sigmoid(Var),
    Gelu(Var),
    SumAll(Var),
    SumLast(Var),
    MaxLast(Var, Vec<usize>),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<S>,
        inv_std: Vec<S>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize, usize),
    CosineMatrix(Var, Var),
    GaussKernels {
        cos: Var,
        centers: Vec<S>,
        sigma: S,
    },
    Reshape(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    /// True when a `requires_grad` leaf is reachable from this node.
    active: bool,
}

/// Dynamic gradient tape.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node past `len`. Frozen scoring loops truncate back to
    /// the parameter leaves between candidates to keep memory flat. Vars
    /// issued for the dropped range must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.truncate(len.min(self.grads.len()));
    }

    /// Register an input tensor. Gradients are tracked only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Result<Var, TapeError> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradients (masks, teacher targets, ...).
    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var, TapeError> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if any
    /// flowed to it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a leaf, densified to zeros when nothing flowed.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<S> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![S::zero(); self.nodes[v.0].value.len()],
        }
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<S>,
        op: Op<S>,
        active: bool,
    ) -> Result<Var, TapeError> {
        if value.first_non_finite().is_some() {
            return Err(TapeError::NonFinite { op: name });
        }
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, active });
        Ok(Var(id))
    }

    fn active(&self, v: Var) -> bool {
        self.nodes[v.0].active
    }

    fn any_active(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.active(*v))
    }

    // ── Forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        math::matmul(ta.data(), tb.data(), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let active = self.any_active(&[a, b]);
        self.push("matmul", value, Op::Matmul(a, b), active)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(TapeError::BadOperand {
                op: "transpose",
                expected: "rank-2 tensor",
                got: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let active = self.active(a);
        self.push("transpose", value, Op::Transpose(a), active)
    }

    fn elementwise_pair(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var, TapeError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TapeError::ShapeMismatch {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let active = self.any_active(&[a, b]);
        self.push(name, value, op, active)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.elementwise_pair("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.elementwise_pair("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.elementwise_pair("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast-add a length-n row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TapeError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if ta.rank() != 2 || tr.rank() != 1 || ta.shape()[1] != tr.shape()[0] {
            return Err(TapeError::ShapeMismatch {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ta.data()[i * n + j] + tr.data()[j]);
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let active = self.any_active(&[a, row]);
        self.push("add_row", value, Op::AddRow(a, row), active)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(S) -> S,
        op: Op<S>,
    ) -> Result<Var, TapeError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let active = self.active(a);
        self.push(name, value, op, active)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var, TapeError> {
        self.elementwise("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var, TapeError> {
        self.elementwise("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TapeError> {
        self.elementwise("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TapeError> {
        self.elementwise("log", a, |x| x.ln(), Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, TapeError> {
        self.elementwise("softplus", a, math::softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TapeError> {
        self.elementwise("sigmoid", a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, TapeError> {
        self.elementwise("gelu", a, math::gelu, Op::Gelu(a))
    }

    /// Multiply every element of `a` by a scalar node (shape `[1]`).
    pub fn scale_by_var(&mut self, a: Var, s: Var) -> Result<Var, TapeError> {
        let ts = self.value(s);
        if !ts.is_scalar() {
            return Err(TapeError::BadOperand {
                op: "scale_by_var",
                expected: "scalar (one-element) tensor",
                got: ts.shape().to_vec(),
            });
        }
        let sv = ts.first();
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * sv).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let active = self.any_active(&[a, s]);
        self.push("scale_by_var", value, Op::ScaleByVar(a, s), active)
    }

    /// Sum every element into a `[1]` scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = self.value(a);
        let mut acc = S::zero();
        for &x in ta.data() {
            acc = acc + x;
        }
        let active = self.active(a);
        self.push("sum_all", Tensor::scalar(acc), Op::SumAll(a), active)
    }

    /// Sum over the trailing axis: `[.., n] -> [..]`; rank-1 sums to `[1]`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = self.value(a);
        let n = ta.cols();
        if n == 0 {
            return Err(TapeError::Empty { op: "sum_last" });
        }
        let groups = ta.len() / n;
        let mut out = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut acc = S::zero();
            for j in 0..n {
                acc = acc + ta.data()[g * n + j];
            }
            out.push(acc);
        }
        let shape = if ta.rank() == 1 {
            vec![1]
        } else {
            ta.shape()[..ta.rank() - 1].to_vec()
        };
        let value = Tensor::new(shape, out)?;
        let active = self.active(a);
        self.push("sum_last", value, Op::SumLast(a), active)
    }

    /// Row-wise max over the trailing axis of an `[m, n]` matrix, with the
    /// subgradient routed to the argmax. Ties break to the lowest index.
    pub fn max_last(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(TapeError::BadOperand {
                op: "max_last",
                expected: "rank-2 tensor",
                got: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        if n == 0 {
            return Err(TapeError::Empty { op: "max_last" });
        }
        let mut out = Vec::with_capacity(m);
        let mut argmax = Vec::with_capacity(m);
        for i in 0..m {
            let row = &ta.data()[i * n..(i + 1) * n];
            let mut best = 0usize;
            for j in 1..n {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            argmax.push(best);
        }
        let value = Tensor::vector(out);
        let active = self.active(a);
        self.push("max_last", value, Op::MaxLast(a, argmax), active)
    }

    /// Numerically stable row-wise softmax of an `[m, n]` matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TapeError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(TapeError::BadOperand {
                op: "softmax_rows",
                expected: "rank-2 tensor",
                got: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        if n == 0 {
            return Err(TapeError::Empty { op: "softmax_rows" });
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &ta.data()[i * n..(i + 1) * n];
            let mut mx = row[0];
            for &x in &row[1..] {
                if x > mx {
                    mx = x;
                }
            }
            let mut denom = S::zero();
            let mut exps = Vec::with_capacity(n);
            for &x in row {
                let e = (x - mx).exp();
                exps.push(e);
                denom = denom + e;
            }
            for e in exps {
                out.push(e / denom);
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let active = self.active(a);
        self.push("softmax_rows", value, Op::SoftmaxRows(a), active)
    }

    /// Per-row layer normalization with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var, TapeError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.rank() != 2 || tg.rank() != 1 || tb.rank() != 1 {
            return Err(TapeError::BadOperand {
                op: "layer_norm",
                expected: "matrix input with vector gain/bias",
                got: tx.shape().to_vec(),
            });
        }
        let (m, n) = (tx.shape()[0], tx.shape()[1]);
        if tg.len() != n || tb.len() != n {
            return Err(TapeError::ShapeMismatch {
                op: "layer_norm",
                left: tx.shape().to_vec(),
                right: tg.shape().to_vec(),
            });
        }
        let inv_n = S::one() / S::of(n as f64);
        let mut out = Vec::with_capacity(m * n);
        let mut means = Vec::with_capacity(m);
        let mut inv_stds = Vec::with_capacity(m);
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mut mean = S::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_n;
            let mut var = S::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_n;
            let inv = S::one() / (var + eps).sqrt();
            means.push(mean);
            inv_stds.push(inv);
            for j in 0..n {
                let xh = (row[j] - mean) * inv;
                out.push(tg.data()[j] * xh + tb.data()[j]);
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let active = self.any_active(&[x, gamma, beta]);
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                inv_std: inv_stds,
            },
            active,
        )
    }

    /// Select rows of a `[v, d]` table by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TapeError> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(TapeError::BadOperand {
                op: "gather_rows",
                expected: "rank-2 table",
                got: tt.shape().to_vec(),
            });
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TapeError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let active = self.active(table);
        self.push(
            "gather_rows",
            value,
            Op::GatherRows(table, ids.to_vec()),
            active,
        )
    }

    /// Concatenate along axis 0. Rank-1 parts form a longer vector,
    /// rank-2 parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::Empty { op: "concat_rows" });
        }
        let rank = self.value(parts[0]).rank();
        let cols = self.value(parts[0]).cols();
        let mut rows = 0usize;
        let mut data = Vec::new();
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() != rank || (rank == 2 && tp.cols() != cols) {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: tp.shape().to_vec(),
                });
            }
            rows += tp.shape()[0];
            data.extend_from_slice(tp.data());
        }
        let shape = if rank == 1 { vec![rows] } else { vec![rows, cols] };
        let value = Tensor::new(shape, data)?;
        let active = self.any_active(parts);
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), active)
    }

    /// Concatenate `[m, *]` matrices along axis 1.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::Empty { op: "concat_cols" });
        }
        let m = self.value(parts[0]).shape()[0];
        let mut total = 0usize;
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() != 2 || tp.shape()[0] != m {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: tp.shape().to_vec(),
                });
            }
            total += tp.shape()[1];
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let tp = self.value(p);
                let n = tp.shape()[1];
                data.extend_from_slice(&tp.data()[i * n..(i + 1) * n]);
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        let active = self.any_active(parts);
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), active)
    }

    /// Rows `lo..hi` of a rank-2 tensor (or elements of a vector).
    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var, TapeError> {
        let ta = self.value(a);
        let rows = ta.shape()[0];
        if lo >= hi || hi > rows {
            return Err(TapeError::IndexOutOfRange {
                op: "slice_rows",
                index: hi,
                bound: rows,
            });
        }
        let cols = if ta.rank() == 2 { ta.shape()[1] } else { 1 };
        let data = ta.data()[lo * cols..hi * cols].to_vec();
        let shape = if ta.rank() == 1 {
            vec![hi - lo]
        } else {
            vec![hi - lo, cols]
        };
        let value = Tensor::new(shape, data)?;
        let active = self.active(a);
        self.push("slice_rows", value, Op::SliceRows(a, lo), active)
    }

    /// Columns `lo..hi` of an `[m, n]` matrix.
    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var, TapeError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(TapeError::BadOperand {
                op: "slice_cols",
                expected: "rank-2 tensor",
                got: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        if lo >= hi || hi > n {
            return Err(TapeError::IndexOutOfRange {
                op: "slice_cols",
                index: hi,
                bound: n,
            });
        }
        let w = hi - lo;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&ta.data()[i * n + lo..i * n + hi]);
        }
        let value = Tensor::new(vec![m, w], data)?;
        let active = self.active(a);
        self.push("slice_cols", value, Op::SliceCols(a, lo, hi), active)
    }

    /// Pairwise cosine similarities between rows: `[m, d] x [n, d] -> [m, n]`.
    /// Zero-norm rows yield similarity 0 (and receive no gradient).
    pub fn cosine_matrix(&mut self, q: Var, p: Var) -> Result<Var, TapeError> {
        let (tq, tp) = (self.value(q), self.value(p));
        if tq.rank() != 2 || tp.rank() != 2 || tq.shape()[1] != tp.shape()[1] {
            return Err(TapeError::ShapeMismatch {
                op: "cosine_matrix",
                left: tq.shape().to_vec(),
                right: tp.shape().to_vec(),
            });
        }
        let (m, n) = (tq.shape()[0], tp.shape()[0]);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(math::cosine(tq.row(i), tp.row(j)));
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let active = self.any_active(&[q, p]);
        self.push("cosine_matrix", value, Op::CosineMatrix(q, p), active)
    }

    /// Gaussian kernel activations of a similarity matrix:
    /// `[m, n] -> [k, m, n]` with `out[k] = exp(-(cos - mu_k)^2 / (2 sigma^2))`.
    pub fn gauss_kernels(&mut self, cos: Var, centers: &[S], sigma: S) -> Result<Var, TapeError> {
        let tc = self.value(cos);
        if tc.rank() != 2 {
            return Err(TapeError::BadOperand {
                op: "gauss_kernels",
                expected: "rank-2 similarity matrix",
                got: tc.shape().to_vec(),
            });
        }
        if centers.is_empty() {
            return Err(TapeError::Empty { op: "gauss_kernels" });
        }
        let (m, n) = (tc.shape()[0], tc.shape()[1]);
        let mut out = Vec::with_capacity(centers.len() * m * n);
        for &mu in centers {
            for &c in tc.data() {
                out.push(math::gauss_kernel(c, mu, sigma));
            }
        }
        let value = Tensor::new(vec![centers.len(), m, n], out)?;
        let active = self.active(cos);
        self.push(
            "gauss_kernels",
            value,
            Op::GaussKernels {
                cos,
                centers: centers.to_vec(),
                sigma,
            },
            active,
        )
    }

    /// Reinterpret the data with a new shape of the same total size.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TapeError> {
        let ta = self.value(a);
        let expect: usize = shape.iter().product();
        if expect != ta.len() {
            return Err(TapeError::ShapeDataMismatch {
                shape,
                len: ta.len(),
            });
        }
        let value = Tensor::new(shape, ta.data().to_vec())?;
        let active = self.active(a);
        self.push("reshape", value, Op::Reshape(a), active)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients for every reachable
    /// `requires_grad` leaf are accumulated additively (a leaf used k
    /// times receives the sum of its k contributions). Gradient buffers
    /// are reset at the start of each call.
    pub fn backward(&mut self, loss: Var) -> Result<(), TapeError> {
        let t = self.value(loss);
        if !t.is_scalar() {
            return Err(TapeError::NonScalarLoss {
                shape: t.shape().to_vec(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].active {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].active {
                continue;
            }
            let d_out = self.grads[idx].clone().expect("checked above");
            self.backward_op(idx, &d_out);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, contrib: &[S]) {
        if !self.nodes[v.0].active {
            return;
        }
        let n = self.nodes[v.0].value.len();
        debug_assert_eq!(n, contrib.len());
        let slot = self.grads[v.0].get_or_insert_with(|| vec![S::zero(); n]);
        for (dst, &c) in slot.iter_mut().zip(contrib) {
            *dst = *dst + c;
        }
    }

    fn backward_op(&mut self, idx: usize, d_out: &[S]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let ta = self.value(a);
                let tb = self.value(b);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.active(a) {
                    let mut da = vec![S::zero(); m * k];
                    math::matmul_nt(d_out, self.value(b).data(), m, n, k, &mut da);
                    self.accum(a, &da);
                }
                if self.active(b) {
                    let mut db = vec![S::zero(); k * n];
                    math::matmul_tn(self.value(a).data(), d_out, m, k, n, &mut db);
                    self.accum(b, &db);
                }
            }
            Op::Transpose(a) => {
                let ta = self.value(a);
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                let mut da = vec![S::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        da[i * n + j] = d_out[j * m + i];
                    }
                }
                self.accum(a, &da);
            }
            Op::Add(a, b) => {
                self.accum(a, d_out);
                self.accum(b, d_out);
            }
            Op::Sub(a, b) => {
                self.accum(a, d_out);
                let neg: Vec<S> = d_out.iter().map(|&g| -g).collect();
                self.accum(b, &neg);
            }
            Op::AddRow(a, row) => {
                self.accum(a, d_out);
                if self.active(row) {
                    let n = self.value(row).len();
                    let mut dr = vec![S::zero(); n];
                    for (i, &g) in d_out.iter().enumerate() {
                        dr[i % n] = dr[i % n] + g;
                    }
                    self.accum(row, &dr);
                }
            }
            Op::Mul(a, b) => {
                if self.active(a) {
                    let da: Vec<S> = d_out
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    self.accum(a, &da);
                }
                if self.active(b) {
                    let db: Vec<S> = d_out
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(&g, &x)| g * x)
                        .collect();
                    self.accum(b, &db);
                }
            }
            Op::Scale(a, c) => {
                let da: Vec<S> = d_out.iter().map(|&g| g * c).collect();
                self.accum(a, &da);
            }
            Op::AddScalar(a) => {
                self.accum(a, d_out);
            }
            Op::ScaleByVar(a, s) => {
                let sv = self.value(s).first();
                if self.active(a) {
                    let da: Vec<S> = d_out.iter().map(|&g| g * sv).collect();
                    self.accum(a, &da);
                }
                if self.active(s) {
                    let mut ds = S::zero();
                    for (&g, &x) in d_out.iter().zip(self.value(a).data()) {
                        ds = ds + g * x;
                    }
                    self.accum(s, &[ds]);
                }
            }
            Op::Exp(a) => {
                let da: Vec<S> = d_out
                    .iter()
                    .zip(self.nodes[idx].value.data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                self.accum(a, &da);
            }
            Op::Log(a) => {
                let da: Vec<S> = d_out
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&g, &x)| g / x)
                    .collect();
                self.accum(a, &da);
            }
            Op::Softplus(a) => {
                let da: Vec<S> = d_out
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&g, &x)| g * math::sigmoid(x))
                    .collect();
                self.accum(a, &da);
            }
            Op::Sigmoid(a) => {
                let da: Vec<S> = d_out
                    .iter()
                    .zip(self.nodes[idx].value.data())
                    .map(|(&g, &y)| g * y * (S::one() - y))
                    .collect();
                self.accum(a, &da);
            }
            Op::Gelu(a) => {
                let da: Vec<S> = d_out
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&g, &x)| g * math::gelu_grad(x))
                    .collect();
                self.accum(a, &da);
            }
            Op::SumAll(a) => {
                let g = d_out[0];
                let da = vec![g; self.value(a).len()];
                self.accum(a, &da);
            }
            Op::SumLast(a) => {
                let n = self.value(a).cols();
                let mut da = Vec::with_capacity(self.value(a).len());
                for &g in d_out {
                    for _ in 0..n {
                        da.push(g);
                    }
                }
                self.accum(a, &da);
            }
            Op::MaxLast(a, argmax) => {
                let ta = self.value(a);
                let n = ta.shape()[1];
                let mut da = vec![S::zero(); ta.len()];
                for (i, (&g, &j)) in d_out.iter().zip(&argmax).enumerate() {
                    da[i * n + j] = g;
                }
                self.accum(a, &da);
            }
            Op::SoftmaxRows(a) => {
                let y = self.nodes[idx].value.clone();
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &d_out[i * n..(i + 1) * n];
                    let mut inner = S::zero();
                    for j in 0..n {
                        inner = inner + gr[j] * yr[j];
                    }
                    for j in 0..n {
                        da[i * n + j] = yr[j] * (gr[j] - inner);
                    }
                }
                self.accum(a, &da);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let tx = self.value(x).clone();
                let tg = self.value(gamma).clone();
                let (m, n) = (tx.shape()[0], tx.shape()[1]);
                let inv_n = S::one() / S::of(n as f64);
                let mut dx = vec![S::zero(); m * n];
                let mut dg = vec![S::zero(); n];
                let mut db = vec![S::zero(); n];
                for i in 0..m {
                    let row = &tx.data()[i * n..(i + 1) * n];
                    let gr = &d_out[i * n..(i + 1) * n];
                    let inv = inv_std[i];
                    let mu = mean[i];
                    // x_hat, d_xhat, and the two row means the VJP needs
                    let mut mean_dxh = S::zero();
                    let mut mean_dxh_xh = S::zero();
                    let mut xh = Vec::with_capacity(n);
                    let mut dxh = Vec::with_capacity(n);
                    for j in 0..n {
                        let h = (row[j] - mu) * inv;
                        let d = gr[j] * tg.data()[j];
                        mean_dxh = mean_dxh + d;
                        mean_dxh_xh = mean_dxh_xh + d * h;
                        xh.push(h);
                        dxh.push(d);
                        dg[j] = dg[j] + gr[j] * h;
                        db[j] = db[j] + gr[j];
                    }
                    mean_dxh = mean_dxh * inv_n;
                    mean_dxh_xh = mean_dxh_xh * inv_n;
                    for j in 0..n {
                        dx[i * n + j] = inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                if self.active(x) {
                    self.accum(x, &dx);
                }
                if self.active(gamma) {
                    self.accum(gamma, &dg);
                }
                if self.active(beta) {
                    self.accum(beta, &db);
                }
            }
            Op::GatherRows(table, ids) => {
                if self.active(table) {
                    let tt = self.value(table);
                    let d = tt.shape()[1];
                    let mut dt = vec![S::zero(); tt.len()];
                    for (l, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] = dt[id * d + j] + d_out[l * d + j];
                        }
                    }
                    self.accum(table, &dt);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0usize;
                for &p in &parts {
                    let len = self.value(p).len();
                    let slice = d_out[offset..offset + len].to_vec();
                    self.accum(p, &slice);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let m = self.value(parts[0]).shape()[0];
                let total: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
                let mut offset = 0usize;
                for &p in &parts {
                    let n = self.value(p).shape()[1];
                    if self.active(p) {
                        let mut dp = Vec::with_capacity(m * n);
                        for i in 0..m {
                            dp.extend_from_slice(&d_out[i * total + offset..i * total + offset + n]);
                        }
                        self.accum(p, &dp);
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, lo) => {
                let ta = self.value(a);
                let cols = if ta.rank() == 2 { ta.shape()[1] } else { 1 };
                let mut da = vec![S::zero(); ta.len()];
                da[lo * cols..lo * cols + d_out.len()].copy_from_slice(d_out);
                self.accum(a, &da);
            }
            Op::SliceCols(a, lo, hi) => {
                let ta = self.value(a);
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                let w = hi - lo;
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    da[i * n + lo..i * n + hi].copy_from_slice(&d_out[i * w..(i + 1) * w]);
                }
                self.accum(a, &da);
            }
            Op::CosineMatrix(q, p) => {
                let tq = self.value(q).clone();
                let tp = self.value(p).clone();
                let out = self.nodes[idx].value.clone();
                let (m, n) = (tq.shape()[0], tp.shape()[0]);
                let d = tq.shape()[1];
                let nq: Vec<S> = (0..m).map(|i| math::dot(tq.row(i), tq.row(i)).sqrt()).collect();
                let np: Vec<S> = (0..n).map(|j| math::dot(tp.row(j), tp.row(j)).sqrt()).collect();
                let mut dq = vec![S::zero(); m * d];
                let mut dp = vec![S::zero(); n * d];
                for i in 0..m {
                    for j in 0..n {
                        let g = d_out[i * n + j];
                        if g == S::zero() || nq[i] == S::zero() || np[j] == S::zero() {
                            continue;
                        }
                        let c = out.data()[i * n + j];
                        let denom = nq[i] * np[j];
                        for t in 0..d {
                            let qv = tq.data()[i * d + t];
                            let pv = tp.data()[j * d + t];
                            dq[i * d + t] = dq[i * d + t] + g * (pv / denom - c * qv / (nq[i] * nq[i]));
                            dp[j * d + t] = dp[j * d + t] + g * (qv / denom - c * pv / (np[j] * np[j]));
                        }
                    }
                }
                if self.active(q) {
                    self.accum(q, &dq);
                }
                if self.active(p) {
                    self.accum(p, &dp);
                }
            }
            Op::GaussKernels { cos, centers, sigma } => {
                if self.active(cos) {
                    let tc = self.value(cos);
                    let mn = tc.len();
                    let out = self.nodes[idx].value.clone();
                    let inv_s2 = S::one() / (sigma * sigma);
                    let mut dc = vec![S::zero(); mn];
                    for (k, &mu) in centers.iter().enumerate() {
                        for e in 0..mn {
                            let g = d_out[k * mn + e];
                            let y = out.data()[k * mn + e];
                            let c = tc.data()[e];
                            dc[e] = dc[e] - g * y * (c - mu) * inv_s2;
                        }
                    }
                    self.accum(cos, &dc);
                }
            }
            Op::Reshape(a) => {
                self.accum(a, d_out);
            }
        }
    }
}
