//! Define-by-run computation tape.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the information its backward rule needs. [`Graph::backward`] replays the
//! nodes in reverse, accumulating gradients into every tracked input.
//!
//! Matrix operations require rank-2 operands. Elementwise binary operations
//! accept either matching shapes or a single-element operand; anything else
//! needs an explicit [`Graph::reshape`] or [`Graph::add_bias`].

use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
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
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    GatherRows { table: Var, indices: Vec<usize> },
    ReplaceRows { base: Var, src: Var, positions: Vec<usize> },
    SoftmaxRows(Var),
    CausalMask(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    Relu(Var),
    Sin(Var),
    Cos(Var),
    LogSigmoid(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Single-threaded tape. Build one per forward pass and drop it after the
/// optimizer step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: IndexMap<String, Var>,
}

/// `c (m×n) = beta·c + op(a)·op(b)`, where `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe buffers whose lengths were checked
    // by the caller (and debug-asserted here); `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked, unnamed input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a leaf. Binding the same name twice returns
    /// the same node, so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), tracked))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul_t")?;
        let (n, k2) = self.value(b).dims2("matmul_t")?;
        if k != k2 {
            return Err(self.mismatch("matmul_t", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, 0.0);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a, b), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a), tracked))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.len() == 1 {
            let y = vb.data()[0];
            let data = va.data().iter().map(|x| f(*x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if va.len() == 1 {
            let x = va.data()[0];
            let data = vb.data().iter().map(|y| f(x, *y)).collect();
            Tensor::new(vb.shape().to_vec(), data)?
        } else {
            return Err(self.mismatch(op_name, a, b));
        };
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let tracked = self.tracked(a);
        self.push(out, Op::Scale(a, c), tracked)
    }

    /// Adds a length-`n` bias (shape `[n]` or `[1, n]`) to every row of `x: m×n`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("add_bias")?;
        if self.value(bias).len() != n || self.value(bias).rank() > 2 {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += b[j];
            }
        }
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddBias(x, bias), tracked))
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat of zero tensors".into()));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| self.value(*p).dims2("concat"))
            .collect::<Result<_>>()?;
        let out = match axis {
            0 => {
                let cols = dims[0].1;
                for (i, d) in dims.iter().enumerate() {
                    if d.1 != cols {
                        return Err(self.mismatch("concat", parts[0], parts[i]));
                    }
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for p in parts {
                    data.extend_from_slice(self.value(*p).data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            1 => {
                let rows = dims[0].0;
                for (i, d) in dims.iter().enumerate() {
                    if d.0 != rows {
                        return Err(self.mismatch("concat", parts[0], parts[i]));
                    }
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for (p, d) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&self.value(*p).data()[r * d.1..(r + 1) * d.1]);
                    }
                }
                Tensor::matrix(rows, cols, data)?
            }
            _ => return Err(TensorError::Invalid(format!("concat: bad axis {axis}"))),
        };
        let tracked = parts.iter().any(|p| self.tracked(*p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2("slice_rows")?;
        if start > end || end > m {
            return Err(TensorError::Invalid(format!(
                "slice_rows: range {start}..{end} outside {m} rows"
            )));
        }
        let data = self.value(x).data()[start * n..end * n].to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(end - start, n, data)?, Op::SliceRows { x, start }, tracked))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2("slice_cols")?;
        if start > end || end > n {
            return Err(TensorError::Invalid(format!(
                "slice_cols: range {start}..{end} outside {n} columns"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(m, end - start, data)?, Op::SliceCols { x, start }, tracked))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.value(table).dims2("gather_rows")?;
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: m,
                });
            }
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let tracked = self.tracked(table);
        Ok(self.push(
            Tensor::matrix(indices.len(), n, data)?,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            tracked,
        ))
    }

    /// Copy of `base` with row `positions[i]` replaced by row `i` of `src`.
    /// Positions must be distinct.
    pub fn replace_rows(&mut self, base: Var, positions: &[usize], src: Var) -> Result<Var> {
        let (m, n) = self.value(base).dims2("replace_rows")?;
        let (k, n2) = self.value(src).dims2("replace_rows")?;
        if n != n2 || k != positions.len() {
            return Err(self.mismatch("replace_rows", base, src));
        }
        let mut seen = vec![false; m];
        for &p in positions {
            if p >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "replace_rows",
                    index: p,
                    bound: m,
                });
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(TensorError::Invalid(format!(
                    "replace_rows: position {p} given twice"
                )));
            }
        }
        let mut data = self.value(base).data().to_vec();
        let s = self.value(src).data();
        for (i, &p) in positions.iter().enumerate() {
            data[p * n..(p + 1) * n].copy_from_slice(&s[i * n..(i + 1) * n]);
        }
        let tracked = self.tracked(base) || self.tracked(src);
        Ok(self.push(
            Tensor::matrix(m, n, data)?,
            Op::ReplaceRows {
                base,
                src,
                positions: positions.to_vec(),
            },
            tracked,
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("softmax_rows")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::SoftmaxRows(x), tracked))
    }

    /// Sets entries above the diagonal of a square matrix to `-inf`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("causal_mask")?;
        if m != n {
            return Err(self.mismatch("causal_mask", x, x));
        }
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            for j in (i + 1)..n {
                out[i * n + j] = f64::NEG_INFINITY;
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::CausalMask(x), tracked))
    }

    /// Row-wise layer normalization followed by a per-column affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.value(x).dims2("layer_norm")?;
        if self.value(gain).len() != n {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.value(bias).len() != n {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                normed[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let tracked = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
            tracked,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|a| f(*a)).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let tracked = self.tracked(x);
        self.push(out, op, tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    /// `ln σ(x)`, computed without overflow.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, log_sigmoid, Op::LogSigmoid(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Mean(x), tracked)
    }

    /// Column means of `x: m×n`, as a `1×n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("mean_rows")?;
        if m == 0 {
            return Err(TensorError::Invalid("mean_rows of an empty matrix".into()));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for j in 0..n {
                out[j] += src[r * n + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::row(out), Op::MeanRows(x), tracked))
    }

    /// Row sums of `x: m×n`, as an `m×1` column.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("sum_cols")?;
        let src = self.value(x).data();
        let out = (0..m).map(|r| src[r * n..(r + 1) * n].iter().sum()).collect();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(m, 1, out)?, Op::SumCols(x), tracked))
    }

    /// Mean softmax cross-entropy of `logits: m×C` against class indices.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.value(logits).dims2("cross_entropy_logits")?;
        if targets.len() != m || m == 0 {
            return Err(TensorError::Invalid(format!(
                "cross_entropy_logits: {} targets for {m} rows",
                targets.len()
            )));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy_logits",
                    index: t,
                    bound: c,
                });
            }
            let row = &src[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            loss += log_z - row[t];
            for j in 0..c {
                probs[r * c + j] = (row[j] - log_z).exp();
            }
        }
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(loss / m as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::Reshape(x), tracked))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(TensorError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.tracked(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let mut params = IndexMap::new();
        for (name, v) in &self.bound {
            if !self.tracked(*v) {
                continue;
            }
            let value = self.value(*v);
            let g = grads[v.0].clone().unwrap_or_else(|| vec![0.0; value.len()]);
            params.insert(
                name.clone(),
                Tensor::new(value.shape().to_vec(), g).expect("gradient matches parameter shape"),
            );
        }
        Ok(Grads {
            per_node: grads,
            params: Gradients::from_map(params),
        })
    }

    fn backprop(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("").unwrap();
                let n = self.value(*b).dims2("").unwrap().1;
                if self.tracked(*a) {
                    let bv = self.value(*b).data();
                    accumulate(&mut grads[a.0], m * k, |g| gemm(m, n, k, dy, false, bv, true, g, 1.0));
                }
                if self.tracked(*b) {
                    let av = self.value(*a).data();
                    accumulate(&mut grads[b.0], k * n, |g| gemm(k, m, n, av, true, dy, false, g, 1.0));
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.value(*a).dims2("").unwrap();
                let n = self.value(*b).dims2("").unwrap().0;
                if self.tracked(*a) {
                    let bv = self.value(*b).data();
                    accumulate(&mut grads[a.0], m * k, |g| gemm(m, n, k, dy, false, bv, false, g, 1.0));
                }
                if self.tracked(*b) {
                    let av = self.value(*a).data();
                    accumulate(&mut grads[b.0], n * k, |g| gemm(n, m, k, dy, true, av, false, g, 1.0));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2("").unwrap();
                accumulate(&mut grads[a.0], m * n, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += dy[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(*a, 1.0), (*b, sign)] {
                    if !self.tracked(v) {
                        continue;
                    }
                    let n = len(v);
                    accumulate(&mut grads[v.0], n, |g| {
                        if n == dy.len() {
                            g.iter_mut().zip(dy).for_each(|(g, d)| *g += s * d);
                        } else {
                            g[0] += s * dy.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if !self.tracked(v) {
                        continue;
                    }
                    let n = len(v);
                    let o = self.value(other).data();
                    accumulate(&mut grads[v.0], n, |g| {
                        if n == dy.len() && o.len() == dy.len() {
                            for i in 0..n {
                                g[i] += dy[i] * o[i];
                            }
                        } else if n == dy.len() {
                            for i in 0..n {
                                g[i] += dy[i] * o[0];
                            }
                        } else {
                            g[0] += dy.iter().zip(o).map(|(d, o)| d * o).sum::<f64>();
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], dy.len(), |g| {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d)
                });
            }
            Op::AddBias(x, bias) => {
                if self.tracked(*x) {
                    accumulate(&mut grads[x.0], dy.len(), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                    });
                }
                if self.tracked(*bias) {
                    let n = len(*bias);
                    accumulate(&mut grads[bias.0], n, |g| {
                        for (i, d) in dy.iter().enumerate() {
                            g[i % n] += d;
                        }
                    });
                }
            }
            Op::Concat { parts, axis } => {
                let (_, total_cols) = node.value.dims2("").unwrap();
                let mut offset = 0;
                for p in parts {
                    let (pm, pn) = self.value(*p).dims2("").unwrap();
                    if self.tracked(*p) {
                        accumulate(&mut grads[p.0], pm * pn, |g| {
                            if *axis == 0 {
                                let src = &dy[offset * pn..(offset + pm) * pn];
                                g.iter_mut().zip(src).for_each(|(g, d)| *g += d);
                            } else {
                                for r in 0..pm {
                                    for c in 0..pn {
                                        g[r * pn + c] += dy[r * total_cols + offset + c];
                                    }
                                }
                            }
                        });
                    }
                    offset += if *axis == 0 { pm } else { pn };
                }
            }
            Op::SliceRows { x, start } => {
                let n = self.value(*x).dims2("").unwrap().1;
                accumulate(&mut grads[x.0], len(*x), |g| {
                    let dst = &mut g[start * n..start * n + dy.len()];
                    dst.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                });
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).dims2("").unwrap();
                let w = node.value.dims2("").unwrap().1;
                accumulate(&mut grads[x.0], m * n, |g| {
                    for r in 0..m {
                        for c in 0..w {
                            g[r * n + start + c] += dy[r * w + c];
                        }
                    }
                });
            }
            Op::GatherRows { table, indices } => {
                let n = self.value(*table).dims2("").unwrap().1;
                accumulate(&mut grads[table.0], len(*table), |g| {
                    for (i, &row) in indices.iter().enumerate() {
                        for c in 0..n {
                            g[row * n + c] += dy[i * n + c];
                        }
                    }
                });
            }
            Op::ReplaceRows {
                base,
                src,
                positions,
            } => {
                let n = self.value(*base).dims2("").unwrap().1;
                if self.tracked(*base) {
                    accumulate(&mut grads[base.0], dy.len(), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                        for &p in positions {
                            for c in 0..n {
                                g[p * n + c] -= dy[p * n + c];
                            }
                        }
                    });
                }
                if self.tracked(*src) {
                    accumulate(&mut grads[src.0], len(*src), |g| {
                        for (i, &p) in positions.iter().enumerate() {
                            for c in 0..n {
                                g[i * n + c] += dy[p * n + c];
                            }
                        }
                    });
                }
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = node.value.dims2("").unwrap();
                let y = node.value.data();
                accumulate(&mut grads[x.0], m * n, |g| {
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let dr = &dy[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            g[r * n + j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::CausalMask(x) => {
                let (m, n) = node.value.dims2("").unwrap();
                accumulate(&mut grads[x.0], m * n, |g| {
                    for i in 0..m {
                        for j in 0..=i.min(n - 1) {
                            g[i * n + j] += dy[i * n + j];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let (m, n) = node.value.dims2("").unwrap();
                let gv = self.value(*gain).data();
                if self.tracked(*gain) {
                    accumulate(&mut grads[gain.0], n, |g| {
                        for (i, d) in dy.iter().enumerate() {
                            g[i % n] += d * normed[i];
                        }
                    });
                }
                if self.tracked(*bias) {
                    accumulate(&mut grads[bias.0], n, |g| {
                        for (i, d) in dy.iter().enumerate() {
                            g[i % n] += d;
                        }
                    });
                }
                if self.tracked(*x) {
                    accumulate(&mut grads[x.0], m * n, |g| {
                        let mut dh = vec![0.0; n];
                        for r in 0..m {
                            let hr = &normed[r * n..(r + 1) * n];
                            for j in 0..n {
                                dh[j] = dy[r * n + j] * gv[j];
                            }
                            let mean_dh = dh.iter().sum::<f64>() / n as f64;
                            let mean_dh_h =
                                dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                            for j in 0..n {
                                g[r * n + j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                accumulate(&mut grads[x.0], dy.len(), |g| {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            g[i] += dy[i];
                        }
                    }
                });
            }
            Op::Sin(x) => {
                let xv = self.value(*x).data();
                accumulate(&mut grads[x.0], dy.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * xv[i].cos();
                    }
                });
            }
            Op::Cos(x) => {
                let xv = self.value(*x).data();
                accumulate(&mut grads[x.0], dy.len(), |g| {
                    for i in 0..g.len() {
                        g[i] -= dy[i] * xv[i].sin();
                    }
                });
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x).data();
                accumulate(&mut grads[x.0], dy.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * sigmoid(-xv[i]);
                    }
                });
            }
            Op::Sum(x) => {
                accumulate(&mut grads[x.0], len(*x), |g| g.iter_mut().for_each(|g| *g += dy[0]));
            }
            Op::Mean(x) => {
                let n = len(*x);
                accumulate(&mut grads[x.0], n, |g| {
                    g.iter_mut().for_each(|g| *g += dy[0] / n as f64)
                });
            }
            Op::MeanRows(x) => {
                let (m, n) = self.value(*x).dims2("").unwrap();
                accumulate(&mut grads[x.0], m * n, |g| {
                    for r in 0..m {
                        for j in 0..n {
                            g[r * n + j] += dy[j] / m as f64;
                        }
                    }
                });
            }
            Op::SumCols(x) => {
                let (m, n) = self.value(*x).dims2("").unwrap();
                accumulate(&mut grads[x.0], m * n, |g| {
                    for r in 0..m {
                        for j in 0..n {
                            g[r * n + j] += dy[r];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let m = targets.len();
                let c = probs.len() / m;
                let scale = dy[0] / m as f64;
                accumulate(&mut grads[logits.0], m * c, |g| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            g[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                accumulate(&mut grads[x.0], dy.len(), |g| {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
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

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Grads {
    per_node: Vec<Option<Vec<f64>>>,
    params: Gradients,
}

impl Grads {
    /// Gradient of the loss with respect to `v`, if `v` is tracked and on
    /// the loss's dependency path.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.per_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every bound trainable parameter, keyed by name.
    pub fn params(&self) -> &Gradients {
        &self.params
    }

    pub fn into_params(self) -> Gradients {
        self.params
    }
}
