//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Tape`] records one forward computation as a topologically ordered list
//! of nodes. Every node is a 2-D f32 matrix; 1-D tensors enter as single
//! rows. [`Tape::backward`] walks the list once in reverse and accumulates
//! gradients additively, so a parameter registered once and used by several
//! operations (the shared decoder) receives the sum of all its contributions.
//!
//! Numerically sensitive reductions (softmax denominators, layer-norm
//! moments, log-sum-exp) accumulate in f64 before rounding back to f32
//! storage. Softmax, layer norm, and the loss carry analytic backward rules
//! instead of being composed from primitives.

use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("backward was already called on this tape")]
    BackwardTwice,
    #[error("backward requires a scalar loss node, got shape {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("class index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddRowBias { a: NodeId, bias: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f32 },
    Transpose { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f32 },
    Gelu { a: NodeId },
    ConcatRows { parts: Vec<NodeId> },
    SliceRows { a: NodeId, start: usize },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize },
    Sum { a: NodeId },
    CrossEntropyLs { logits: NodeId, target: usize, epsilon: f32 },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    op: Op,
}

/// Recorded forward computation supporting one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// C[m,n] += A[m,k] @ B[k,n]
fn matmul_nn(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// C[m,k] += G[m,n] @ B[k,n]^T
fn matmul_nt(g: &[f32], b: &[f32], c: &mut [f32], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0f32;
            for j in 0..n {
                acc += g_row[j] * b_row[j];
            }
            c[i * k + p] += acc;
        }
    }
}

/// C[k,n] += A[m,k]^T @ G[m,n]
fn matmul_tn(a: &[f32], g: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * g_row[j];
            }
        }
    }
}

/// Exact GELU: x * Phi(x) via the error function.
fn gelu_scalar(x: f32) -> f32 {
    let xd = x as f64;
    let phi = 0.5 * (1.0 + libm::erf(xd / std::f64::consts::SQRT_2));
    (xd * phi) as f32
}

/// d/dx of exact GELU: Phi(x) + x * pdf(x).
fn gelu_grad_scalar(x: f32) -> f32 {
    let xd = x as f64;
    let phi = 0.5 * (1.0 + libm::erf(xd / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * xd * xd).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (phi + xd * pdf) as f32
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f32>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Registers a tensor as a leaf node, copying its data in.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let (rows, cols) = t.as_matrix_dims();
        self.push(rows, cols, t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Leaf from raw parts; used for inputs that never need gradients.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f32>) -> NodeId {
        self.push(rows, cols, data, false, Op::Leaf)
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[f32] {
        &self.node(id).data
    }

    /// Gradient of the loss w.r.t. this node, available after `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.node(id).grad.as_deref()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(TensorError::MatmulShapes {
                left: vec![m, ka],
                right: vec![kb, n],
            }
            .into());
        }
        let mut data = vec![0.0f32; m * n];
        matmul_nn(self.value(a), self.value(b), &mut data, m, ka, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, data, rg, Op::Matmul { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (m, n) = self.shape(a);
        let (mb, nb) = self.shape(b);
        if (m, n) != (mb, nb) {
            return Err(TensorError::ShapeMismatch {
                expected: vec![m, n],
                actual: vec![mb, nb],
            }
            .into());
        }
        let data: Vec<f32> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, data, rg, Op::Add { a, b }))
    }

    /// Adds a 1xN bias row to every row of an MxN matrix.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TapeError> {
        let (m, n) = self.shape(a);
        let (mb, nb) = self.shape(bias);
        if mb != 1 || nb != n {
            return Err(TensorError::ShapeMismatch {
                expected: vec![1, n],
                actual: vec![mb, nb],
            }
            .into());
        }
        let bias_data = self.value(bias).to_vec();
        let mut data = self.value(a).to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(&bias_data) {
                *x += b;
            }
        }
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(m, n, data, rg, Op::AddRowBias { a, bias }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (m, n) = self.shape(a);
        let (mb, nb) = self.shape(b);
        if (m, n) != (mb, nb) {
            return Err(TensorError::ShapeMismatch {
                expected: vec![m, n],
                actual: vec![mb, nb],
            }
            .into());
        }
        let data: Vec<f32> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, data, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, factor: f32) -> NodeId {
        let (m, n) = self.shape(a);
        let data: Vec<f32> = self.value(a).iter().map(|x| x * factor).collect();
        let rg = self.requires(a);
        self.push(m, n, data, rg, Op::Scale { a, factor })
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let src = self.value(a);
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.requires(a);
        self.push(n, m, data, rg, Op::Transpose { a })
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let src = self.value(a);
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0.0f64;
            for j in 0..n {
                let e = ((row[j] - max) as f64).exp();
                data[i * n + j] = e as f32;
                denom += e;
            }
            let inv = (1.0 / denom) as f32;
            for j in 0..n {
                data[i * n + j] *= inv;
            }
        }
        let rg = self.requires(a);
        self.push(m, n, data, rg, Op::SoftmaxRows { a })
    }

    /// Per-row normalization to zero mean and unit variance (1/d variance,
    /// epsilon inside the square root), then affine scale and shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f32,
    ) -> Result<NodeId, TapeError> {
        let (m, d) = self.shape(x);
        for &(pr, pc) in &[self.shape(gamma), self.shape(beta)] {
            if (pr, pc) != (1, d) {
                return Err(TensorError::ShapeMismatch {
                    expected: vec![1, d],
                    actual: vec![pr, pc],
                }
                .into());
            }
        }
        let src = self.value(x);
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let mut data = vec![0.0f32; m * d];
        for i in 0..m {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let c = v as f64 - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let inv_std = 1.0 / (var + eps as f64).sqrt();
            for j in 0..d {
                let xhat = (row[j] as f64 - mean) * inv_std;
                data[i * d + j] = (xhat as f32) * g[j] + b[j];
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(m, d, data, rg, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Elementwise exact GELU, x * Phi(x) via erf.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let data: Vec<f32> = self.value(a).iter().map(|&x| gelu_scalar(x)).collect();
        let rg = self.requires(a);
        self.push(m, n, data, rg, Op::Gelu { a })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TapeError> {
        assert!(!parts.is_empty());
        let (_, cols) = self.shape(parts[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != cols {
                return Err(TensorError::ShapeMismatch {
                    expected: vec![pr, cols],
                    actual: vec![pr, pc],
                }
                .into());
            }
            rows += pr;
            data.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(rows, cols, data, rg, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        let (m, n) = self.shape(a);
        if start + len > m {
            return Err(TensorError::ShapeMismatch {
                expected: vec![m, n],
                actual: vec![start + len, n],
            }
            .into());
        }
        let data = self.value(a)[start * n..(start + len) * n].to_vec();
        let rg = self.requires(a);
        Ok(self.push(len, n, data, rg, Op::SliceRows { a, start }))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TapeError> {
        assert!(!parts.is_empty());
        let (rows, _) = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != rows {
                return Err(TensorError::ShapeMismatch {
                    expected: vec![rows, pc],
                    actual: vec![pr, pc],
                }
                .into());
            }
            cols += pc;
        }
        let mut data = vec![0.0f32; rows * cols];
        let mut offset = 0;
        for &p in parts {
            let (_, pc) = self.shape(p);
            let src = self.value(p);
            for i in 0..rows {
                data[i * cols + offset..i * cols + offset + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(rows, cols, data, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(TensorError::ShapeMismatch {
                expected: vec![m, n],
                actual: vec![m, start + len],
            }
            .into());
        }
        let src = self.value(a);
        let mut data = vec![0.0f32; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.requires(a);
        Ok(self.push(m, len, data, rg, Op::SliceCols { a, start }))
    }

    /// Sum of all elements, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).iter().map(|&v| v as f64).sum::<f64>() as f32;
        let rg = self.requires(a);
        self.push(1, 1, vec![total], rg, Op::Sum { a })
    }

    /// Label-smoothed cross entropy of a 1xK logits row against a class
    /// index: loss = logsumexp(z) - sum_k t_k z_k with
    /// t = (1-eps) * onehot(target) + eps/K.
    pub fn cross_entropy_label_smoothing(
        &mut self,
        logits: NodeId,
        target: usize,
        epsilon: f32,
    ) -> Result<NodeId, TapeError> {
        let (m, k) = self.shape(logits);
        if m != 1 {
            return Err(TensorError::ShapeMismatch {
                expected: vec![1, k],
                actual: vec![m, k],
            }
            .into());
        }
        if target >= k {
            return Err(TapeError::TargetOutOfRange { target, classes: k });
        }
        let z = self.value(logits);
        let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + z.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        let uniform = epsilon as f64 / k as f64;
        let mut dot = 0.0f64;
        for (j, &v) in z.iter().enumerate() {
            let t = if j == target {
                1.0 - epsilon as f64 + uniform
            } else {
                uniform
            };
            dot += t * v as f64;
        }
        let loss = (lse - dot) as f32;
        let rg = self.requires(logits);
        Ok(self.push(
            1,
            1,
            vec![loss],
            rg,
            Op::CrossEntropyLs { logits, target, epsilon },
        ))
    }

    fn add_to_grad(&mut self, id: NodeId, delta: &[f32]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let len = self.nodes[id.0].data.len();
        let grad = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Runs one reverse pass from a scalar loss node, accumulating d(loss)/d(node)
    /// into every node on a gradient-carrying path. Errors if called twice.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TapeError> {
        if self.consumed {
            return Err(TapeError::BackwardTwice);
        }
        let (lr, lc) = self.shape(loss);
        if (lr, lc) != (1, 1) {
            return Err(TapeError::LossNotScalar { rows: lr, cols: lc });
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = self.shape(a);
                    let (_, n) = self.shape(b);
                    if self.requires(a) {
                        let mut da = vec![0.0f32; m * k];
                        matmul_nt(&grad, self.value(b), &mut da, m, n, k);
                        self.add_to_grad(a, &da);
                    }
                    if self.requires(b) {
                        let mut db = vec![0.0f32; k * n];
                        matmul_tn(self.value(a), &grad, &mut db, m, k, n);
                        self.add_to_grad(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    self.add_to_grad(a, &grad);
                    self.add_to_grad(b, &grad);
                }
                Op::AddRowBias { a, bias } => {
                    self.add_to_grad(a, &grad);
                    if self.requires(bias) {
                        let n = cols;
                        let mut db = vec![0.0f32; n];
                        for row in grad.chunks(n) {
                            for (g, v) in db.iter_mut().zip(row) {
                                *g += v;
                            }
                        }
                        self.add_to_grad(bias, &db);
                    }
                }
                Op::Mul { a, b } => {
                    if self.requires(a) {
                        let da: Vec<f32> =
                            grad.iter().zip(self.value(b)).map(|(g, y)| g * y).collect();
                        self.add_to_grad(a, &da);
                    }
                    if self.requires(b) {
                        let db: Vec<f32> =
                            grad.iter().zip(self.value(a)).map(|(g, x)| g * x).collect();
                        self.add_to_grad(b, &db);
                    }
                }
                Op::Scale { a, factor } => {
                    let da: Vec<f32> = grad.iter().map(|g| g * factor).collect();
                    self.add_to_grad(a, &da);
                }
                Op::Transpose { a } => {
                    let mut da = vec![0.0f32; rows * cols];
                    for i2 in 0..rows {
                        for j in 0..cols {
                            da[j * rows + i2] = grad[i2 * cols + j];
                        }
                    }
                    self.add_to_grad(a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let out = &self.nodes[i].data;
                    let mut da = vec![0.0f32; rows * cols];
                    for r in 0..rows {
                        let s = &out[r * cols..(r + 1) * cols];
                        let g = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = s
                            .iter()
                            .zip(g)
                            .map(|(&sv, &gv)| sv as f64 * gv as f64)
                            .sum();
                        for j in 0..cols {
                            da[r * cols + j] = (s[j] as f64 * (g[j] as f64 - dot)) as f32;
                        }
                    }
                    self.add_to_grad(a, &da);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = cols;
                    let src = self.value(x).to_vec();
                    let g_vals = self.value(gamma).to_vec();
                    let mut dx = vec![0.0f32; rows * d];
                    let mut dgamma = vec![0.0f32; d];
                    let mut dbeta = vec![0.0f32; d];
                    for r in 0..rows {
                        let row = &src[r * d..(r + 1) * d];
                        let g_row = &grad[r * d..(r + 1) * d];
                        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
                        let var = row
                            .iter()
                            .map(|&v| {
                                let c = v as f64 - mean;
                                c * c
                            })
                            .sum::<f64>()
                            / d as f64;
                        let inv_std = 1.0 / (var + eps as f64).sqrt();
                        let xhat: Vec<f64> =
                            row.iter().map(|&v| (v as f64 - mean) * inv_std).collect();
                        let dxhat: Vec<f64> = g_row
                            .iter()
                            .zip(&g_vals)
                            .map(|(&g, &gm)| g as f64 * gm as f64)
                            .collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a2, b2)| a2 * b2).sum();
                        let df = d as f64;
                        for j in 0..d {
                            dgamma[j] += (g_row[j] as f64 * xhat[j]) as f32;
                            dbeta[j] += g_row[j];
                            dx[r * d + j] += (inv_std / df
                                * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat))
                                as f32;
                        }
                    }
                    self.add_to_grad(x, &dx);
                    self.add_to_grad(gamma, &dgamma);
                    self.add_to_grad(beta, &dbeta);
                }
                Op::Gelu { a } => {
                    let da: Vec<f32> = grad
                        .iter()
                        .zip(self.value(a))
                        .map(|(g, &x)| g * gelu_grad_scalar(x))
                        .collect();
                    self.add_to_grad(a, &da);
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let (pr, pc) = self.shape(p);
                        let slice = grad[offset..offset + pr * pc].to_vec();
                        self.add_to_grad(p, &slice);
                        offset += pr * pc;
                    }
                }
                Op::SliceRows { a, start } => {
                    let (am, an) = self.shape(a);
                    let mut da = vec![0.0f32; am * an];
                    da[start * an..start * an + rows * cols].copy_from_slice(&grad);
                    self.add_to_grad(a, &da);
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let (pr, pc) = self.shape(p);
                        let mut dp = vec![0.0f32; pr * pc];
                        for r in 0..pr {
                            dp[r * pc..(r + 1) * pc]
                                .copy_from_slice(&grad[r * cols + offset..r * cols + offset + pc]);
                        }
                        self.add_to_grad(p, &dp);
                        offset += pc;
                    }
                }
                Op::SliceCols { a, start } => {
                    let (am, an) = self.shape(a);
                    let mut da = vec![0.0f32; am * an];
                    for r in 0..rows {
                        da[r * an + start..r * an + start + cols]
                            .copy_from_slice(&grad[r * cols..(r + 1) * cols]);
                    }
                    self.add_to_grad(a, &da);
                }
                Op::Sum { a } => {
                    let (am, an) = self.shape(a);
                    let da = vec![grad[0]; am * an];
                    self.add_to_grad(a, &da);
                }
                Op::CrossEntropyLs { logits, target, epsilon } => {
                    let z = self.value(logits);
                    let k = z.len();
                    let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                    let denom: f64 = z.iter().map(|&v| (v as f64 - max).exp()).sum();
                    let uniform = epsilon as f64 / k as f64;
                    let g = grad[0] as f64;
                    let dz: Vec<f32> = z
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            let p = (v as f64 - max).exp() / denom;
                            let t = if j == target {
                                1.0 - epsilon as f64 + uniform
                            } else {
                                uniform
                            };
                            (g * (p - t)) as f32
                        })
                        .collect();
                    self.add_to_grad(logits, &dz);
                }
            }
        }
        Ok(())
    }
}
