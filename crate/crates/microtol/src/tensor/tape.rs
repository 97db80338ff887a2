//! Tape-based reverse-mode differentiation.
//!
//! Ops compute forward values eagerly and record themselves on the tape;
//! [`Var::backward`] walks the tape in reverse, accumulating gradients into
//! every node that needs them. A tape is confined to one thread.

use std::cell::RefCell;
use std::rc::Rc;

use super::{Tensor, TensorError};

const L2_DEGENERATE: f32 = 1e-8;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    MulScalar { a: usize, c: f32 },
    Matmul { a: usize, b: usize },
    Relu { a: usize },
    Gelu { a: usize },
    LayerNorm { a: usize, gamma: usize, beta: usize, eps: f32 },
    Softmax { a: usize },
    LogSoftmax { a: usize },
    Log { a: usize },
    Exp { a: usize },
    Mean { a: usize },
    Sum { a: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    L2Normalize { a: usize, axis: usize },
    Permute { a: usize, perm: Vec<usize> },
    Reshape { a: usize },
    Embedding { table: usize, ids: Vec<usize> },
    TakePositions { a: usize, positions: Vec<usize> },
    PickClass { a: usize, classes: Vec<usize> },
    ClampMax { a: usize, max: f32 },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    ran_backward: bool,
}

/// A reverse-mode computation tape.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    inner: Rc<RefCell<TapeInner>>,
    id: usize,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            needs_grad: requires_grad,
            op: Op::Leaf,
        });
        Var {
            inner: Rc::clone(&self.inner),
            id,
        }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// outer x mid x inner decomposition around `axis`.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

/// C[m,n] += A[m,k] @ B[k,n]
fn matmul_2d_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn permute_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&p| shape[p]).collect()
}

fn permute_data(data: &[f32], shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let out_shape = permute_shape(shape, perm);
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let mut out = vec![0.0; data.len()];
    // Walk input linearly; scatter into the permuted position.
    let mut idx = vec![0usize; shape.len()];
    for (lin, &v) in data.iter().enumerate() {
        let mut rem = lin;
        for (d, &s) in in_strides.iter().enumerate() {
            idx[d] = rem / s;
            rem %= s;
        }
        let mut off = 0;
        for (d, &p) in perm.iter().enumerate() {
            off += idx[p] * out_strides[d];
        }
        out[off] = v;
    }
    out
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn gelu_scalar(x: f32) -> f32 {
    // tanh approximation
    const C: f32 = 0.797_884_56;
    const A: f32 = 0.044_715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f32) -> f32 {
    const C: f32 = 0.797_884_56;
    const A: f32 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.inner.borrow().nodes[self.id].value.clone()
    }

    /// Gradient accumulated by the last [`Var::backward`] run. Zero-filled
    /// for nodes the output does not depend on.
    pub fn grad(&self) -> Result<Tensor, TensorError> {
        let inner = self.inner.borrow();
        if !inner.ran_backward {
            return Err(TensorError::BackwardNotRun);
        }
        let node = &inner.nodes[self.id];
        let data = node
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Tensor::new(node.value.shape().to_vec(), data)
    }

    fn same_tape(&self, other: &Var) -> Result<(), TensorError> {
        if Rc::ptr_eq(&self.inner, &other.inner) {
            Ok(())
        } else {
            Err(TensorError::DifferentTapes)
        }
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var {
            inner: Rc::clone(&self.inner),
            id,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].needs_grad)
    }

    /// Elementwise sum. `rhs` may also be a trailing-shape broadcast: its
    /// shape must equal a suffix of `self`'s shape.
    pub fn add(&self, rhs: &Var) -> Result<Var, TensorError> {
        self.same_tape(rhs)?;
        let (va, vb) = (self.value(), rhs.value());
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let suffix_ok = sa.len() >= sb.len() && sa[sa.len() - sb.len()..] == sb[..];
        if !suffix_ok {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(vb.numel()) {
            for (d, &b) in chunk.iter_mut().zip(vb.data()) {
                *d += b;
            }
        }
        let value = Tensor::new(sa, data).expect("add keeps lhs shape");
        let needs = self.needs(&[self.id, rhs.id]);
        Ok(self.push(
            value,
            Op::Add {
                a: self.id,
                b: rhs.id,
            },
            needs,
        ))
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var, TensorError> {
        self.add(&rhs.mul_scalar(-1.0))
    }

    /// Elementwise product; `rhs` may be a `[1]` scalar.
    pub fn mul(&self, rhs: &Var) -> Result<Var, TensorError> {
        self.same_tape(rhs)?;
        let (va, vb) = (self.value(), rhs.value());
        if vb.numel() != 1 && va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data: Vec<f32> = if vb.numel() == 1 {
            let c = vb.data()[0];
            va.data().iter().map(|x| x * c).collect()
        } else {
            va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect()
        };
        let value = Tensor::new(va.shape().to_vec(), data).expect("mul keeps shape");
        let needs = self.needs(&[self.id, rhs.id]);
        Ok(self.push(
            value,
            Op::Mul {
                a: self.id,
                b: rhs.id,
            },
            needs,
        ))
    }

    pub fn mul_scalar(&self, c: f32) -> Var {
        let va = self.value();
        let data: Vec<f32> = va.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::MulScalar { a: self.id, c }, needs)
    }

    /// Batched matrix product: `[..., m, k] @ [..., k, n] -> [..., m, n]`
    /// with identical leading dimensions, or a 2-D right-hand side
    /// broadcast over the left's batch dimensions.
    pub fn matmul(&self, rhs: &Var) -> Result<Var, TensorError> {
        self.same_tape(rhs)?;
        let (va, vb) = (self.value(), rhs.value());
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let broadcast_rhs = sb.len() == 2 && sa.len() > 2;
        if !broadcast_rhs && (sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let b_stride = if broadcast_rhs { 0 } else { k * n };
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            matmul_2d_acc(
                &va.data()[bi * m * k..(bi + 1) * m * k],
                &vb.data()[bi * b_stride..bi * b_stride + k * n],
                m,
                k,
                n,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let value = Tensor::new(out_shape, out).expect("matmul shape");
        let needs = self.needs(&[self.id, rhs.id]);
        Ok(self.push(
            value,
            Op::Matmul {
                a: self.id,
                b: rhs.id,
            },
            needs,
        ))
    }

    pub fn relu(&self) -> Var {
        let va = self.value();
        let data: Vec<f32> = va.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::Relu { a: self.id }, needs)
    }

    pub fn gelu(&self) -> Var {
        let va = self.value();
        let data: Vec<f32> = va.data().iter().map(|&x| gelu_scalar(x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::Gelu { a: self.id }, needs)
    }

    /// Normalizes the last axis to zero mean, unit variance, then applies
    /// the learned scale and shift (both shaped `[last]`).
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f32) -> Result<Var, TensorError> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let va = self.value();
        let n = *va.shape().last().ok_or_else(|| TensorError::InvalidShape {
            op: "layer_norm",
            shape: vec![],
            message: "rank 0 input".into(),
        })?;
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: va.shape().to_vec(),
                rhs: gamma.shape(),
            });
        }
        let (g, b) = (gamma.value(), beta.value());
        let mut data = vec![0.0; va.numel()];
        for (row_out, row) in data.chunks_mut(n).zip(va.data().chunks(n)) {
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n as f32;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                row_out[j] = (row[j] - mean) * inv * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id, gamma.id, beta.id]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                a: self.id,
                gamma: gamma.id,
                beta: beta.id,
                eps,
            },
            needs,
        ))
    }

    pub fn softmax(&self) -> Var {
        let va = self.value();
        let n = *va.shape().last().expect("softmax input has rank >= 1");
        let mut data = vec![0.0; va.numel()];
        for (row_out, row) in data.chunks_mut(n).zip(va.data().chunks(n)) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                row_out[j] = e;
                sum += e;
            }
            for v in row_out.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::Softmax { a: self.id }, needs)
    }

    pub fn log_softmax(&self) -> Var {
        let va = self.value();
        let n = *va.shape().last().expect("log_softmax input has rank >= 1");
        let mut data = vec![0.0; va.numel()];
        for (row_out, row) in data.chunks_mut(n).zip(va.data().chunks(n)) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f32>().ln() + max;
            for j in 0..n {
                row_out[j] = row[j] - lse;
            }
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::LogSoftmax { a: self.id }, needs)
    }

    pub fn log(&self) -> Var {
        let va = self.value();
        let data: Vec<f32> = va.data().iter().map(|x| x.ln()).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::Log { a: self.id }, needs)
    }

    pub fn exp(&self) -> Var {
        let va = self.value();
        let data: Vec<f32> = va.data().iter().map(|x| x.exp()).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::Exp { a: self.id }, needs)
    }

    /// Full reduction to a `[1]` scalar.
    pub fn mean(&self) -> Var {
        let va = self.value();
        let m = va.data().iter().sum::<f32>() / va.numel() as f32;
        let needs = self.needs(&[self.id]);
        self.push(Tensor::scalar(m), Op::Mean { a: self.id }, needs)
    }

    pub fn sum(&self) -> Var {
        let va = self.value();
        let s = va.data().iter().sum::<f32>();
        let needs = self.needs(&[self.id]);
        self.push(Tensor::scalar(s), Op::Sum { a: self.id }, needs)
    }

    pub fn concat(parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat",
            shape: vec![],
            message: "no inputs".into(),
        })?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: base,
                message: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0;
        for p in parts {
            first.same_tape(p)?;
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s,
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = around_axis(&out_shape, axis);
        let mut data = vec![0.0; out_shape.iter().product()];
        let mut offset = 0;
        for p in parts {
            let v = p.value();
            let mid = v.shape()[axis];
            for o in 0..outer {
                let src = &v.data()[o * mid * inner..(o + 1) * mid * inner];
                let dst_start = o * axis_total * inner + offset * inner;
                data[dst_start..dst_start + mid * inner].copy_from_slice(src);
            }
            offset += mid;
        }
        let value = Tensor::new(out_shape, data).expect("concat shape");
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = first.needs(&ids);
        Ok(first.push(
            value,
            Op::Concat {
                parts: ids,
                axis,
            },
            needs,
        ))
    }

    /// Contiguous range along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let va = self.value();
        let shape = va.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape,
                message: format!("range {start}..{} on axis {axis}", start + len),
            });
        }
        let (outer, mid, inner) = around_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = &va.data()[(o * mid + start) * inner..(o * mid + start + len) * inner];
            data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        let value = Tensor::new(out_shape, data).expect("slice shape");
        let needs = self.needs(&[self.id]);
        Ok(self.push(
            value,
            Op::Slice {
                a: self.id,
                axis,
                start,
            },
            needs,
        ))
    }

    /// Scales vectors along `axis` to unit Euclidean norm. Vectors with
    /// norm at most 1e-8 become zero, with zero gradient.
    pub fn l2_normalize(&self, axis: usize) -> Result<Var, TensorError> {
        let va = self.value();
        let shape = va.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidShape {
                op: "l2_normalize",
                shape,
                message: format!("axis {axis} out of range"),
            });
        }
        let (outer, mid, inner) = around_axis(&shape, axis);
        let mut data = va.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * mid * inner + i;
                let mut sq = 0.0;
                for j in 0..mid {
                    let v = data[base + j * inner];
                    sq += v * v;
                }
                let norm = sq.sqrt();
                let scale = if norm <= L2_DEGENERATE { 0.0 } else { 1.0 / norm };
                for j in 0..mid {
                    data[base + j * inner] *= scale;
                }
            }
        }
        let value = Tensor::new(shape, data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        Ok(self.push(
            value,
            Op::L2Normalize {
                a: self.id,
                axis,
            },
            needs,
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var, TensorError> {
        let va = self.value();
        let shape = va.shape().to_vec();
        let mut check: Vec<usize> = perm.to_vec();
        check.sort_unstable();
        if check != (0..shape.len()).collect::<Vec<_>>() {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape,
                message: format!("{perm:?} is not a permutation"),
            });
        }
        let data = permute_data(va.data(), &shape, perm);
        let value = Tensor::new(permute_shape(&shape, perm), data).expect("permute shape");
        let needs = self.needs(&[self.id]);
        Ok(self.push(
            value,
            Op::Permute {
                a: self.id,
                perm: perm.to_vec(),
            },
            needs,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var, TensorError> {
        let va = self.value();
        if shape.iter().product::<usize>() != va.numel() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                message: format!("element count differs from {:?}", va.shape()),
            });
        }
        let value = Tensor::new(shape.to_vec(), va.data().to_vec()).expect("reshape");
        let needs = self.needs(&[self.id]);
        Ok(self.push(value, Op::Reshape { a: self.id }, needs))
    }

    /// Row lookup into a `[V, D]` table; gradients scatter-add by id.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var, TensorError> {
        let va = self.value();
        let shape = va.shape().to_vec();
        if shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "embedding",
                shape,
                message: "table must be 2-D".into(),
            });
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::InvalidShape {
                op: "embedding",
                shape,
                message: format!("id {bad} exceeds vocabulary size {v}"),
            });
        }
        let mut data = vec![0.0; ids.len() * d];
        for (row, &id) in ids.iter().enumerate() {
            data[row * d..(row + 1) * d].copy_from_slice(&va.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], data).expect("embedding shape");
        let needs = self.needs(&[self.id]);
        Ok(self.push(
            value,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Per-row gather along axis 1: `[B, S, rest..]` with one position per
    /// row gives `[B, rest..]`.
    pub fn take_positions(&self, positions: &[usize]) -> Result<Var, TensorError> {
        let va = self.value();
        let shape = va.shape().to_vec();
        if shape.len() < 2 || positions.len() != shape[0] {
            return Err(TensorError::InvalidShape {
                op: "take_positions",
                shape,
                message: "expected [B, S, ..] input and one position per row".into(),
            });
        }
        let (b, s) = (shape[0], shape[1]);
        if let Some(&bad) = positions.iter().find(|&&p| p >= s) {
            return Err(TensorError::InvalidShape {
                op: "take_positions",
                shape,
                message: format!("position {bad} exceeds sequence length {s}"),
            });
        }
        let rest: usize = shape[2..].iter().product();
        let mut data = vec![0.0; b * rest];
        for (row, &p) in positions.iter().enumerate() {
            let src = (row * s + p) * rest;
            data[row * rest..(row + 1) * rest].copy_from_slice(&va.data()[src..src + rest]);
        }
        let mut out_shape = vec![b];
        out_shape.extend(&shape[2..]);
        let value = Tensor::new(out_shape, data).expect("take_positions shape");
        let needs = self.needs(&[self.id]);
        Ok(self.push(
            value,
            Op::TakePositions {
                a: self.id,
                positions: positions.to_vec(),
            },
            needs,
        ))
    }

    /// Picks one class entry per row of a `[N, C]` matrix, giving `[N]`.
    pub fn pick_class(&self, classes: &[usize]) -> Result<Var, TensorError> {
        let va = self.value();
        let shape = va.shape().to_vec();
        if shape.len() != 2 || classes.len() != shape[0] {
            return Err(TensorError::InvalidShape {
                op: "pick_class",
                shape,
                message: "expected [N, C] input and one class per row".into(),
            });
        }
        let c = shape[1];
        if let Some(&bad) = classes.iter().find(|&&i| i >= c) {
            return Err(TensorError::InvalidShape {
                op: "pick_class",
                shape,
                message: format!("class {bad} exceeds width {c}"),
            });
        }
        let data: Vec<f32> = classes
            .iter()
            .enumerate()
            .map(|(row, &cls)| va.data()[row * c + cls])
            .collect();
        let value = Tensor::new(vec![classes.len()], data).expect("pick shape");
        let needs = self.needs(&[self.id]);
        Ok(self.push(
            value,
            Op::PickClass {
                a: self.id,
                classes: classes.to_vec(),
            },
            needs,
        ))
    }

    /// Elementwise `min(x, max)`. The gradient passes only where `x < max`.
    pub fn clamp_max(&self, max: f32) -> Var {
        let va = self.value();
        let data: Vec<f32> = va.data().iter().map(|&x| x.min(max)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape kept");
        let needs = self.needs(&[self.id]);
        self.push(value, Op::ClampMax { a: self.id, max }, needs)
    }

    /// Reverse pass from a `[1]` scalar. May run once per tape.
    pub fn backward(&self) -> Result<(), TensorError> {
        let mut inner = self.inner.borrow_mut();
        if inner.nodes[self.id].value.numel() != 1 {
            return Err(TensorError::NotScalar(
                inner.nodes[self.id].value.shape().to_vec(),
            ));
        }
        // Allocate grads for every node that needs them.
        for node in inner.nodes.iter_mut() {
            if node.needs_grad {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        if let Some(g) = inner.nodes[self.id].grad.as_mut() {
            g[0] = 1.0;
        }
        for id in (0..=self.id).rev() {
            backprop_node(&mut inner, id);
        }
        inner.ran_backward = true;
        Ok(())
    }
}

/// Pulls the node's output gradient and pushes it into its inputs.
fn backprop_node(inner: &mut TapeInner, id: usize) {
    if !inner.nodes[id].needs_grad {
        return;
    }
    let g = match inner.nodes[id].grad.clone() {
        Some(g) => g,
        None => return,
    };
    let op = inner.nodes[id].op.clone();
    let out_value = |inner: &TapeInner| inner.nodes[id].value.clone();

    match op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            let nb = inner.nodes[a].value.numel();
            let _ = nb;
            if inner.nodes[a].needs_grad {
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for (x, &y) in ga.iter_mut().zip(&g) {
                    *x += y;
                }
            }
            if inner.nodes[b].needs_grad {
                let bn = inner.nodes[b].value.numel();
                let gb = inner.nodes[b].grad.as_mut().expect("allocated");
                for chunk in g.chunks(bn) {
                    for (x, &y) in gb.iter_mut().zip(chunk) {
                        *x += y;
                    }
                }
            }
        }
        Op::Mul { a, b } => {
            let va = inner.nodes[a].value.data().to_vec();
            let vb = inner.nodes[b].value.data().to_vec();
            if inner.nodes[a].needs_grad {
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                if vb.len() == 1 {
                    for (x, &y) in ga.iter_mut().zip(&g) {
                        *x += y * vb[0];
                    }
                } else {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * vb[i];
                    }
                }
            }
            if inner.nodes[b].needs_grad {
                let gb = inner.nodes[b].grad.as_mut().expect("allocated");
                if vb.len() == 1 {
                    gb[0] += g.iter().zip(&va).map(|(x, y)| x * y).sum::<f32>();
                } else {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * va[i];
                    }
                }
            }
        }
        Op::MulScalar { a, c } => {
            if inner.nodes[a].needs_grad {
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for (x, &y) in ga.iter_mut().zip(&g) {
                    *x += y * c;
                }
            }
        }
        Op::Matmul { a, b } => {
            let sa = inner.nodes[a].value.shape().to_vec();
            let sb = inner.nodes[b].value.shape().to_vec();
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = sb[sb.len() - 1];
            let batch: usize = sa[..sa.len() - 2].iter().product();
            let b_stride = if sb.len() == 2 && sa.len() > 2 { 0 } else { k * n };
            let va = inner.nodes[a].value.data().to_vec();
            let vb = inner.nodes[b].value.data().to_vec();
            if inner.nodes[a].needs_grad {
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for bi in 0..batch {
                    let gb_ = &g[bi * m * n..(bi + 1) * m * n];
                    let bb = &vb[bi * b_stride..bi * b_stride + k * n];
                    let gab = &mut ga[bi * m * k..(bi + 1) * m * k];
                    // dA[i,p] += dot(g[i,:], B[p,:])
                    for i in 0..m {
                        let grow = &gb_[i * n..(i + 1) * n];
                        for p in 0..k {
                            gab[i * k + p] += dot(grow, &bb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            if inner.nodes[b].needs_grad {
                let gbuf = inner.nodes[b].grad.as_mut().expect("allocated");
                for bi in 0..batch {
                    let gb_ = &g[bi * m * n..(bi + 1) * m * n];
                    let ab = &va[bi * m * k..(bi + 1) * m * k];
                    let gbb = &mut gbuf[bi * b_stride..bi * b_stride + k * n];
                    // dB[p,:] += A[i,p] * g[i,:]
                    for i in 0..m {
                        let grow = &gb_[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ab[i * k + p];
                            if aip != 0.0 {
                                for (x, &y) in gbb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *x += aip * y;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::Relu { a } => {
            if inner.nodes[a].needs_grad {
                let va = inner.nodes[a].value.data().to_vec();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for i in 0..ga.len() {
                    if va[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
        }
        Op::Gelu { a } => {
            if inner.nodes[a].needs_grad {
                let va = inner.nodes[a].value.data().to_vec();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for i in 0..ga.len() {
                    ga[i] += g[i] * gelu_grad_scalar(va[i]);
                }
            }
        }
        Op::LayerNorm { a, gamma, beta, eps } => {
            let va = inner.nodes[a].value.data().to_vec();
            let vg = inner.nodes[gamma].value.data().to_vec();
            let n = vg.len();
            let rows = va.len() / n;
            // Recompute per-row statistics.
            for r in 0..rows {
                let row = &va[r * n..(r + 1) * n];
                let grow = &g[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f32>() / n as f32;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n as f32;
                let inv = 1.0 / (var + eps).sqrt();
                let xhat: Vec<f32> = row.iter().map(|x| (x - mean) * inv).collect();
                if inner.nodes[beta].needs_grad {
                    let gb = inner.nodes[beta].grad.as_mut().expect("allocated");
                    for j in 0..n {
                        gb[j] += grow[j];
                    }
                }
                if inner.nodes[gamma].needs_grad {
                    let gg = inner.nodes[gamma].grad.as_mut().expect("allocated");
                    for j in 0..n {
                        gg[j] += grow[j] * xhat[j];
                    }
                }
                if inner.nodes[a].needs_grad {
                    let h: Vec<f32> = (0..n).map(|j| grow[j] * vg[j]).collect();
                    let mean_h = h.iter().sum::<f32>() / n as f32;
                    let mean_hx = h.iter().zip(&xhat).map(|(x, y)| x * y).sum::<f32>() / n as f32;
                    let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                    for j in 0..n {
                        ga[r * n + j] += (h[j] - mean_h - xhat[j] * mean_hx) * inv;
                    }
                }
            }
        }
        Op::Softmax { a } => {
            if inner.nodes[a].needs_grad {
                let y = out_value(inner);
                let n = *y.shape().last().expect("rank >= 1");
                let ydata = y.data().to_vec();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for r in 0..ydata.len() / n {
                    let yrow = &ydata[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let dot_gy: f32 = yrow.iter().zip(grow).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        ga[r * n + j] += yrow[j] * (grow[j] - dot_gy);
                    }
                }
            }
        }
        Op::LogSoftmax { a } => {
            if inner.nodes[a].needs_grad {
                let y = out_value(inner);
                let n = *y.shape().last().expect("rank >= 1");
                let ydata = y.data().to_vec();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for r in 0..ydata.len() / n {
                    let grow = &g[r * n..(r + 1) * n];
                    let gsum: f32 = grow.iter().sum();
                    for j in 0..n {
                        let p = ydata[r * n + j].exp();
                        ga[r * n + j] += grow[j] - p * gsum;
                    }
                }
            }
        }
        Op::Log { a } => {
            if inner.nodes[a].needs_grad {
                let va = inner.nodes[a].value.data().to_vec();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for i in 0..ga.len() {
                    ga[i] += g[i] / va[i];
                }
            }
        }
        Op::Exp { a } => {
            if inner.nodes[a].needs_grad {
                let y = out_value(inner);
                let ydata = y.data();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for i in 0..ga.len() {
                    ga[i] += g[i] * ydata[i];
                }
            }
        }
        Op::Mean { a } => {
            if inner.nodes[a].needs_grad {
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                let scale = g[0] / ga.len() as f32;
                for x in ga.iter_mut() {
                    *x += scale;
                }
            }
        }
        Op::Sum { a } => {
            if inner.nodes[a].needs_grad {
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
        }
        Op::Concat { parts, axis } => {
            let out_shape = inner.nodes[id].value.shape().to_vec();
            let (outer, total_mid, innr) = around_axis(&out_shape, axis);
            let mut offset = 0;
            for pid in parts {
                let mid = inner.nodes[pid].value.shape()[axis];
                if inner.nodes[pid].needs_grad {
                    let gp = inner.nodes[pid].grad.as_mut().expect("allocated");
                    for o in 0..outer {
                        let src_start = o * total_mid * innr + offset * innr;
                        let dst = &mut gp[o * mid * innr..(o + 1) * mid * innr];
                        for (x, &y) in dst.iter_mut().zip(&g[src_start..src_start + mid * innr]) {
                            *x += y;
                        }
                    }
                }
                offset += mid;
            }
        }
        Op::Slice { a, axis, start } => {
            if inner.nodes[a].needs_grad {
                let in_shape = inner.nodes[a].value.shape().to_vec();
                let out_shape = inner.nodes[id].value.shape().to_vec();
                let (outer, mid, innr) = around_axis(&in_shape, axis);
                let len = out_shape[axis];
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for o in 0..outer {
                    let dst = &mut ga[(o * mid + start) * innr..(o * mid + start + len) * innr];
                    for (x, &y) in dst.iter_mut().zip(&g[o * len * innr..(o + 1) * len * innr]) {
                        *x += y;
                    }
                }
            }
        }
        Op::L2Normalize { a, axis } => {
            if inner.nodes[a].needs_grad {
                let va = inner.nodes[a].value.data().to_vec();
                let shape = inner.nodes[a].value.shape().to_vec();
                let (outer, mid, innr) = around_axis(&shape, axis);
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for o in 0..outer {
                    for i in 0..innr {
                        let base = o * mid * innr + i;
                        let mut sq = 0.0;
                        for j in 0..mid {
                            let v = va[base + j * innr];
                            sq += v * v;
                        }
                        let norm = sq.sqrt();
                        if norm <= L2_DEGENERATE {
                            continue; // zero output, zero gradient
                        }
                        let mut vdotg = 0.0;
                        for j in 0..mid {
                            vdotg += va[base + j * innr] * g[base + j * innr];
                        }
                        let n3 = norm * norm * norm;
                        for j in 0..mid {
                            ga[base + j * innr] +=
                                g[base + j * innr] / norm - va[base + j * innr] * vdotg / n3;
                        }
                    }
                }
            }
        }
        Op::Permute { a, perm } => {
            if inner.nodes[a].needs_grad {
                let out_shape = inner.nodes[id].value.shape().to_vec();
                let back = permute_data(&g, &out_shape, &invert_perm(&perm));
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for (x, &y) in ga.iter_mut().zip(&back) {
                    *x += y;
                }
            }
        }
        Op::Reshape { a } => {
            if inner.nodes[a].needs_grad {
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for (x, &y) in ga.iter_mut().zip(&g) {
                    *x += y;
                }
            }
        }
        Op::Embedding { table, ids } => {
            if inner.nodes[table].needs_grad {
                let d = inner.nodes[table].value.shape()[1];
                let gt = inner.nodes[table].grad.as_mut().expect("allocated");
                for (row, &tid) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[tid * d + j] += g[row * d + j];
                    }
                }
            }
        }
        Op::TakePositions { a, positions } => {
            if inner.nodes[a].needs_grad {
                let shape = inner.nodes[a].value.shape().to_vec();
                let s = shape[1];
                let rest: usize = shape[2..].iter().product();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for (row, &p) in positions.iter().enumerate() {
                    let dst = (row * s + p) * rest;
                    for j in 0..rest {
                        ga[dst + j] += g[row * rest + j];
                    }
                }
            }
        }
        Op::PickClass { a, classes } => {
            if inner.nodes[a].needs_grad {
                let c = inner.nodes[a].value.shape()[1];
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for (row, &cls) in classes.iter().enumerate() {
                    ga[row * c + cls] += g[row];
                }
            }
        }
        Op::ClampMax { a, max } => {
            if inner.nodes[a].needs_grad {
                let va = inner.nodes[a].value.data().to_vec();
                let ga = inner.nodes[a].grad.as_mut().expect("allocated");
                for i in 0..ga.len() {
                    if va[i] < max {
                        ga[i] += g[i];
                    }
                }
            }
        }
    }
}
