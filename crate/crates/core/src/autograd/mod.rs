//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Operations are recorded on an append-only [`ComputationRecord`]; a single
//! [`backward`](ComputationRecord::backward) pass over the record yields the
//! gradient of a scalar loss with respect to every recorded node. The
//! primitive set is deliberately small and fully enumerated so that every
//! gradient can be audited against finite differences.

mod gradcheck;
mod tensor;

pub use gradcheck::{grad_check, CheckReport};
pub use tensor::{NodeRef, Tensor};

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg;

static NEXT_RECORD_ID: AtomicU64 = AtomicU64::new(1);

/// The recordable primitives. Each has an exact analytic gradient implemented
/// in [`ComputationRecord::backward`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrimitiveKind {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// `[b,d] + [d] -> [b,d]`, the only broadcast in the primitive set
    AddBias,
    /// elementwise `max(0, x)`; gradient at exactly 0 is 0
    Relu,
    /// row (`axis=1`) or column (`axis=0`) softmax of a matrix, computed with
    /// max-subtraction
    Softmax { axis: usize },
    /// elementwise natural log; inputs must be strictly positive
    Log,
    /// elementwise absolute value; gradient at exactly 0 is 0
    Abs,
    /// elementwise negation
    Neg,
    /// elementwise `a - b`, equal shapes
    Sub,
    /// elementwise `a * b`, equal shapes
    Mul,
    /// mean over every entry, producing a `[1]` scalar
    MeanAll,
    /// sum a matrix along `axis`, producing a vector
    SumAxis { axis: usize },
    /// training-mode batch normalization of `[b,d]` with per-feature batch
    /// statistics; inputs are `(x, gamma, beta)` and the batch mean/var are
    /// retained on the node for the caller's running-stat update
    BatchNorm1d { eps: f64, momentum: f64 },
    /// per-row gather: `([b,k], [b] indices) -> [b]`
    IndexGather,
    /// identity forward, negated gradient; the boundary piece of the one-step
    /// adversarial update
    GradReverse,
}

enum Op {
    Leaf,
    Prim(PrimitiveKind),
}

enum Saved {
    None,
    Indices(Vec<usize>),
    BnStats {
        mean: Vec<f64>,
        var: Vec<f64>,
        inv_std: Vec<f64>,
        normalized: Vec<f64>,
    },
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    value: Vec<f64>,
    saved: Saved,
}

/// Append-only tape of forward operations, topologically ordered by
/// construction.
pub struct ComputationRecord {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for ComputationRecord {
    fn default() -> Self {
        Self::new()
    }
}

/// Apply one primitive to recorded inputs. Equivalent to
/// [`ComputationRecord::apply`].
pub fn apply_primitive(
    kind: PrimitiveKind,
    inputs: &[&Tensor],
    record: &mut ComputationRecord,
) -> Result<Tensor> {
    record.apply(kind, inputs)
}

impl ComputationRecord {
    pub fn new() -> Self {
        ComputationRecord {
            id: NEXT_RECORD_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a value as a leaf node. Gradients can later be looked up with
    /// the returned tensor.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        self.push(
            Op::Leaf,
            vec![],
            t.shape().to_vec(),
            t.data().to_vec(),
            Saved::None,
        )
    }

    fn push(
        &mut self,
        op: Op,
        inputs: Vec<usize>,
        shape: Vec<usize>,
        value: Vec<f64>,
        saved: Saved,
    ) -> Tensor {
        let id = self.nodes.len();
        let out = Tensor::with_node(
            shape.clone(),
            value.clone(),
            NodeRef {
                record: self.id,
                id,
            },
        );
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            value,
            saved,
        });
        out
    }

    fn member(&self, t: &Tensor) -> Result<usize> {
        match t.node {
            Some(NodeRef { record, id }) if record == self.id && id < self.nodes.len() => Ok(id),
            _ => Err(Error::StaleRecord),
        }
    }

    /// Batch statistics saved by a `BatchNorm1d` node, for updating running
    /// buffers. Returns `(mean, biased_var)` per feature.
    pub fn bn_batch_stats(&self, out: &Tensor) -> Result<(&[f64], &[f64])> {
        let id = self.member(out)?;
        match &self.nodes[id].saved {
            Saved::BnStats { mean, var, .. } => Ok((mean, var)),
            _ => Err(Error::DomainError {
                op: "bn_batch_stats",
                detail: "node is not a BatchNorm1d output".into(),
            }),
        }
    }

    pub fn apply(&mut self, kind: PrimitiveKind, inputs: &[&Tensor]) -> Result<Tensor> {
        let ids = inputs
            .iter()
            .map(|t| self.member(t))
            .collect::<Result<Vec<_>>>()?;

        let arity = match kind {
            PrimitiveKind::MatMul
            | PrimitiveKind::AddBias
            | PrimitiveKind::Sub
            | PrimitiveKind::Mul
            | PrimitiveKind::IndexGather => 2,
            PrimitiveKind::BatchNorm1d { .. } => 3,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::ShapeMismatch {
                op: kind_name(kind),
                detail: format!("expected {arity} inputs, got {}", inputs.len()),
            });
        }

        match kind {
            PrimitiveKind::MatMul => self.fwd_matmul(ids[0], ids[1]),
            PrimitiveKind::AddBias => self.fwd_add_bias(ids[0], ids[1]),
            PrimitiveKind::Relu => self.fwd_map(kind, ids[0], |x| x.max(0.0)),
            PrimitiveKind::Softmax { axis } => self.fwd_softmax(ids[0], axis),
            PrimitiveKind::Log => {
                if self.nodes[ids[0]].value.iter().any(|&v| v <= 0.0) {
                    return Err(Error::DomainError {
                        op: "Log",
                        detail: "input must be strictly positive".into(),
                    });
                }
                self.fwd_map(kind, ids[0], f64::ln)
            }
            PrimitiveKind::Abs => self.fwd_map(kind, ids[0], f64::abs),
            PrimitiveKind::Neg => self.fwd_map(kind, ids[0], |x| -x),
            PrimitiveKind::Sub => self.fwd_zip(kind, ids[0], ids[1], |a, b| a - b),
            PrimitiveKind::Mul => self.fwd_zip(kind, ids[0], ids[1], |a, b| a * b),
            PrimitiveKind::MeanAll => {
                let v = &self.nodes[ids[0]].value;
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                Ok(self.push(Op::Prim(kind), ids, vec![1], vec![mean], Saved::None))
            }
            PrimitiveKind::SumAxis { axis } => self.fwd_sum_axis(ids[0], axis),
            PrimitiveKind::BatchNorm1d { eps, .. } => {
                self.fwd_batch_norm(ids[0], ids[1], ids[2], eps)
            }
            PrimitiveKind::IndexGather => self.fwd_gather(ids[0], ids[1]),
            PrimitiveKind::GradReverse => {
                let value = self.nodes[ids[0]].value.clone();
                let shape = self.nodes[ids[0]].shape.clone();
                Ok(self.push(Op::Prim(kind), ids, shape, value, Saved::None))
            }
        }
    }

    fn fwd_map(&mut self, kind: PrimitiveKind, x: usize, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x].shape.clone();
        Ok(self.push(Op::Prim(kind), vec![x], shape, value, Saved::None))
    }

    fn fwd_zip(
        &mut self,
        kind: PrimitiveKind,
        a: usize,
        b: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::ShapeMismatch {
                op: kind_name(kind),
                detail: format!("{:?} vs {:?}", self.nodes[a].shape, self.nodes[b].shape),
            });
        }
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(Op::Prim(kind), vec![a, b], shape, value, Saved::None))
    }

    fn dims2(&self, id: usize, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[id].shape[..] {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::ShapeMismatch {
                op,
                detail: format!("expected a matrix, got shape {s:?}"),
            }),
        }
    }

    fn fwd_matmul(&mut self, a: usize, b: usize) -> Result<Tensor> {
        let (m, ka) = self.dims2(a, "MatMul")?;
        let (kb, n) = self.dims2(b, "MatMul")?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "MatMul",
                detail: format!("inner dims {ka} vs {kb}"),
            });
        }
        let value = linalg::matmul_nn(&self.nodes[a].value, &self.nodes[b].value, m, ka, n);
        Ok(self.push(
            Op::Prim(PrimitiveKind::MatMul),
            vec![a, b],
            vec![m, n],
            value,
            Saved::None,
        ))
    }

    fn fwd_add_bias(&mut self, x: usize, b: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2(x, "AddBias")?;
        if self.nodes[b].shape != [cols] {
            return Err(Error::ShapeMismatch {
                op: "AddBias",
                detail: format!(
                    "bias shape {:?} does not match row width {cols}",
                    self.nodes[b].shape
                ),
            });
        }
        let mut value = self.nodes[x].value.clone();
        for r in 0..rows {
            for (v, &bv) in value[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(&self.nodes[b].value)
            {
                *v += bv;
            }
        }
        Ok(self.push(
            Op::Prim(PrimitiveKind::AddBias),
            vec![x, b],
            vec![rows, cols],
            value,
            Saved::None,
        ))
    }

    fn fwd_softmax(&mut self, x: usize, axis: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2(x, "Softmax")?;
        if axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "Softmax",
                detail: format!("axis {axis} out of range for a matrix"),
            });
        }
        let v = &self.nodes[x].value;
        let mut out = vec![0.0; rows * cols];
        let (lanes, lane_len, stride, base) = if axis == 1 {
            (rows, cols, 1usize, cols)
        } else {
            (cols, rows, cols, 1usize)
        };
        for lane in 0..lanes {
            let start = lane * base;
            let mut max = f64::NEG_INFINITY;
            for i in 0..lane_len {
                max = max.max(v[start + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..lane_len {
                let e = (v[start + i * stride] - max).exp();
                out[start + i * stride] = e;
                sum += e;
            }
            for i in 0..lane_len {
                out[start + i * stride] /= sum;
            }
        }
        Ok(self.push(
            Op::Prim(PrimitiveKind::Softmax { axis }),
            vec![x],
            vec![rows, cols],
            out,
            Saved::None,
        ))
    }

    fn fwd_sum_axis(&mut self, x: usize, axis: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2(x, "SumAxis")?;
        if axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "SumAxis",
                detail: format!("axis {axis} out of range for a matrix"),
            });
        }
        let v = &self.nodes[x].value;
        let (out_len, value) = if axis == 0 {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c] += v[r * cols + c];
                }
            }
            (cols, out)
        } else {
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                out[r] = v[r * cols..(r + 1) * cols].iter().sum();
            }
            (rows, out)
        };
        Ok(self.push(
            Op::Prim(PrimitiveKind::SumAxis { axis }),
            vec![x],
            vec![out_len],
            value,
            Saved::None,
        ))
    }

    fn fwd_batch_norm(&mut self, x: usize, gamma: usize, beta: usize, eps: f64) -> Result<Tensor> {
        let (rows, cols) = self.dims2(x, "BatchNorm1d")?;
        for (id, name) in [(gamma, "gamma"), (beta, "beta")] {
            if self.nodes[id].shape != [cols] {
                return Err(Error::ShapeMismatch {
                    op: "BatchNorm1d",
                    detail: format!(
                        "{name} shape {:?} does not match feature count {cols}",
                        self.nodes[id].shape
                    ),
                });
            }
        }
        let v = &self.nodes[x].value;
        let inv_b = 1.0 / rows as f64;
        let mut mean = vec![0.0; cols];
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                mean[c] += v[r * cols + c];
            }
        }
        for m in mean.iter_mut() {
            *m *= inv_b;
        }
        for r in 0..rows {
            for c in 0..cols {
                let d = v[r * cols + c] - mean[c];
                var[c] += d * d;
            }
        }
        for s in var.iter_mut() {
            *s *= inv_b;
        }
        let inv_std: Vec<f64> = var.iter().map(|&s| 1.0 / (s + eps).sqrt()).collect();
        let mut normalized = vec![0.0; rows * cols];
        let mut out = vec![0.0; rows * cols];
        let g = &self.nodes[gamma].value;
        let b = &self.nodes[beta].value;
        for r in 0..rows {
            for c in 0..cols {
                let xh = (v[r * cols + c] - mean[c]) * inv_std[c];
                normalized[r * cols + c] = xh;
                out[r * cols + c] = g[c] * xh + b[c];
            }
        }
        Ok(self.push(
            Op::Prim(PrimitiveKind::BatchNorm1d { eps, momentum: 0.0 }),
            vec![x, gamma, beta],
            vec![rows, cols],
            out,
            Saved::BnStats {
                mean,
                var,
                inv_std,
                normalized,
            },
        ))
    }

    fn fwd_gather(&mut self, x: usize, idx: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2(x, "IndexGather")?;
        if self.nodes[idx].shape != [rows] {
            return Err(Error::ShapeMismatch {
                op: "IndexGather",
                detail: format!(
                    "index shape {:?} does not match row count {rows}",
                    self.nodes[idx].shape
                ),
            });
        }
        let mut indices = Vec::with_capacity(rows);
        for &raw in &self.nodes[idx].value {
            if raw.fract() != 0.0 || raw < 0.0 || raw as usize >= cols {
                return Err(Error::DomainError {
                    op: "IndexGather",
                    detail: format!("index {raw} invalid for {cols} columns"),
                });
            }
            indices.push(raw as usize);
        }
        let v = &self.nodes[x].value;
        let value: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| v[r * cols + c])
            .collect();
        Ok(self.push(
            Op::Prim(PrimitiveKind::IndexGather),
            vec![x, idx],
            vec![rows],
            value,
            Saved::Indices(indices),
        ))
    }

    // ── convenience wrappers ────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::MatMul, &[a, b])
    }

    pub fn add_bias(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::AddBias, &[x, b])
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::Relu, &[x])
    }

    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(PrimitiveKind::Softmax { axis }, &[x])
    }

    pub fn log(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::Log, &[x])
    }

    pub fn abs(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::Abs, &[x])
    }

    pub fn neg(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::Neg, &[x])
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::Mul, &[a, b])
    }

    pub fn mean_all(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::MeanAll, &[x])
    }

    pub fn sum_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(PrimitiveKind::SumAxis { axis }, &[x])
    }

    pub fn index_gather(&mut self, x: &Tensor, indices: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::IndexGather, &[x, indices])
    }

    pub fn batch_norm_train(
        &mut self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
        momentum: f64,
    ) -> Result<Tensor> {
        self.apply(PrimitiveKind::BatchNorm1d { eps, momentum }, &[x, gamma, beta])
    }

    pub fn grad_reverse(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::GradReverse, &[x])
    }

    /// `a + b` composed as `Sub(a, Neg(b))`.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let nb = self.neg(b)?;
        self.sub(a, &nb)
    }

    /// `c * x` with a constant factor, composed as an elementwise `Mul`
    /// against a constant leaf.
    pub fn scale(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        let k = self.leaf(&Tensor::full(x.shape().to_vec(), c));
        self.mul(x, &k)
    }

    /// `max(x, lo)` elementwise, composed as `0.5 * (x + lo + |x - lo|)`.
    /// Gradient passes through where `x > lo` and is blocked where `x < lo`.
    pub fn clamp_min(&mut self, x: &Tensor, lo: f64) -> Result<Tensor> {
        let lo_t = self.leaf(&Tensor::full(x.shape().to_vec(), lo));
        let d = self.sub(x, &lo_t)?;
        let ad = self.abs(&d)?;
        let s = self.add(x, &lo_t)?;
        let s = self.add(&s, &ad)?;
        self.scale(&s, 0.5)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns the gradient of the loss
    /// with respect to every node in the record; nodes not on a path to the
    /// loss get zero gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let loss_id = self.member(loss)?;
        if self.nodes[loss_id].value.len() != 1 {
            return Err(Error::NotScalar(self.nodes[loss_id].shape.clone()));
        }

        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        let mut touched = vec![false; self.nodes.len()];
        grads[loss_id][0] = 1.0;
        touched[loss_id] = true;

        for id in (0..=loss_id).rev() {
            if !touched[id] {
                continue;
            }
            let node = &self.nodes[id];
            let kind = match node.op {
                Op::Leaf => continue,
                Op::Prim(kind) => kind,
            };
            for &input in &node.inputs {
                touched[input] = true;
            }
            // split borrows: gradient of `id` is read, inputs are written
            let g = std::mem::take(&mut grads[id]);
            self.backward_node(id, kind, &g, &mut grads);
            grads[id] = g;
        }

        Ok(Gradients {
            record: self.id,
            grads,
        })
    }

    fn backward_node(&self, id: usize, kind: PrimitiveKind, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        match kind {
            PrimitiveKind::MatMul => {
                let (m, k) = (self.nodes[ins[0]].shape[0], self.nodes[ins[0]].shape[1]);
                let n = self.nodes[ins[1]].shape[1];
                let da = linalg::matmul_nt(g, &self.nodes[ins[1]].value, m, n, k);
                for (dst, src) in grads[ins[0]].iter_mut().zip(&da) {
                    *dst += src;
                }
                let db = linalg::matmul_tn(&self.nodes[ins[0]].value, g, m, k, n);
                for (dst, src) in grads[ins[1]].iter_mut().zip(&db) {
                    *dst += src;
                }
            }
            PrimitiveKind::AddBias => {
                let cols = node.shape[1];
                for (dst, src) in grads[ins[0]].iter_mut().zip(g) {
                    *dst += src;
                }
                let db = &mut grads[ins[1]];
                for (i, src) in g.iter().enumerate() {
                    db[i % cols] += src;
                }
            }
            PrimitiveKind::Relu => {
                let x = &self.nodes[ins[0]].value;
                for ((dst, &src), &xv) in grads[ins[0]].iter_mut().zip(g).zip(x) {
                    if xv > 0.0 {
                        *dst += src;
                    }
                }
            }
            PrimitiveKind::Softmax { axis } => {
                let (rows, cols) = (node.shape[0], node.shape[1]);
                let y = &node.value;
                let dx = &mut grads[ins[0]];
                let (lanes, lane_len, stride, base) = if axis == 1 {
                    (rows, cols, 1usize, cols)
                } else {
                    (cols, rows, cols, 1usize)
                };
                for lane in 0..lanes {
                    let start = lane * base;
                    let mut dot = 0.0;
                    for i in 0..lane_len {
                        let o = start + i * stride;
                        dot += g[o] * y[o];
                    }
                    for i in 0..lane_len {
                        let o = start + i * stride;
                        dx[o] += y[o] * (g[o] - dot);
                    }
                }
            }
            PrimitiveKind::Log => {
                let x = &self.nodes[ins[0]].value;
                for ((dst, &src), &xv) in grads[ins[0]].iter_mut().zip(g).zip(x) {
                    *dst += src / xv;
                }
            }
            PrimitiveKind::Abs => {
                let x = &self.nodes[ins[0]].value;
                for ((dst, &src), &xv) in grads[ins[0]].iter_mut().zip(g).zip(x) {
                    *dst += src * sign(xv);
                }
            }
            PrimitiveKind::Neg | PrimitiveKind::GradReverse => {
                for (dst, &src) in grads[ins[0]].iter_mut().zip(g) {
                    *dst -= src;
                }
            }
            PrimitiveKind::Sub => {
                for (dst, &src) in grads[ins[0]].iter_mut().zip(g) {
                    *dst += src;
                }
                for (dst, &src) in grads[ins[1]].iter_mut().zip(g) {
                    *dst -= src;
                }
            }
            PrimitiveKind::Mul => {
                let a = &self.nodes[ins[0]].value;
                let b = &self.nodes[ins[1]].value;
                for ((dst, &src), &bv) in grads[ins[0]].iter_mut().zip(g).zip(b) {
                    *dst += src * bv;
                }
                for ((dst, &src), &av) in grads[ins[1]].iter_mut().zip(g).zip(a) {
                    *dst += src * av;
                }
            }
            PrimitiveKind::MeanAll => {
                let n = self.nodes[ins[0]].value.len() as f64;
                let gv = g[0] / n;
                for dst in grads[ins[0]].iter_mut() {
                    *dst += gv;
                }
            }
            PrimitiveKind::SumAxis { axis } => {
                let (rows, cols) = (self.nodes[ins[0]].shape[0], self.nodes[ins[0]].shape[1]);
                let dx = &mut grads[ins[0]];
                if axis == 0 {
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] += g[c];
                        }
                    }
                } else {
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] += g[r];
                        }
                    }
                }
            }
            PrimitiveKind::BatchNorm1d { .. } => {
                let (rows, cols) = (node.shape[0], node.shape[1]);
                let (inv_std, normalized) = match &node.saved {
                    Saved::BnStats {
                        inv_std,
                        normalized,
                        ..
                    } => (inv_std, normalized),
                    _ => unreachable!("BatchNorm node always saves its stats"),
                };
                let gamma = &self.nodes[ins[1]].value;
                let inv_b = 1.0 / rows as f64;

                // per-feature reductions of the upstream gradient
                let mut sum_g = vec![0.0; cols];
                let mut sum_gx = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let o = r * cols + c;
                        sum_g[c] += g[o];
                        sum_gx[c] += g[o] * normalized[o];
                    }
                }
                {
                    let dgamma = &mut grads[ins[1]];
                    for c in 0..cols {
                        dgamma[c] += sum_gx[c];
                    }
                }
                {
                    let dbeta = &mut grads[ins[2]];
                    for c in 0..cols {
                        dbeta[c] += sum_g[c];
                    }
                }
                let dx = &mut grads[ins[0]];
                for r in 0..rows {
                    for c in 0..cols {
                        let o = r * cols + c;
                        dx[o] += gamma[c]
                            * inv_std[c]
                            * (g[o] - inv_b * sum_g[c] - normalized[o] * inv_b * sum_gx[c]);
                    }
                }
            }
            PrimitiveKind::IndexGather => {
                let cols = self.nodes[ins[0]].shape[1];
                let indices = match &node.saved {
                    Saved::Indices(ix) => ix,
                    _ => unreachable!("IndexGather node always saves its indices"),
                };
                let dx = &mut grads[ins[0]];
                for (r, (&c, &src)) in indices.iter().zip(g).enumerate() {
                    dx[r * cols + c] += src;
                }
                // the index input is not differentiable; its gradient stays zero
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn kind_name(kind: PrimitiveKind) -> &'static str {
    match kind {
        PrimitiveKind::MatMul => "MatMul",
        PrimitiveKind::AddBias => "AddBias",
        PrimitiveKind::Relu => "ReLU",
        PrimitiveKind::Softmax { .. } => "Softmax",
        PrimitiveKind::Log => "Log",
        PrimitiveKind::Abs => "Abs",
        PrimitiveKind::Neg => "Neg",
        PrimitiveKind::Sub => "Sub",
        PrimitiveKind::Mul => "Mul",
        PrimitiveKind::MeanAll => "MeanAll",
        PrimitiveKind::SumAxis { .. } => "SumAxis",
        PrimitiveKind::BatchNorm1d { .. } => "BatchNorm1d",
        PrimitiveKind::IndexGather => "IndexGather",
        PrimitiveKind::GradReverse => "GradReverse",
    }
}

/// Gradient of a scalar loss for every node of one record.
pub struct Gradients {
    record: u64,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn record_id(&self) -> u64 {
        self.record
    }

    /// Gradient slice for a tensor recorded on the same record.
    pub fn get(&self, t: &Tensor) -> Result<&[f64]> {
        match t.node {
            Some(NodeRef { record, id }) if record == self.record && id < self.grads.len() => {
                Ok(&self.grads[id])
            }
            _ => Err(Error::StaleRecord),
        }
    }

    pub fn by_node(&self, id: usize) -> Option<&[f64]> {
        self.grads.get(id).map(|g| g.as_slice())
    }

    /// Copy the gradient into the tensor's own `grad` field.
    pub fn write_back(&self, t: &mut Tensor) -> Result<()> {
        let g = self.get(t)?.to_vec();
        t.set_grad(g);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leafed(rec: &mut ComputationRecord, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        rec.leaf(&Tensor::new(shape, data).unwrap())
    }

    #[test]
    fn relu_forward() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![3], vec![-1.0, 0.0, 2.5]);
        let y = rec.relu(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn softmax_uniform() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![1, 4], vec![0.0; 4]);
        let y = rec.softmax(&x, 1).unwrap();
        for &v in y.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![3, 5], (0..15).map(|i| (i as f64).sin() * 30.0).collect());
        let y = rec.softmax(&x, 1).unwrap();
        for r in 0..3 {
            let s: f64 = y.data()[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            for &v in &y.data()[r * 5..(r + 1) * 5] {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn matmul_identity() {
        let mut rec = ComputationRecord::new();
        let eye = leafed(
            &mut rec,
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let a = leafed(&mut rec, vec![3, 4], (0..12).map(|i| i as f64 * 0.5).collect());
        let y = rec.matmul(&eye, &a).unwrap();
        assert_eq!(y.data(), a.data());
        assert_eq!(y.shape(), &[3, 4]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut rec = ComputationRecord::new();
        let a = leafed(&mut rec, vec![2, 3], vec![0.0; 6]);
        let b = leafed(&mut rec, vec![2, 3], vec![0.0; 6]);
        assert!(matches!(
            rec.matmul(&a, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn log_rejects_nonpositive() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![2], vec![1.0, 0.0]);
        assert!(matches!(rec.log(&x), Err(Error::DomainError { .. })));
    }

    #[test]
    fn batch_norm_two_point_column() {
        // column [1, 3], eps 1e-5: mean 2, biased var 1
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![2, 1], vec![1.0, 3.0]);
        let gamma = leafed(&mut rec, vec![1], vec![1.0]);
        let beta = leafed(&mut rec, vec![1], vec![0.0]);
        let y = rec.batch_norm_train(&x, &gamma, &beta, 1e-5, 0.1).unwrap();
        let expect = 0.999_995_000_037_499_7;
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
        let (mean, var) = rec.bn_batch_stats(&y).unwrap();
        assert_eq!(mean, &[2.0]);
        assert_eq!(var, &[1.0]);
    }

    #[test]
    fn mean_all_gradient_is_uniform() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let loss = rec.mean_all(&x).unwrap();
        let grads = rec.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn abs_gradient_sign() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![1], vec![-3.0]);
        let a = rec.abs(&x).unwrap();
        let loss = rec.mean_all(&a).unwrap();
        let grads = rec.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[-1.0]);
    }

    #[test]
    fn abs_gradient_at_zero_is_zero() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![1], vec![0.0]);
        let a = rec.abs(&x).unwrap();
        let loss = rec.mean_all(&a).unwrap();
        let grads = rec.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[0.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_uniform_logits() {
        // CE at uniform logits, K=2, label 0: grad(logits) = [-0.5, +0.5]
        let mut rec = ComputationRecord::new();
        let logits = leafed(&mut rec, vec![1, 2], vec![0.0, 0.0]);
        let p = rec.softmax(&logits, 1).unwrap();
        let labels = rec.leaf(&Tensor::from_labels(&[0]));
        let picked = rec.index_gather(&p, &labels).unwrap();
        let lp = rec.log(&picked).unwrap();
        let m = rec.mean_all(&lp).unwrap();
        let loss = rec.neg(&m).unwrap();
        let grads = rec.backward(&loss).unwrap();
        let g = grads.get(&logits).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-12);
        assert!((g[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![2], vec![1.0, 2.0]);
        assert!(matches!(rec.backward(&x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn stale_record_rejected() {
        let mut rec1 = ComputationRecord::new();
        let mut rec2 = ComputationRecord::new();
        let x = rec1.leaf(&Tensor::scalar(1.0));
        assert!(matches!(rec2.backward(&x), Err(Error::StaleRecord)));
        assert!(matches!(rec2.neg(&x), Err(Error::StaleRecord)));
    }

    #[test]
    fn unrecorded_tensor_rejected() {
        let mut rec = ComputationRecord::new();
        let free = Tensor::scalar(1.0);
        assert!(matches!(rec.neg(&free), Err(Error::StaleRecord)));
    }

    #[test]
    fn off_path_nodes_get_zero_gradients() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![2], vec![1.0, 2.0]);
        let y = leafed(&mut rec, vec![2], vec![5.0, 6.0]);
        let _unused = rec.relu(&y).unwrap();
        let loss = rec.mean_all(&x).unwrap();
        let grads = rec.backward(&loss).unwrap();
        assert_eq!(grads.get(&y).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = |rec: &mut ComputationRecord| {
            let x = rec.leaf(&Tensor::matrix(3, 2, vec![0.3, -1.2, 0.7, 2.0, -0.4, 0.9]).unwrap());
            let w = rec.leaf(&Tensor::matrix(2, 2, vec![0.1, -0.2, 0.5, 0.8]).unwrap());
            let h = rec.matmul(&x, &w).unwrap();
            let r = rec.relu(&h).unwrap();
            let loss = rec.mean_all(&r).unwrap();
            let grads = rec.backward(&loss).unwrap();
            (grads.get(&x).unwrap().to_vec(), grads.get(&w).unwrap().to_vec())
        };
        let mut rec1 = ComputationRecord::new();
        let mut rec2 = ComputationRecord::new();
        let (gx1, gw1) = build(&mut rec1);
        let (gx2, gw2) = build(&mut rec2);
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let a = 3.7;
        let run = |scale_by: Option<f64>| {
            let mut rec = ComputationRecord::new();
            let x = rec.leaf(&Tensor::matrix(2, 2, vec![0.4, -0.3, 1.1, 0.2]).unwrap());
            let sq = rec.mul(&x, &x).unwrap();
            let mut loss = rec.mean_all(&sq).unwrap();
            if let Some(c) = scale_by {
                loss = rec.scale(&loss, c).unwrap();
            }
            let grads = rec.backward(&loss).unwrap();
            grads.get(&x).unwrap().to_vec()
        };
        let base = run(None);
        let scaled = run(Some(a));
        for (b, s) in base.iter().zip(&scaled) {
            assert!((a * b - s).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_min_values_and_gradient_routing() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![3], vec![0.5, 1e-15, 2.0]);
        let c = rec.clamp_min(&x, 1e-12).unwrap();
        assert_eq!(c.data()[0], 0.5);
        assert_eq!(c.data()[1], 1e-12);
        assert_eq!(c.data()[2], 2.0);
        let loss = rec.mean_all(&c).unwrap();
        let grads = rec.backward(&loss).unwrap();
        let g = grads.get(&x).unwrap();
        let third = 1.0 / 3.0;
        assert!((g[0] - third).abs() < 1e-15);
        assert!(g[1].abs() < 1e-15); // below the clamp: blocked
        assert!((g[2] - third).abs() < 1e-15);
    }

    #[test]
    fn grad_reverse_negates() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![2], vec![1.0, 2.0]);
        let r = rec.grad_reverse(&x).unwrap();
        assert_eq!(r.data(), x.data());
        let loss = rec.mean_all(&r).unwrap();
        let grads = rec.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[-0.5, -0.5]);
    }

    #[test]
    fn gather_rejects_bad_indices() {
        let mut rec = ComputationRecord::new();
        let x = leafed(&mut rec, vec![2, 3], (0..6).map(|v| v as f64).collect());
        let bad = rec.leaf(&Tensor::vector(vec![0.0, 3.0]));
        assert!(matches!(
            rec.index_gather(&x, &bad),
            Err(Error::DomainError { .. })
        ));
        let frac = rec.leaf(&Tensor::vector(vec![0.5, 1.0]));
        assert!(matches!(
            rec.index_gather(&x, &frac),
            Err(Error::DomainError { .. })
        ));
    }
}
