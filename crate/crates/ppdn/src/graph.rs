//! Recorded-graph reverse-mode differentiation.
//!
//! A [`Graph`] is a define-by-run tape: nodes are appended in topological
//! order, `forward` fills values in insertion order, `backward` accumulates
//! gradients in reverse. The tape is rebuilt per batch.
//!
//! The one non-standard op is [`Op::Gate`]: the identity in the forward pass,
//! and, when blocked, a hard zero in the backward pass. Blocking the gates on
//! one branch of a paired loss suppresses that branch's gradient contribution
//! while leaving the loss value untouched.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, NORM_FLOOR};

/// Handle to a node in the [`Graph`] that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(index: usize) -> Self {
        NodeId(index)
    }
}

/// Whether a gate lets gradient through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    Open,
    Blocked,
}

/// Operation recorded on the tape.
#[derive(Clone, Debug)]
pub enum Op {
    /// Leaf bound at forward time (or a constant carrying its own value).
    Input,
    /// Trainable leaf; its value is snapshotted at registration.
    Parameter,
    /// `[n,k] x [k,m] -> [n,m]`
    MatMul,
    /// Elementwise same-shape add, or `[n,m] + [m]` row broadcast.
    Add,
    Relu,
    /// Row-wise `v / max(‖v‖, δ)`; whole-vector for 1-D operands.
    L2Normalize,
    /// Concatenation along the last axis.
    Concat,
    /// `Σ (a-b)²` over all entries, yielding a scalar.
    SquaredDiffSum,
    /// Fused softmax + cross-entropy, summed over rows.
    SoftmaxCrossEntropy { labels: Vec<usize> },
    Scale { factor: f64 },
    /// Sum of all entries, yielding a scalar.
    Sum,
    /// Identity forward; blocked gates propagate zero gradient.
    Gate { mode: GateMode },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Parameter => "parameter",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Relu => "relu",
            Op::L2Normalize => "l2-normalize",
            Op::Concat => "concat",
            Op::SquaredDiffSum => "squared-diff-sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            Op::Scale { .. } => "scale",
            Op::Sum => "sum",
            Op::Gate { .. } => "gate",
        }
    }
}

/// One recorded node: the op, its input nodes, and the value/grad slots
/// filled by `forward`/`backward`.
#[derive(Clone, Debug)]
pub struct TapeEntry {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
    pub value: Option<Tensor>,
    pub grad: Option<Tensor>,
}

/// Append-only computation tape; insertion order is topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<TapeEntry>,
    forward_ran: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(TapeEntry {
            op,
            inputs,
            shape,
            value: None,
            grad: None,
        });
        id
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Declares an input leaf; a tensor of this shape must be bound at forward.
    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        self.push(Op::Input, vec![], shape.to_vec())
    }

    /// Input leaf pre-bound to a fixed value; needs no binding at forward.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.push(Op::Input, vec![], shape);
        self.nodes[id.0].value = Some(value);
        id
    }

    /// Registers a trainable parameter with its current value.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.push(Op::Parameter, vec![], shape);
        self.nodes[id.0].value = Some(value);
        id
    }

    /// Overwrites a parameter's snapshot (used by the finite-difference
    /// checker to perturb single entries).
    pub fn set_parameter(&mut self, id: NodeId, value: Tensor) {
        debug_assert!(matches!(self.nodes[id.0].op, Op::Parameter));
        debug_assert_eq!(self.nodes[id.0].shape, value.shape());
        self.nodes[id.0].value = Some(value);
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: sa.to_vec(),
                actual: sb.to_vec(),
            });
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul, vec![a, b], shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        let broadcast_ok = sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0];
        if sa != sb && !broadcast_ok {
            return Err(Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: sa.to_vec(),
                actual: sb.to_vec(),
            });
        }
        let shape = sa.to_vec();
        Ok(self.push(Op::Add, vec![a, b], shape))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Relu, vec![a], shape)
    }

    pub fn l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a);
        if sa.is_empty() || sa.len() > 2 {
            return Err(Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: vec![0, 0],
                actual: sa.to_vec(),
            });
        }
        let shape = sa.to_vec();
        Ok(self.push(Op::L2Normalize, vec![a], shape))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = self.shape_of(parts[0]).len();
        let rows = self.shape_of(parts[0]).first().copied().unwrap_or(1);
        let mut width = 0;
        for &p in parts {
            let sp = self.shape_of(p);
            let same_kind = sp.len() == rank && (rank == 1 || sp[0] == rows);
            if !same_kind {
                return Err(Error::ShapeMismatch {
                    node: self.nodes.len(),
                    expected: self.shape_of(parts[0]).to_vec(),
                    actual: sp.to_vec(),
                });
            }
            width += sp.last().copied().unwrap_or(1);
        }
        let shape = if rank == 1 {
            vec![width]
        } else {
            vec![rows, width]
        };
        Ok(self.push(Op::Concat, parts.to_vec(), shape))
    }

    pub fn squared_diff_sum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: self.shape_of(a).to_vec(),
                actual: self.shape_of(b).to_vec(),
            });
        }
        Ok(self.push(Op::SquaredDiffSum, vec![a, b], vec![]))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let sl = self.shape_of(logits);
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                node: self.nodes.len(),
                expected: vec![labels.len(), sl.last().copied().unwrap_or(0)],
                actual: sl.to_vec(),
            });
        }
        let classes = sl[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            vec![logits],
            vec![],
        ))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Scale { factor }, vec![a], shape)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum, vec![a], vec![])
    }

    pub fn gate(&mut self, a: NodeId, mode: GateMode) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Gate { mode }, vec![a], shape)
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id).expect("forward not run").scalar_value()
    }

    pub fn entry(&self, id: NodeId) -> &TapeEntry {
        &self.nodes[id.0]
    }

    /// Computes every node's value in topological order.
    pub fn forward(&mut self, bindings: &HashMap<NodeId, Tensor>) -> Result<()> {
        self.forward_with_frozen(bindings, &HashMap::new())
    }

    /// Forward where nodes listed in `frozen` take the given values instead of
    /// recomputing. The finite-difference oracle uses this to hold blocked
    /// gates at their base outputs while parameters are perturbed.
    pub fn forward_with_frozen(
        &mut self,
        bindings: &HashMap<NodeId, Tensor>,
        frozen: &HashMap<NodeId, Tensor>,
    ) -> Result<()> {
        for i in 0..self.nodes.len() {
            let id = NodeId(i);
            if let Some(pinned) = frozen.get(&id) {
                self.nodes[i].value = Some(pinned.clone());
                continue;
            }
            let value = match &self.nodes[i].op {
                Op::Input => match bindings.get(&id) {
                    Some(t) => {
                        if t.shape() != self.nodes[i].shape {
                            return Err(Error::ShapeMismatch {
                                node: i,
                                expected: self.nodes[i].shape.clone(),
                                actual: t.shape().to_vec(),
                            });
                        }
                        t.clone()
                    }
                    None => match &self.nodes[i].value {
                        Some(t) => t.clone(),
                        None => return Err(Error::MissingBinding { node: i }),
                    },
                },
                Op::Parameter => self.nodes[i]
                    .value
                    .clone()
                    .ok_or(Error::MissingBinding { node: i })?,
                op => {
                    let args: Vec<&Tensor> = self.nodes[i]
                        .inputs
                        .iter()
                        .map(|&inp| self.nodes[inp.0].value.as_ref().expect("topological order"))
                        .collect();
                    eval_op(op, &args)
                }
            };
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: self.nodes[i].op.name(),
                });
            }
            self.nodes[i].value = Some(value);
        }
        self.forward_ran = true;
        Ok(())
    }

    /// Reverse accumulation from the scalar `loss` node. Every node at or
    /// below `loss` gets a gradient tensor; blocked gates contribute zero to
    /// their inputs.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.forward_ran {
            return Err(Error::BackwardBeforeForward);
        }
        let loss_shape = self.nodes[loss.0].shape.clone();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::LossNotScalar {
                node: loss.0,
                shape: loss_shape,
            });
        }
        for node in &mut self.nodes {
            node.grad = Some(Tensor::zeros(node.shape.clone()));
        }
        self.nodes[loss.0].grad = Some(Tensor::new(loss_shape, vec![1.0]).unwrap());

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let grad = node.grad.as_ref().unwrap();
            let values: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|inp| before[inp.0].value.as_ref().expect("forward ran"))
                .collect();
            let contributions = backward_op(&node.op, node.value.as_ref().unwrap(), grad, &values);
            for (slot, contrib) in node.inputs.clone().iter().zip(contributions) {
                if let Some(c) = contrib {
                    accumulate(self.nodes[slot.0].grad.as_mut().unwrap(), &c);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(into: &mut Tensor, from: &Tensor) {
    for (dst, src) in into.data_mut().iter_mut().zip(from.data()) {
        *dst += src;
    }
}

fn eval_op(op: &Op, args: &[&Tensor]) -> Tensor {
    match op {
        Op::Input | Op::Parameter => unreachable!("leaves handled by forward"),
        Op::MatMul => matmul_forward(args[0], args[1]),
        Op::Add => add_forward(args[0], args[1]),
        Op::Relu => {
            let data = args[0].data().iter().map(|&x| x.max(0.0)).collect();
            Tensor::new(args[0].shape().to_vec(), data).unwrap()
        }
        Op::L2Normalize => l2_normalize_forward(args[0]),
        Op::Concat => concat_forward(args),
        Op::SquaredDiffSum => {
            let s: f64 = args[0]
                .data()
                .iter()
                .zip(args[1].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Tensor::scalar(s)
        }
        Op::SoftmaxCrossEntropy { labels } => cross_entropy_forward(args[0], labels),
        Op::Scale { factor } => {
            let data = args[0].data().iter().map(|x| x * factor).collect();
            Tensor::new(args[0].shape().to_vec(), data).unwrap()
        }
        Op::Sum => Tensor::scalar(args[0].data().iter().sum()),
        Op::Gate { .. } => args[0].clone(),
    }
}

/// Gradient contributions to each input of `op`, or `None` where nothing
/// flows (blocked gates).
fn backward_op(
    op: &Op,
    value: &Tensor,
    grad: &Tensor,
    inputs: &[&Tensor],
) -> Vec<Option<Tensor>> {
    match op {
        Op::Input | Op::Parameter => vec![],
        Op::MatMul => {
            let (da, db) = matmul_backward(inputs[0], inputs[1], grad);
            vec![Some(da), Some(db)]
        }
        Op::Add => {
            let da = grad.clone();
            let db = if inputs[1].shape() == grad.shape() {
                grad.clone()
            } else {
                // [n,m] + [m] broadcast: bias grad is the column sum.
                let m = inputs[1].numel();
                let mut col = vec![0.0; m];
                for row in 0..grad.rows() {
                    for (c, slot) in col.iter_mut().enumerate() {
                        *slot += grad.at(row, c);
                    }
                }
                Tensor::vector(col)
            };
            vec![Some(da), Some(db)]
        }
        Op::Relu => {
            let data = inputs[0]
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            vec![Some(Tensor::new(grad.shape().to_vec(), data).unwrap())]
        }
        Op::L2Normalize => vec![Some(l2_normalize_backward(inputs[0], value, grad))],
        Op::Concat => concat_backward(inputs, grad),
        Op::SquaredDiffSum => {
            let gs = grad.scalar_value();
            let da: Vec<f64> = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(a, b)| 2.0 * (a - b) * gs)
                .collect();
            let db: Vec<f64> = da.iter().map(|v| -v).collect();
            vec![
                Some(Tensor::new(inputs[0].shape().to_vec(), da).unwrap()),
                Some(Tensor::new(inputs[1].shape().to_vec(), db).unwrap()),
            ]
        }
        Op::SoftmaxCrossEntropy { labels } => {
            vec![Some(cross_entropy_backward(
                inputs[0],
                labels,
                grad.scalar_value(),
            ))]
        }
        Op::Scale { factor } => {
            let data = grad.data().iter().map(|g| g * factor).collect();
            vec![Some(Tensor::new(grad.shape().to_vec(), data).unwrap())]
        }
        Op::Sum => {
            let gs = grad.scalar_value();
            vec![Some(Tensor::new(
                inputs[0].shape().to_vec(),
                vec![gs; inputs[0].numel()],
            )
            .unwrap())]
        }
        Op::Gate { mode } => match mode {
            GateMode::Open => vec![Some(grad.clone())],
            GateMode::Blocked => vec![None],
        },
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for kk in 0..k {
            let aik = a.data()[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data()[kk * m..(kk + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let mut da = vec![0.0; n * k];
    let mut db = vec![0.0; k * m];
    for i in 0..n {
        let grow = &grad.data()[i * m..(i + 1) * m];
        for kk in 0..k {
            let brow = &b.data()[kk * m..(kk + 1) * m];
            let mut s = 0.0;
            for (g, bv) in grow.iter().zip(brow) {
                s += g * bv;
            }
            da[i * k + kk] = s;

            let aik = a.data()[i * k + kk];
            if aik != 0.0 {
                let drow = &mut db[kk * m..(kk + 1) * m];
                for (d, g) in drow.iter_mut().zip(grow) {
                    *d += aik * g;
                }
            }
        }
    }
    (
        Tensor::new(vec![n, k], da).unwrap(),
        Tensor::new(vec![k, m], db).unwrap(),
    )
}

fn add_forward(a: &Tensor, b: &Tensor) -> Tensor {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x + y)
            .collect();
        Tensor::new(a.shape().to_vec(), data).unwrap()
    } else {
        let m = b.numel();
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(m) {
            for (x, y) in row.iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Tensor::new(a.shape().to_vec(), data).unwrap()
    }
}

fn l2_normalize_forward(x: &Tensor) -> Tensor {
    let w = x.row_len();
    let mut data = Vec::with_capacity(x.numel());
    for row in x.data().chunks(w) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(NORM_FLOOR);
        data.extend(row.iter().map(|v| v / denom));
    }
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

fn l2_normalize_backward(x: &Tensor, y: &Tensor, grad: &Tensor) -> Tensor {
    let w = x.row_len();
    let mut out = Vec::with_capacity(x.numel());
    for ((xr, yr), gr) in x
        .data()
        .chunks(w)
        .zip(y.data().chunks(w))
        .zip(grad.data().chunks(w))
    {
        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > NORM_FLOOR {
            // y = x/‖x‖: dx = (g - y·<g,y>)/‖x‖ (full quotient rule).
            let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
            out.extend(gr.iter().zip(yr).map(|(g, y)| (g - y * dot) / norm));
        } else {
            // Below the floor the denominator is the constant δ.
            out.extend(gr.iter().map(|g| g / NORM_FLOOR));
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

fn concat_forward(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let rank = parts[0].shape().len();
    let total: usize = parts.iter().map(|p| p.row_len()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    let shape = if rank == 1 {
        vec![total]
    } else {
        vec![rows, total]
    };
    Tensor::new(shape, data).unwrap()
}

fn concat_backward(parts: &[&Tensor], grad: &Tensor) -> Vec<Option<Tensor>> {
    let rows = parts[0].rows();
    let mut outs: Vec<Vec<f64>> = parts.iter().map(|p| Vec::with_capacity(p.numel())).collect();
    for r in 0..rows {
        let grow = grad.row(r);
        let mut offset = 0;
        for (p, out) in parts.iter().zip(outs.iter_mut()) {
            let w = p.row_len();
            out.extend_from_slice(&grow[offset..offset + w]);
            offset += w;
        }
    }
    parts
        .iter()
        .zip(outs)
        .map(|(p, data)| Some(Tensor::new(p.shape().to_vec(), data).unwrap()))
        .collect()
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn cross_entropy_forward(logits: &Tensor, labels: &[usize]) -> Tensor {
    let c = logits.row_len();
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    Tensor::scalar(loss)
}

fn cross_entropy_backward(logits: &Tensor, labels: &[usize], upstream: f64) -> Tensor {
    let c = logits.row_len();
    let mut out = Vec::with_capacity(logits.numel());
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let probs = softmax_row(row);
        out.extend(
            probs
                .into_iter()
                .enumerate()
                .map(|(j, p)| upstream * (p - if j == y { 1.0 } else { 0.0 })),
        );
    }
    Tensor::new(logits.shape().to_vec(), out).unwrap()
}
