//! Reverse-mode differentiable computation graph.
//!
//! Nodes are appended in topological order and their values are computed
//! eagerly when the node is created. [`Graph::backward`] walks the node list
//! in reverse and accumulates vector-Jacobian products into every node that
//! depends on a [`Graph::parameter`] leaf.
//!
//! Second-order quantities are obtained by building a gradient *as nodes*
//! (see [`crate::mlp::embedding_gradient_as_graph`]) and then calling
//! `backward` on a loss that depends on it.
//!
//! ```
//! use splitleak::graph::Graph;
//! use splitleak::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let w = g.parameter(Tensor::vector(vec![3.0, 4.0]).unwrap());
//! let loss = g.sum_sq(w).unwrap();
//! assert_eq!(g.value(loss).item(), 25.0);
//!
//! let grads = g.backward(loss, &[w]).unwrap();
//! assert_eq!(grads[w].data(), &[6.0, 8.0]);
//! ```

use std::collections::BTreeMap;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Constant,
    Parameter,
    MatMul(NodeId, NodeId),
    /// Elementwise add; the right operand may be a `[1, n]` row broadcast over rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumSq(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Parameter => "parameter",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Transpose(_) => "transpose",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumSq(_) => "sum_sq",
        }
    }

    fn parents(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Constant | Op::Parameter => [None, None],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                [Some(a), Some(b)]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Square(a)
            | Op::Abs(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumSq(a) => [Some(a), None],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    differentiable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients keyed by node, one entry per requested target.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    entries: BTreeMap<NodeId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }
}

impl Index<NodeId> for GradientMap {
    type Output = Tensor;

    fn index(&self, id: NodeId) -> &Tensor {
        &self.entries[&id]
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
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

    /// Node ids in creation (topological) order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> Op {
        self.nodes[id.0].op
    }

    pub fn is_differentiable(&self, id: NodeId) -> bool {
        self.nodes[id.0].differentiable
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents().into_iter().flatten().collect()
    }

    /// Replaces the value of a leaf node. Dependent nodes are not recomputed,
    /// so this is only meaningful before anything is built on top of the leaf.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = self.nodes.get_mut(id.0).ok_or(Error::UnknownNode(id.0))?;
        if !matches!(node.op, Op::Constant | Op::Parameter) || node.value.shape() != value.shape()
        {
            return Err(Error::ShapeMismatch {
                op: "set_leaf",
                lhs: node.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        node.value = value;
        Ok(())
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let differentiable = match op {
            Op::Parameter => true,
            Op::Constant => false,
            _ => op
                .parents()
                .into_iter()
                .flatten()
                .any(|p| self.nodes[p.0].differentiable),
        };
        self.nodes.push(Node {
            op,
            value,
            differentiable,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn check(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(Error::UnknownNode(id.0))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value).expect("tensors are finite")
    }

    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Parameter, value).expect("tensors are finite")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.check(a)?.matmul(self.check(b)?)?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.check(a)?, self.check(b)?);
        let v = if va.shape() == vb.shape() {
            va.zip_with(vb, |x, y| x + y)
        } else if is_row_broadcast(va, vb) {
            let (r, c) = va.dims2();
            let mut data = va.data().to_vec();
            for i in 0..r {
                for (d, b) in data[i * c..(i + 1) * c].iter_mut().zip(vb.data()) {
                    *d += b;
                }
            }
            Tensor::new(va.shape().to_vec(), data)?
        } else {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        };
        self.push(Op::Add(a, b), v)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(&Tensor, &Tensor)> {
        let (va, vb) = (self.check(a)?, self.check(b)?);
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        Ok((va, vb))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = self.same_shape("sub", a, b)?;
        let v = va.zip_with(vb, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = self.same_shape("mul", a, b)?;
        let v = va.zip_with(vb, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.check(a)?.map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.check(a)?.map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.check(a)?.map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.check(a)?.map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.check(a)?.map(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.check(a)?.transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.check(a)?.sum())?;
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.check(a)?;
        let v = Tensor::scalar(t.sum() / t.numel() as f64)?;
        self.push(Op::Mean(a), v)
    }

    pub fn sum_sq(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.check(a)?.sum_sq())?;
        self.push(Op::SumSq(a), v)
    }

    /// Reverse accumulation of `d loss / d target` for every target.
    ///
    /// Targets that do not influence the loss (constants, or nodes outside the
    /// loss's ancestry) receive a zero tensor of their own shape.
    pub fn backward(&self, loss: NodeId, targets: &[NodeId]) -> Result<GradientMap> {
        let lv = self.check(loss)?;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        for t in targets {
            self.check(*t)?;
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.differentiable {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }

        let mut entries = BTreeMap::new();
        for &t in targets {
            let g = grads
                .get(t.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(self.nodes[t.0].value.shape()));
            if !g.all_finite() {
                return Err(Error::NonFinite("backward"));
            }
            entries.insert(t, g);
        }
        Ok(GradientMap { entries })
    }

    fn propagate(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let send = |id: NodeId, g: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[id.0].differentiable {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        match node.op {
            Op::Constant | Op::Parameter => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].differentiable {
                    send(a, gout.matmul(&val(b).transpose())?, grads);
                }
                if self.nodes[b.0].differentiable {
                    send(b, val(a).transpose().matmul(gout)?, grads);
                }
            }
            Op::Add(a, b) => {
                send(a, gout.clone(), grads);
                if self.nodes[b.0].differentiable {
                    let vb = val(b);
                    if vb.shape() == gout.shape() {
                        send(b, gout.clone(), grads);
                    } else {
                        let (r, c) = gout.dims2();
                        let mut acc = vec![0.0; c];
                        for i in 0..r {
                            for (s, g) in acc.iter_mut().zip(gout.row(i)) {
                                *s += g;
                            }
                        }
                        send(b, Tensor::new(vb.shape().to_vec(), acc)?, grads);
                    }
                }
            }
            Op::Sub(a, b) => {
                send(a, gout.clone(), grads);
                send(b, gout.map(|g| -g), grads);
            }
            Op::Mul(a, b) => {
                send(a, gout.zip_with(val(b), |g, y| g * y), grads);
                send(b, gout.zip_with(val(a), |g, x| g * x), grads);
            }
            Op::Scale(a, c) => send(a, gout.map(|g| c * g), grads),
            Op::Relu(a) => send(
                a,
                gout.zip_with(val(a), |g, x| if x > 0.0 { g } else { 0.0 }),
                grads,
            ),
            Op::Tanh(a) => send(
                a,
                gout.zip_with(&node.value, |g, y| g * (1.0 - y * y)),
                grads,
            ),
            Op::Square(a) => send(a, gout.zip_with(val(a), |g, x| 2.0 * x * g), grads),
            Op::Abs(a) => send(a, gout.zip_with(val(a), |g, x| sign(x) * g), grads),
            Op::Transpose(a) => send(a, gout.transpose(), grads),
            Op::Sum(a) => send(a, Tensor::filled(val(a).shape(), gout.item()), grads),
            Op::Mean(a) => {
                let n = val(a).numel() as f64;
                send(a, Tensor::filled(val(a).shape(), gout.item() / n), grads)
            }
            Op::SumSq(a) => {
                let g = gout.item();
                send(a, val(a).map(|x| 2.0 * x * g), grads)
            }
        }
        Ok(())
    }
}

fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    a.rank() == 2 && b.rank() == 2 && b.shape()[0] == 1 && a.shape()[1] == b.shape()[1]
}
