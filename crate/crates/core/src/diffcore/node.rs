//! Reverse-mode scalar-loss autodiff over dense f64 matrices.
//!
//! Graphs are built eagerly: every operation computes its forward value
//! immediately and records its inputs. `backward` walks the graph once in
//! reverse topological order, accumulating gradients additively into every
//! node it visits. Leaves keep their gradients across calls so a training
//! step can accumulate over a batch before the optimizer consumes them.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Inputs to `log`, `cross_entropy` and `jsd` are clamped here so degenerate
/// predictions produce a bounded loss instead of infinities.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone)]
pub struct Node(Rc<RefCell<NodeInner>>);

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        write!(f, "Node({} {:?})", inner.op.name(), inner.data.shape())
    }
}

struct NodeInner {
    data: Tensor,
    grad: Tensor,
    op: Op,
}

enum Op {
    Leaf,
    Add(Node, Node),
    Mul(Node, Node),
    Scale(Node, f64),
    Matmul(Node, Node),
    Tanh(Node),
    SoftmaxRow(Node),
    MaskedSoftmaxRow(Node),
    Log(Node),
    Lookup { table: Node, ids: Vec<u32> },
    MeanPoolRows { x: Node, rows: Vec<usize> },
    Transpose(Node),
    RepeatRow(Node),
    Row(Node, usize),
    ConcatRows(Vec<Node>),
    Sum(Node),
    CrossEntropy { pred: Node, target: usize },
    Jsd(Node, Node),
    StopGrad(Node),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::Tanh(..) => "tanh",
            Op::SoftmaxRow(..) => "softmax_row",
            Op::MaskedSoftmaxRow(..) => "masked_softmax_row",
            Op::Log(..) => "log",
            Op::Lookup { .. } => "lookup",
            Op::MeanPoolRows { .. } => "mean_pool_rows",
            Op::Transpose(..) => "transpose",
            Op::RepeatRow(..) => "repeat_row",
            Op::Row(..) => "row",
            Op::ConcatRows(..) => "concat_rows",
            Op::Sum(..) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Jsd(..) => "jsd",
            Op::StopGrad(..) => "stop_gradient",
        }
    }

    fn parents(&self) -> Vec<Node> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::Jsd(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::SoftmaxRow(a)
            | Op::MaskedSoftmaxRow(a)
            | Op::Log(a)
            | Op::Transpose(a)
            | Op::RepeatRow(a)
            | Op::Row(a, _)
            | Op::Sum(a)
            | Op::StopGrad(a) => vec![a.clone()],
            Op::Lookup { table, .. } => vec![table.clone()],
            Op::MeanPoolRows { x, .. } => vec![x.clone()],
            Op::ConcatRows(parts) => parts.clone(),
            Op::CrossEntropy { pred, .. } => vec![pred.clone()],
        }
    }
}

fn new_node(data: Tensor, op: Op) -> Node {
    let grad = Tensor::zeros(data.rows(), data.cols());
    Node(Rc::new(RefCell::new(NodeInner { data, grad, op })))
}

impl Node {
    pub fn leaf(data: Tensor) -> Node {
        new_node(data, Op::Leaf)
    }

    /// A leaf that is not registered as a parameter; gradients flowing into
    /// it are simply discarded by the caller.
    pub fn constant(data: Tensor) -> Node {
        new_node(data, Op::Leaf)
    }

    pub fn scalar(value: f64) -> Node {
        Node::constant(Tensor::scalar(value))
    }

    pub fn value(&self) -> Tensor {
        self.0.borrow().data.clone()
    }

    pub fn grad(&self) -> Tensor {
        self.0.borrow().grad.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.borrow().data.shape()
    }

    pub fn item(&self) -> f64 {
        self.0.borrow().data.item()
    }

    pub fn set_data(&self, data: Tensor) {
        self.0.borrow_mut().data = data;
    }

    /// Mutate the stored value in place (optimizer updates, FD probes).
    pub fn update_data(&self, f: impl FnOnce(&mut Tensor)) {
        f(&mut self.0.borrow_mut().data)
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad.fill(0.0);
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    fn accumulate_grad(&self, delta: &Tensor) {
        self.0.borrow_mut().grad.add_assign(delta);
    }

    pub fn add(&self, other: &Node) -> Result<Node> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op: "add",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = a;
        out.add_assign(&b);
        Ok(new_node(out, Op::Add(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Node) -> Result<Node> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op: "mul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let data = Tensor::from_vec(
            a.rows(),
            a.cols(),
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x * y)
                .collect(),
        )?;
        Ok(new_node(data, Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, factor: f64) -> Node {
        let data = self.value().map(|v| v * factor);
        new_node(data, Op::Scale(self.clone(), factor))
    }

    pub fn matmul(&self, other: &Node) -> Result<Node> {
        let data = self.value().matmul(&other.value())?;
        Ok(new_node(data, Op::Matmul(self.clone(), other.clone())))
    }

    pub fn tanh(&self) -> Node {
        let data = self.value().map(f64::tanh);
        new_node(data, Op::Tanh(self.clone()))
    }

    /// Row-wise softmax with the usual max-subtraction for stability.
    pub fn softmax_row(&self) -> Node {
        let x = self.value();
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                out.set(r, c, e / sum);
            }
        }
        new_node(out, Op::SoftmaxRow(self.clone()))
    }

    /// Row-wise softmax restricted to `valid` columns; invalid columns get
    /// probability exactly zero. `valid` must cover every column and select
    /// at least one.
    pub fn masked_softmax_row(&self, valid: &[bool]) -> Result<Node> {
        let x = self.value();
        if valid.len() != x.cols() {
            return Err(Error::Shape {
                op: "masked_softmax_row",
                lhs: x.shape(),
                rhs: (1, valid.len()),
            });
        }
        if !valid.iter().any(|&v| v) {
            return Err(Error::EmptyInput);
        }
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let max = row
                .iter()
                .zip(valid)
                .filter(|(_, &v)| v)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row
                .iter()
                .zip(valid)
                .map(|(&v, &ok)| if ok { (v - max).exp() } else { 0.0 })
                .collect();
            let sum: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                out.set(r, c, e / sum);
            }
        }
        Ok(new_node(out, Op::MaskedSoftmaxRow(self.clone())))
    }

    /// Elementwise natural log of `max(x, LOG_CLAMP)`.
    pub fn log(&self) -> Node {
        let data = self.value().map(|v| v.max(LOG_CLAMP).ln());
        new_node(data, Op::Log(self.clone()))
    }

    pub fn transpose(&self) -> Node {
        let data = self.value().transpose();
        new_node(data, Op::Transpose(self.clone()))
    }

    /// Tile a 1 x n row `count` times into a count x n matrix.
    pub fn repeat_row(&self, count: usize) -> Result<Node> {
        let x = self.value();
        if x.rows() != 1 {
            return Err(Error::Shape {
                op: "repeat_row",
                lhs: x.shape(),
                rhs: (1, x.cols()),
            });
        }
        let mut out = Tensor::zeros(count, x.cols());
        for r in 0..count {
            for c in 0..x.cols() {
                out.set(r, c, x.get(0, c));
            }
        }
        Ok(new_node(out, Op::RepeatRow(self.clone())))
    }

    pub fn row(&self, index: usize) -> Result<Node> {
        let x = self.value();
        if index >= x.rows() {
            return Err(Error::Index {
                index,
                len: x.rows(),
            });
        }
        let data = Tensor::row_vector(x.row(index).to_vec());
        Ok(new_node(data, Op::Row(self.clone(), index)))
    }

    pub fn sum(&self) -> Node {
        let total: f64 = self.value().as_slice().iter().sum();
        new_node(Tensor::scalar(total), Op::Sum(self.clone()))
    }

    /// Forward identity; gradients stop here.
    pub fn stop_gradient(&self) -> Node {
        new_node(self.value(), Op::StopGrad(self.clone()))
    }

    /// Negative log likelihood of `target` under a 1 x C distribution,
    /// clamped at [`LOG_CLAMP`].
    pub fn cross_entropy(&self, target: usize) -> Result<Node> {
        let pred = self.value();
        if pred.rows() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: pred.shape(),
                rhs: (1, pred.cols()),
            });
        }
        if target >= pred.cols() {
            return Err(Error::Index {
                index: target,
                len: pred.cols(),
            });
        }
        let total: f64 = pred.as_slice().iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!(
                "cross_entropy input sums to {total}, not 1"
            )));
        }
        let loss = -pred.get(0, target).max(LOG_CLAMP).ln();
        Ok(new_node(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                pred: self.clone(),
                target,
            },
        ))
    }

    /// Jensen-Shannon divergence of two 1 x C distributions (natural log):
    /// `JSD(a, b) = KL(a || m) / 2 + KL(b || m) / 2` with `m = (a + b) / 2`.
    pub fn jsd(&self, other: &Node) -> Result<Node> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() || a.rows() != 1 {
            return Err(Error::Shape {
                op: "jsd",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut total = 0.0;
        for c in 0..a.cols() {
            let (pa, pb) = (a.get(0, c), b.get(0, c));
            let m = 0.5 * (pa + pb);
            if pa > 0.0 {
                total += 0.5 * pa * (pa.max(LOG_CLAMP).ln() - m.max(LOG_CLAMP).ln());
            }
            if pb > 0.0 {
                total += 0.5 * pb * (pb.max(LOG_CLAMP).ln() - m.max(LOG_CLAMP).ln());
            }
        }
        Ok(new_node(
            Tensor::scalar(total),
            Op::Jsd(self.clone(), other.clone()),
        ))
    }
}

/// Rows of `table` selected by `ids`; gradient scatter-adds back into the
/// corresponding table rows.
pub fn lookup(table: &Node, ids: &[u32]) -> Result<Node> {
    let t = table.value();
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Tensor::zeros(ids.len(), t.cols());
    for (r, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= t.rows() {
            return Err(Error::Index {
                index: id,
                len: t.rows(),
            });
        }
        for c in 0..t.cols() {
            out.set(r, c, t.get(id, c));
        }
    }
    Ok(new_node(
        out,
        Op::Lookup {
            table: table.clone(),
            ids: ids.to_vec(),
        },
    ))
}

/// Mean of the selected rows of `x`, a 1 x cols vector.
pub fn mean_pool_rows(x: &Node, rows: &[usize]) -> Result<Node> {
    let t = x.value();
    if rows.is_empty() {
        return Err(Error::EmptyRationale);
    }
    let mut out = Tensor::zeros(1, t.cols());
    for &r in rows {
        if r >= t.rows() {
            return Err(Error::Index {
                index: r,
                len: t.rows(),
            });
        }
        for c in 0..t.cols() {
            out.set(0, c, out.get(0, c) + t.get(r, c));
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for c in 0..t.cols() {
        out.set(0, c, out.get(0, c) * inv);
    }
    Ok(new_node(
        out,
        Op::MeanPoolRows {
            x: x.clone(),
            rows: rows.to_vec(),
        },
    ))
}

/// `weights` (1 x T) times `values` (T x D): the attention context vector.
pub fn weighted_sum(weights: &Node, values: &Node) -> Result<Node> {
    if weights.shape().0 != 1 || weights.shape().1 != values.shape().0 {
        return Err(Error::Shape {
            op: "weighted_sum",
            lhs: weights.shape(),
            rhs: values.shape(),
        });
    }
    weights.matmul(values)
}

/// Stack 1 x n rows into a k x n matrix.
pub fn concat_rows(parts: &[Node]) -> Result<Node> {
    if parts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cols = parts[0].shape().1;
    let mut data = Vec::with_capacity(parts.len() * cols);
    for p in parts {
        let v = p.value();
        if v.shape() != (1, cols) {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: (1, cols),
                rhs: v.shape(),
            });
        }
        data.extend_from_slice(v.as_slice());
    }
    let t = Tensor::from_vec(parts.len(), cols, data)?;
    Ok(new_node(t, Op::ConcatRows(parts.to_vec())))
}

/// Reverse topological order from `root` (root first). Iterative so deep
/// recurrent chains cannot overflow the stack.
fn topo_order(root: &Node) -> Vec<Node> {
    let mut order = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    // (node, expanded) pairs: first visit pushes parents, second emits.
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.key()) {
            continue;
        }
        let parents = node.0.borrow().op.parents();
        stack.push((node.clone(), true));
        for p in parents {
            if !visited.contains(&p.key()) {
                stack.push((p, false));
            }
        }
    }
    order.reverse();
    order
}

/// Backpropagate from a scalar loss. Gradients are *added* into every node
/// reachable from `loss`; leaves are not cleared first, so repeated calls
/// accumulate (used for minibatch accumulation).
pub fn backward(loss: &Node) -> Result<()> {
    if loss.shape() != (1, 1) {
        return Err(Error::Shape {
            op: "backward",
            lhs: loss.shape(),
            rhs: (1, 1),
        });
    }
    loss.accumulate_grad(&Tensor::scalar(1.0));
    for node in topo_order(loss) {
        propagate(&node)?;
    }
    Ok(())
}

fn propagate(node: &Node) -> Result<()> {
    // Copy out this node's gradient and value before touching parent
    // RefCells; parents are always distinct Rc cells from the node itself.
    let (g, y) = {
        let inner = node.0.borrow();
        (inner.grad.clone(), inner.data.clone())
    };
    match &node.0.borrow().op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            a.accumulate_grad(&g);
            b.accumulate_grad(&g);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (a.value(), b.value());
            let mut da = g.clone();
            for (d, s) in da.as_mut_slice().iter_mut().zip(bv.as_slice()) {
                *d *= *s;
            }
            let mut db = g.clone();
            for (d, s) in db.as_mut_slice().iter_mut().zip(av.as_slice()) {
                *d *= *s;
            }
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        }
        Op::Scale(a, factor) => {
            a.accumulate_grad(&g.map(|v| v * factor));
        }
        Op::Matmul(a, b) => {
            let (av, bv) = (a.value(), b.value());
            let da = g.matmul(&bv.transpose())?;
            let db = av.transpose().matmul(&g)?;
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        }
        Op::Tanh(a) => {
            let mut da = g.clone();
            for (d, &o) in da.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *d *= 1.0 - o * o;
            }
            a.accumulate_grad(&da);
        }
        Op::SoftmaxRow(a) | Op::MaskedSoftmaxRow(a) => {
            // dx_i = y_i * (g_i - sum_j g_j y_j); zero-probability columns
            // (masked out) receive zero gradient automatically.
            let mut da = Tensor::zeros(y.rows(), y.cols());
            for r in 0..y.rows() {
                let dot: f64 = y
                    .row(r)
                    .iter()
                    .zip(g.row(r))
                    .map(|(&p, &gg)| p * gg)
                    .sum();
                for c in 0..y.cols() {
                    da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                }
            }
            a.accumulate_grad(&da);
        }
        Op::Log(a) => {
            let av = a.value();
            let mut da = g.clone();
            for (d, &x) in da.as_mut_slice().iter_mut().zip(av.as_slice()) {
                *d *= if x > LOG_CLAMP { 1.0 / x } else { 0.0 };
            }
            a.accumulate_grad(&da);
        }
        Op::Lookup { table, ids } => {
            let cols = y.cols();
            let mut dt = Tensor::zeros(table.shape().0, cols);
            for (r, &id) in ids.iter().enumerate() {
                for c in 0..cols {
                    let cur = dt.get(id as usize, c);
                    dt.set(id as usize, c, cur + g.get(r, c));
                }
            }
            table.accumulate_grad(&dt);
        }
        Op::MeanPoolRows { x, rows } => {
            let inv = 1.0 / rows.len() as f64;
            let mut dx = Tensor::zeros(x.shape().0, x.shape().1);
            for &r in rows {
                for c in 0..dx.cols() {
                    let cur = dx.get(r, c);
                    dx.set(r, c, cur + g.get(0, c) * inv);
                }
            }
            x.accumulate_grad(&dx);
        }
        Op::Transpose(a) => {
            a.accumulate_grad(&g.transpose());
        }
        Op::RepeatRow(a) => {
            let mut da = Tensor::zeros(1, g.cols());
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    da.set(0, c, da.get(0, c) + g.get(r, c));
                }
            }
            a.accumulate_grad(&da);
        }
        Op::Row(a, index) => {
            let mut da = Tensor::zeros(a.shape().0, a.shape().1);
            for c in 0..g.cols() {
                da.set(*index, c, g.get(0, c));
            }
            a.accumulate_grad(&da);
        }
        Op::ConcatRows(parts) => {
            for (r, p) in parts.iter().enumerate() {
                let da = Tensor::row_vector(g.row(r).to_vec());
                p.accumulate_grad(&da);
            }
        }
        Op::Sum(a) => {
            let da = Tensor::filled(a.shape().0, a.shape().1, g.item());
            a.accumulate_grad(&da);
        }
        Op::CrossEntropy { pred, target } => {
            let p = pred.value().get(0, *target);
            let mut dp = Tensor::zeros(1, pred.shape().1);
            if p > LOG_CLAMP {
                dp.set(0, *target, -g.item() / p);
            }
            pred.accumulate_grad(&dp);
        }
        Op::Jsd(a, b) => {
            // d/da_i = ln(a_i / m_i) / 2, and symmetrically for b.
            let (av, bv) = (a.value(), b.value());
            let cols = av.cols();
            let mut da = Tensor::zeros(1, cols);
            let mut db = Tensor::zeros(1, cols);
            for c in 0..cols {
                let (pa, pb) = (av.get(0, c), bv.get(0, c));
                let m = (0.5 * (pa + pb)).max(LOG_CLAMP);
                da.set(0, c, g.item() * 0.5 * (pa.max(LOG_CLAMP) / m).ln());
                db.set(0, c, g.item() * 0.5 * (pb.max(LOG_CLAMP) / m).ln());
            }
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        }
        Op::StopGrad(_) => {}
    }
    Ok(())
}
