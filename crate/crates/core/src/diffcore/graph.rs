use crate::error::{shape_err, Error, Result};

use super::tensor::{axis_split, Scalar, Tensor};

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Max,
    Product,
}

/// Tag of the operation that produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Leaf,
    MatMul,
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    Concat,
    Slice,
    Reshape,
    Reduce(ReduceKind),
    Scale,
    BatchNorm,
    BinaryCrossEntropy,
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    Reduce {
        x: NodeId,
        axis: usize,
        kind: ReduceKind,
        argmax: Vec<usize>,
    },
    Scale {
        x: NodeId,
        factor: T,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Bce {
        p: NodeId,
        labels: Vec<T>,
        eps: T,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Sigmoid(x) | Op::Tanh(x) | Op::Relu(x) | Op::Reshape(x) => vec![*x],
            Op::Softmax { x, .. }
            | Op::Slice { x, .. }
            | Op::Reduce { x, .. }
            | Op::Scale { x, .. } => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Bce { p, .. } => vec![*p],
        }
    }

    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Add(..) => Primitive::Add,
            Op::Mul(..) => Primitive::Mul,
            Op::Sigmoid(_) => Primitive::Sigmoid,
            Op::Tanh(_) => Primitive::Tanh,
            Op::Relu(_) => Primitive::Relu,
            Op::Softmax { .. } => Primitive::Softmax,
            Op::Concat { .. } => Primitive::Concat,
            Op::Slice { .. } => Primitive::Slice,
            Op::Reshape(_) => Primitive::Reshape,
            Op::Reduce { kind, .. } => Primitive::Reduce(*kind),
            Op::Scale { .. } => Primitive::Scale,
            Op::BatchNorm { .. } => Primitive::BatchNorm,
            Op::Bce { .. } => Primitive::BinaryCrossEntropy,
        }
    }
}

struct Node<T> {
    data: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-feature moments of a training-mode batch norm call.
#[derive(Clone, Debug)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance, the usual input to running statistics.
    pub unbiased_var: Vec<T>,
}

/// Append-only computation graph with reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward sweep is a single reverse pass over the arena. Gradients are
/// accumulated across repeated [`Graph::backward`] calls until
/// [`Graph::zero_grad`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::Axis { axis, rank })
    } else {
        Ok(())
    }
}

/// `b` broadcasts against `a` when its shape is a suffix of `a`'s shape.
fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Tensor<T>, op: Op<T>) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            data,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, data: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            data,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that takes part in differentiation.
    pub fn variable(&mut self, data: Tensor<T>) -> NodeId {
        self.leaf(data, true)
    }

    pub fn constant(&mut self, data: Tensor<T>) -> NodeId {
        self.leaf(data, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].data.shape()
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn primitive(&self, id: NodeId) -> Primitive {
        self.nodes[id.0].op.primitive()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Smallest `|x|` over the inputs of every relu node, `None` without
    /// relu nodes. Central differences with steps well below this margin stay
    /// on one side of each kink.
    pub fn relu_margin(&self) -> Option<T> {
        self.node_ids()
            .filter(|&id| self.primitive(id) == Primitive::Relu)
            .flat_map(|id| {
                self.value(self.parents(id)[0])
                    .data()
                    .iter()
                    .map(|v| v.abs())
            })
            .reduce(|a, b| a.min(b))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    // ---- forward primitives -------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    fn broadcast_binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta.shape(), tb.shape()) {
            return Err(shape_err(format!(
                "{name} {:?} with {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let bl = tb.len();
        let data = if bl == 0 {
            Vec::new()
        } else {
            ta.data()
                .chunks(bl)
                .flat_map(|row| row.iter().zip(tb.data()).map(|(&x, &y)| f(x, y)))
                .collect()
        };
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Elementwise sum; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let data = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(data, Op::Add(a, b)))
    }

    /// Elementwise product; `b` may broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let data = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(data, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).map(sigmoid);
        self.push(data, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).map(|v| v.tanh());
        self.push(data, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).map(|v| v.max(T::zero()));
        self.push(data, Op::Relu(x))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let data = self.value(x).map(|v| v * factor);
        self.push(data, Op::Scale { x, factor })
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(x);
        check_axis(axis, t.rank())?;
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + j;
                let max = (0..n).map(|a| src[idx(a)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for a in 0..n {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total = total + e;
                }
                for a in 0..n {
                    out[idx(a)] = out[idx(a)] / total;
                }
            }
        }
        let data = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(data, Op::Softmax { x, axis }))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        check_axis(axis, base.len())?;
        let mut total = 0;
        for &id in inputs {
            let s = self.shape(id);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err(format!(
                    "concat {base:?} with {s:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &id in inputs {
                let t = self.value(id);
                let n = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let data = Tensor::new(shape, out)?;
        Ok(self.push(
            data,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Half-open range `[start, end)` along `axis`; rank is preserved.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(x);
        check_axis(axis, t.rank())?;
        let (outer, n, inner) = axis_split(t.shape(), axis);
        if start > end || end > n {
            return Err(shape_err(format!(
                "slice [{start}, {end}) out of bounds for axis length {n}"
            )));
        }
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&t.data()[from..from + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let data = Tensor::new(shape, out)?;
        Ok(self.push(data, Op::Slice { x, axis, start }))
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let data = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(data, Op::Reshape(x)))
    }

    /// Reduction over `axis`; the axis is removed from the output shape.
    pub fn reduce(&mut self, x: NodeId, axis: usize, kind: ReduceKind) -> Result<NodeId> {
        let t = self.value(x);
        check_axis(axis, t.rank())?;
        let (outer, n, inner) = axis_split(t.shape(), axis);
        if n == 0 {
            return Err(shape_err("reduction over an empty axis"));
        }
        let src = t.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = Vec::new();
        if kind == ReduceKind::Max {
            argmax = vec![0; outer * inner];
        }
        let n_t = T::from_f64(n as f64);
        for o in 0..outer {
            for j in 0..inner {
                let at = |a: usize| src[(o * n + a) * inner + j];
                let dst = o * inner + j;
                out[dst] = match kind {
                    ReduceKind::Mean => (0..n).map(at).fold(T::zero(), |s, v| s + v) / n_t,
                    ReduceKind::Product => (0..n).map(at).fold(T::one(), |s, v| s * v),
                    ReduceKind::Max => {
                        // first maximiser wins ties
                        let mut best = 0;
                        for a in 1..n {
                            if at(a) > at(best) {
                                best = a;
                            }
                        }
                        argmax[dst] = best;
                        at(best)
                    }
                };
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let data = Tensor::new(shape, out)?;
        Ok(self.push(
            data,
            Op::Reduce {
                x,
                axis,
                kind,
                argmax,
            },
        ))
    }

    pub fn reduce_mean(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Mean)
    }

    pub fn reduce_max(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Max)
    }

    pub fn reduce_product(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Product)
    }

    fn batch_norm_shapes(&self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err(format!("batch norm expects [B, D], got {s:?}")));
        }
        let d = s[1];
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(format!(
                "batch norm affine parameters must be [{d}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok((s[0], d))
    }

    fn push_batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[T],
        inv_std: Vec<T>,
        batch_stats: bool,
    ) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = shape[1];
        let src = self.value(x).data();
        let normalized: Vec<T> = src
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i % d]) * inv_std[i % d])
            .collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let out: Vec<T> = normalized
            .iter()
            .enumerate()
            .map(|(i, &v)| v * g[i % d] + b[i % d])
            .collect();
        let data = Tensor::new(shape, out)?;
        Ok(self.push(
            data,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Normalises each feature by the batch mean and population variance,
    /// then applies the affine `gamma * x + beta`.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: T,
    ) -> Result<(NodeId, BatchMoments<T>)> {
        let (b, d) = self.batch_norm_shapes(x, gamma, beta)?;
        if b < 2 {
            return Err(Error::Batch(format!(
                "batch norm in training mode needs at least 2 samples, got {b}"
            )));
        }
        let src = self.value(x).data();
        let bt = T::from_f64(b as f64);
        let mut mean = vec![T::zero(); d];
        for row in src.chunks(d) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / bt);
        let mut sq = vec![T::zero(); d];
        for row in src.chunks(d) {
            for ((s, &v), &m) in sq.iter_mut().zip(row).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let inv_std: Vec<T> = sq
            .iter()
            .map(|&s| T::one() / (s / bt + eps).sqrt())
            .collect();
        let unbiased_var = sq
            .iter()
            .map(|&s| s / T::from_f64((b - 1) as f64))
            .collect();
        let moments = BatchMoments {
            mean: mean.clone(),
            unbiased_var,
        };
        let id = self.push_batch_norm(x, gamma, beta, &mean, inv_std, true)?;
        Ok((id, moments))
    }

    /// Batch norm with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<NodeId> {
        let (_, d) = self.batch_norm_shapes(x, gamma, beta)?;
        if running_mean.len() != d || running_var.len() != d {
            return Err(shape_err("running statistics do not match feature count"));
        }
        let inv_std = running_var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        self.push_batch_norm(x, gamma, beta, running_mean, inv_std, false)
    }

    /// Mean binary cross-entropy of probabilities `p` (clamped to
    /// `[eps, 1 - eps]`) against 0/1 labels. Produces a rank-0 scalar.
    pub fn bce(&mut self, p: NodeId, labels: &[T], eps: T) -> Result<NodeId> {
        let t = self.value(p);
        if t.rank() != 1 || t.len() != labels.len() || labels.is_empty() {
            return Err(shape_err(format!(
                "bce expects [B] probabilities with B labels, got {:?} and {}",
                t.shape(),
                labels.len()
            )));
        }
        let hi = T::one() - eps;
        let total = t
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.max(eps).min(hi);
                -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            })
            .fold(T::zero(), |a, b| a + b);
        let loss = total / T::from_f64(labels.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                labels: labels.to_vec(),
                eps,
            },
        ))
    }

    // ---- reverse sweep ------------------------------------------------------

    /// Propagates d(root)/d(node) into every reachable node that requires
    /// gradients. Results are added onto any gradient already stored.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("unknown node {}", root.0)));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = Vec::new();
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(existing) => existing.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, adj: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = node.data.data();
        let gd = g.data();
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if wants(*a) {
                    let acc = slot(adj, *a, self.shape(*a));
                    // dA = dC * B^T
                    T::gemm(
                        m,
                        n,
                        k,
                        gd,
                        (n as isize, 1),
                        self.value(*b).data(),
                        (1, n as isize),
                        T::one(),
                        acc.data_mut(),
                    );
                }
                if wants(*b) {
                    let acc = slot(adj, *b, self.shape(*b));
                    // dB = A^T * dC
                    T::gemm(
                        k,
                        m,
                        n,
                        self.value(*a).data(),
                        (1, k as isize),
                        gd,
                        (n as isize, 1),
                        T::one(),
                        acc.data_mut(),
                    );
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    slot(adj, *a, self.shape(*a)).add_assign(g);
                }
                if wants(*b) {
                    let acc = slot(adj, *b, self.shape(*b)).data_mut();
                    let bl = acc.len();
                    for chunk in gd.chunks(bl) {
                        for (s, &v) in acc.iter_mut().zip(chunk) {
                            *s = *s + v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let bl = vb.len();
                if wants(*a) {
                    let acc = slot(adj, *a, self.shape(*a)).data_mut();
                    for (idx, s) in acc.iter_mut().enumerate() {
                        *s = *s + gd[idx] * vb[idx % bl];
                    }
                }
                if wants(*b) {
                    let acc = slot(adj, *b, self.shape(*b)).data_mut();
                    for (idx, (&gv, &av)) in gd.iter().zip(va).enumerate() {
                        acc[idx % bl] = acc[idx % bl] + gv * av;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                for ((s, &gv), &yv) in acc.iter_mut().zip(gd).zip(y) {
                    *s = *s + gv * yv * (T::one() - yv);
                }
            }
            Op::Tanh(x) => {
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                for ((s, &gv), &yv) in acc.iter_mut().zip(gd).zip(y) {
                    *s = *s + gv * (T::one() - yv * yv);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                for ((s, &gv), &v) in acc.iter_mut().zip(gd).zip(xv) {
                    if v > T::zero() {
                        *s = *s + gv;
                    }
                }
            }
            Op::Scale { x, factor } => {
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                for (s, &gv) in acc.iter_mut().zip(gd) {
                    *s = *s + gv * *factor;
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(node.data.shape(), *axis);
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |a: usize| (o * n + a) * inner + j;
                        let dot = (0..n).fold(T::zero(), |s, a| s + gd[idx(a)] * y[idx(a)]);
                        for a in 0..n {
                            acc[idx(a)] = acc[idx(a)] + y[idx(a)] * (gd[idx(a)] - dot);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(node.data.shape(), *axis);
                let mut offset = 0;
                for &id in inputs {
                    let n = self.shape(id)[*axis];
                    if wants(id) {
                        let acc = slot(adj, id, self.shape(id)).data_mut();
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * n * inner;
                            for (s, &v) in acc[dst..dst + n * inner]
                                .iter_mut()
                                .zip(&gd[src..src + n * inner])
                            {
                                *s = *s + v;
                            }
                        }
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let len = node.data.shape()[*axis];
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    for (s, &v) in acc[dst..dst + len * inner]
                        .iter_mut()
                        .zip(&gd[src..src + len * inner])
                    {
                        *s = *s + v;
                    }
                }
            }
            Op::Reshape(x) => {
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                for (s, &v) in acc.iter_mut().zip(gd) {
                    *s = *s + v;
                }
            }
            Op::Reduce {
                x,
                axis,
                kind,
                argmax,
            } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let xv = self.value(*x).data();
                let acc = slot(adj, *x, self.shape(*x)).data_mut();
                let n_t = T::from_f64(n as f64);
                let mut loo = vec![T::zero(); n];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |a: usize| (o * n + a) * inner + j;
                        let out = o * inner + j;
                        let gv = gd[out];
                        match kind {
                            ReduceKind::Mean => {
                                for a in 0..n {
                                    acc[idx(a)] = acc[idx(a)] + gv / n_t;
                                }
                            }
                            ReduceKind::Max => {
                                let a = argmax[out];
                                acc[idx(a)] = acc[idx(a)] + gv;
                            }
                            ReduceKind::Product => {
                                leave_one_out_products(
                                    (0..n).map(|a| xv[idx(a)]),
                                    y[out],
                                    &mut loo,
                                );
                                for a in 0..n {
                                    acc[idx(a)] = acc[idx(a)] + gv * loo[a];
                                }
                            }
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let shape = self.shape(*x);
                let (b, d) = (shape[0], shape[1]);
                let gam = self.value(*gamma).data();
                if wants(*gamma) {
                    let acc = slot(adj, *gamma, &[d]).data_mut();
                    for (idx, (&gv, &xh)) in gd.iter().zip(normalized).enumerate() {
                        acc[idx % d] = acc[idx % d] + gv * xh;
                    }
                }
                if wants(*beta) {
                    let acc = slot(adj, *beta, &[d]).data_mut();
                    for (idx, &gv) in gd.iter().enumerate() {
                        acc[idx % d] = acc[idx % d] + gv;
                    }
                }
                if wants(*x) {
                    let acc = slot(adj, *x, shape).data_mut();
                    if *batch_stats {
                        let bt = T::from_f64(b as f64);
                        let mut sum_dxh = vec![T::zero(); d];
                        let mut sum_dxh_xh = vec![T::zero(); d];
                        for (idx, (&gv, &xh)) in gd.iter().zip(normalized).enumerate() {
                            let dxh = gv * gam[idx % d];
                            sum_dxh[idx % d] = sum_dxh[idx % d] + dxh;
                            sum_dxh_xh[idx % d] = sum_dxh_xh[idx % d] + dxh * xh;
                        }
                        for (idx, s) in acc.iter_mut().enumerate() {
                            let f = idx % d;
                            let dxh = gd[idx] * gam[f];
                            *s = *s
                                + inv_std[f] / bt
                                    * (bt * dxh - sum_dxh[f] - normalized[idx] * sum_dxh_xh[f]);
                        }
                    } else {
                        for (idx, s) in acc.iter_mut().enumerate() {
                            let f = idx % d;
                            *s = *s + gd[idx] * gam[f] * inv_std[f];
                        }
                    }
                }
            }
            Op::Bce { p, labels, eps } => {
                let pv = self.value(*p).data();
                let scale = gd[0] / T::from_f64(labels.len() as f64);
                let hi = T::one() - *eps;
                let acc = slot(adj, *p, self.shape(*p)).data_mut();
                for ((s, &pi), &yi) in acc.iter_mut().zip(pv).zip(labels) {
                    if pi > *eps && pi < hi {
                        *s = *s + scale * (-yi / pi + (T::one() - yi) / (T::one() - pi));
                    }
                }
            }
        }
    }
}

fn slot<'a, T: Scalar>(
    adj: &'a mut [Option<Tensor<T>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut Tensor<T> {
    adj[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Fills `out[i]` with the product of every value except the i-th.
///
/// Uses `total / x_i` when no factor is zero and falls back to
/// prefix/suffix products otherwise.
fn leave_one_out_products<T: Scalar>(values: impl Iterator<Item = T>, total: T, out: &mut [T]) {
    let vals: Vec<T> = values.collect();
    if vals.iter().all(|&v| v != T::zero()) {
        for (o, &v) in out.iter_mut().zip(&vals) {
            *o = total / v;
        }
        return;
    }
    let mut prefix = T::one();
    for (o, &v) in out.iter_mut().zip(&vals) {
        *o = prefix;
        prefix = prefix * v;
    }
    let mut suffix = T::one();
    for (o, &v) in out.iter_mut().zip(&vals).rev() {
        *o = *o * suffix;
        suffix = suffix * v;
    }
}
