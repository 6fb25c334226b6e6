//! Eager reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every operator application computes its output
//! immediately and appends one node, so node order is always topological.
//! Trainable parameters live in a [`ParamSet`] the graph borrows; each
//! parameter gets at most one leaf node per graph, and [`Graph::backward`]
//! returns the gradients of those leaves keyed by [`ParamId`].
//!
//! The operator set is closed: embedding lookup, matrix product, addition,
//! tanh, sigmoid, Hadamard product, concatenation, softmax cross-entropy
//! and mean. Shapes never broadcast.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }
}

/// Gradients of a scalar loss with respect to the parameters that lie on a
/// path to it. Parameters absent from the map have zero gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    grads: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients {
            grads: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor<T>) {
        self.grads.insert(id, grad);
    }

    /// Gradient for `id`, materialising zeros when it is off every path.
    pub fn get_or_zero(&self, id: ParamId, params: &ParamSet<T>) -> Tensor<T> {
        self.grads
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().map(|(&id, t)| (id, t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<T>)> {
        self.grads.iter_mut().map(|(&id, t)| (id, t))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .values()
            .map(Tensor::squared_norm)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    /// Rescale so the global L2 norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            let scale = max_norm / norm;
            for g in self.grads.values_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
        }
        norm
    }
}

impl<T: Scalar> Default for Gradients<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeRef(usize);

/// Operator applicable through [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operator {
    /// Row `index` of a 2-D table.
    Lookup {
        index: usize,
    },
    /// `[m,k]·[k] -> [m]` or `[m,k]·[k,n] -> [m,n]`.
    MatMul,
    Add,
    Tanh,
    Sigmoid,
    Hadamard,
    /// Concatenation of one or more vectors.
    Concat,
    /// `-log softmax(logits)[gold]` for a logit vector.
    SoftmaxCrossEntropy {
        gold: usize,
    },
    /// Mean over all elements.
    Mean,
}

impl Operator {
    pub fn kind(&self) -> OpKind {
        match self {
            Operator::Lookup { .. } => OpKind::Lookup,
            Operator::MatMul => OpKind::MatMul,
            Operator::Add => OpKind::Add,
            Operator::Tanh => OpKind::Tanh,
            Operator::Sigmoid => OpKind::Sigmoid,
            Operator::Hadamard => OpKind::Hadamard,
            Operator::Concat => OpKind::Concat,
            Operator::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Operator::Mean => OpKind::Mean,
        }
    }
}

/// Operator identity without operands, used for reporting and fault hooks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Lookup,
    MatMul,
    Add,
    Tanh,
    Sigmoid,
    Hadamard,
    Concat,
    SoftmaxCrossEntropy,
    Mean,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Lookup,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Hadamard,
        OpKind::Concat,
        OpKind::SoftmaxCrossEntropy,
        OpKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Lookup => "lookup",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Hadamard => "hadamard",
            OpKind::Concat => "concat",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Lookup {
        table: usize,
        index: usize,
    },
    MatMul(usize, usize),
    Add(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Hadamard(usize, usize),
    Concat(Vec<usize>),
    SoftmaxCrossEntropy {
        logits: usize,
        gold: usize,
        probs: Vec<T>,
    },
    Mean(usize),
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Input | Op::Param(_) => return None,
            Op::Lookup { .. } => OpKind::Lookup,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Concat(_) => OpKind::Concat,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Mean(_) => OpKind::Mean,
        })
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    // `None` for parameter leaves, whose value lives in the ParamSet.
    value: Option<Tensor<T>>,
}

/// Computation tape. Single-threaded; distinct graphs are independent.
pub struct Graph<'p, T> {
    params: Option<&'p ParamSet<T>>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<usize>>,
    grads: Vec<Option<Vec<T>>>,
    fault: Option<OpKind>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph with no parameter store; only [`Graph::input`] leaves.
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn with_params(params: &'p ParamSet<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; params.len()],
            grads: Vec::new(),
            fault: None,
        }
    }

    /// Corrupts the backward rule of one operator kind. Exists only so the
    /// gradient checker can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Option<Tensor<T>>) -> NodeRef {
        self.nodes.push(Node { op, value });
        NodeRef(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeRef {
        self.push(Op::Input, Some(value))
    }

    /// Leaf for a parameter of the borrowed set; repeated calls return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> NodeRef {
        let params = self
            .params
            .expect("graph was built without a parameter set");
        assert!(id.0 < params.len(), "parameter id out of range");
        if let Some(n) = self.param_nodes[id.0] {
            return NodeRef(n);
        }
        let r = self.push(Op::Param(id), None);
        self.param_nodes[id.0] = Some(r.0);
        r
    }

    fn value_at(&self, i: usize) -> &Tensor<T> {
        let node = &self.nodes[i];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.params.expect("param node without params").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn value(&self, r: NodeRef) -> &Tensor<T> {
        self.value_at(r.0)
    }

    fn check(&self, r: NodeRef) -> Result<usize> {
        if r.0 < self.nodes.len() {
            Ok(r.0)
        } else {
            Err(Error::InvalidArgument(format!(
                "node {} does not exist in a graph of {} nodes",
                r.0,
                self.nodes.len()
            )))
        }
    }

    /// Applies `op` to `inputs`, computing the output eagerly.
    pub fn apply(&mut self, op: Operator, inputs: &[NodeRef]) -> Result<NodeRef> {
        let arity_err = |want: &str| {
            Error::InvalidArgument(format!(
                "{} expects {want}, got {} inputs",
                op.kind(),
                inputs.len()
            ))
        };
        let idx: Vec<usize> = inputs
            .iter()
            .map(|&r| self.check(r))
            .collect::<Result<_>>()?;
        match op {
            Operator::Lookup { index } => {
                let [t] = idx[..] else {
                    return Err(arity_err("1 input"));
                };
                self.lookup_at(t, index)
            }
            Operator::MatMul => {
                let [a, b] = idx[..] else {
                    return Err(arity_err("2 inputs"));
                };
                self.matmul_at(a, b)
            }
            Operator::Add | Operator::Hadamard => {
                let [a, b] = idx[..] else {
                    return Err(arity_err("2 inputs"));
                };
                self.elementwise_binary(op.kind(), a, b)
            }
            Operator::Tanh | Operator::Sigmoid => {
                let [a] = idx[..] else {
                    return Err(arity_err("1 input"));
                };
                Ok(self.elementwise_unary(op.kind(), a))
            }
            Operator::Concat => {
                if idx.is_empty() {
                    return Err(arity_err("at least 1 input"));
                }
                self.concat_at(idx)
            }
            Operator::SoftmaxCrossEntropy { gold } => {
                let [l] = idx[..] else {
                    return Err(arity_err("1 input"));
                };
                self.softmax_ce_at(l, gold)
            }
            Operator::Mean => {
                let [a] = idx[..] else {
                    return Err(arity_err("1 input"));
                };
                let v = self.value_at(a);
                let n = T::from_usize(v.len()).unwrap();
                let mean = v.data().iter().copied().sum::<T>() / n;
                Ok(self.push(Op::Mean(a), Some(Tensor::scalar(mean))))
            }
        }
    }

    pub fn lookup(&mut self, table: NodeRef, index: usize) -> Result<NodeRef> {
        self.apply(Operator::Lookup { index }, &[table])
    }

    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.apply(Operator::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.apply(Operator::Add, &[a, b])
    }

    pub fn hadamard(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.apply(Operator::Hadamard, &[a, b])
    }

    pub fn tanh(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.apply(Operator::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.apply(Operator::Sigmoid, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        self.apply(Operator::Concat, parts)
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeRef, gold: usize) -> Result<NodeRef> {
        self.apply(Operator::SoftmaxCrossEntropy { gold }, &[logits])
    }

    pub fn mean(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.apply(Operator::Mean, &[a])
    }

    fn lookup_at(&mut self, t: usize, index: usize) -> Result<NodeRef> {
        let table = self.value_at(t);
        if table.shape().len() != 2 {
            return Err(Error::Shape {
                op: "lookup",
                lhs: table.shape().to_vec(),
                rhs: vec![index],
            });
        }
        if index >= table.shape()[0] {
            return Err(Error::InvalidArgument(format!(
                "lookup: row {index} out of range for table {:?}",
                table.shape()
            )));
        }
        let row = Tensor::vector(table.row(index).to_vec());
        Ok(self.push(Op::Lookup { table: t, index }, Some(row)))
    }

    fn matmul_at(&mut self, a: usize, b: usize) -> Result<NodeRef> {
        let (av, bv) = (self.value_at(a), self.value_at(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let out = match sb {
            [kb] if *kb == k => {
                let x = bv.data();
                let w = av.data();
                let y: Vec<T> = (0..m).map(|i| dot(&w[i * k..(i + 1) * k], x)).collect();
                Tensor::vector(y)
            }
            [kb, n] if *kb == k => {
                let n = *n;
                let (w, x) = (av.data(), bv.data());
                let mut y = vec![T::zero(); m * n];
                for i in 0..m {
                    for p in 0..k {
                        let wip = w[i * k + p];
                        let yrow = &mut y[i * n..(i + 1) * n];
                        for (yj, &xj) in yrow.iter_mut().zip(&x[p * n..(p + 1) * n]) {
                            *yj += wip * xj;
                        }
                    }
                }
                Tensor::new(vec![m, n], y)?
            }
            _ => return Err(mismatch()),
        };
        Ok(self.push(Op::MatMul(a, b), Some(out)))
    }

    fn elementwise_binary(&mut self, kind: OpKind, a: usize, b: usize) -> Result<NodeRef> {
        let (av, bv) = (self.value_at(a), self.value_at(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: kind.name(),
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data: Vec<T> = match kind {
            OpKind::Add => av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x + y)
                .collect(),
            _ => av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x * y)
                .collect(),
        };
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let op = match kind {
            OpKind::Add => Op::Add(a, b),
            _ => Op::Hadamard(a, b),
        };
        Ok(self.push(op, Some(out)))
    }

    fn elementwise_unary(&mut self, kind: OpKind, a: usize) -> NodeRef {
        let av = self.value_at(a);
        let data: Vec<T> = match kind {
            OpKind::Tanh => av.data().iter().map(|x| x.tanh()).collect(),
            _ => av.data().iter().map(|&x| sigmoid(x)).collect(),
        };
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let op = match kind {
            OpKind::Tanh => Op::Tanh(a),
            _ => Op::Sigmoid(a),
        };
        self.push(op, Some(out))
    }

    fn concat_at(&mut self, idx: Vec<usize>) -> Result<NodeRef> {
        let mut data = Vec::new();
        for &i in &idx {
            let v = self.value_at(i);
            if v.shape().len() != 1 {
                let first = self.value_at(idx[0]).shape().to_vec();
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: v.shape().to_vec(),
                });
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Op::Concat(idx), Some(Tensor::vector(data))))
    }

    fn softmax_ce_at(&mut self, l: usize, gold: usize) -> Result<NodeRef> {
        let lv = self.value_at(l);
        if lv.shape().len() != 1 {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![gold],
            });
        }
        if gold >= lv.len() {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy: gold class {gold} out of range for {} logits",
                lv.len()
            )));
        }
        let x = lv.data();
        let max = x.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let loss = max + total.ln() - x[gold];
        let probs = exps.into_iter().map(|e| e / total).collect();
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits: l,
                gold,
                probs,
            },
            Some(Tensor::scalar(loss)),
        ))
    }

    /// Gradient of the last `backward` target with respect to node `r`;
    /// zero when `r` is not on a path to it.
    pub fn grad(&self, r: NodeRef) -> Tensor<T> {
        let shape = self.value_at(r.0).shape().to_vec();
        match self.grads.get(r.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Back-propagates from a scalar node and returns parameter gradients.
    pub fn backward(&mut self, loss: NodeRef) -> Result<Gradients<T>> {
        let l = self.check(loss)?;
        let lv = self.value_at(l);
        if !lv.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[l] = Some(vec![T::one()]);

        for i in (0..=l).rev() {
            let Some(mut g) = self.grads[i].take() else {
                continue;
            };
            if let Some(kind) = self.nodes[i].op.kind() {
                if self.fault == Some(kind) {
                    g.iter_mut().for_each(|x| *x *= T::of(1.5));
                }
            }
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }

        let mut out = Gradients::new();
        for (pid, node) in self.param_nodes.iter().enumerate() {
            if let Some(n) = node {
                if let Some(g) = &self.grads[*n] {
                    let shape = self.value_at(*n).shape().to_vec();
                    out.insert(ParamId(pid), Tensor::new(shape, g.clone())?);
                }
            }
        }
        Ok(out)
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let Graph {
            params,
            nodes,
            grads,
            ..
        } = self;
        let value = |j: usize| -> &Tensor<T> {
            match (&nodes[j].value, &nodes[j].op) {
                (Some(v), _) => v,
                (None, Op::Param(id)) => params.unwrap().get(*id),
                _ => unreachable!(),
            }
        };
        // Each arm touches the gradient buffers of its inputs one at a time,
        // so a node that appears twice (e.g. x ⊙ x) accumulates both terms.
        match &nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Lookup { table, index } => {
                let t = *table;
                let len = value(t).len();
                let d = g.len();
                let buf = grads[t].get_or_insert_with(|| vec![T::zero(); len]);
                for (dst, &gi) in buf[index * d..(index + 1) * d].iter_mut().zip(g) {
                    *dst += gi;
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (av, bv) = (value(a), value(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.shape().len() == 2 {
                    bv.shape()[1]
                } else {
                    1
                };
                let (w, x) = (av.data(), bv.data());
                // dA = G·Bᵀ
                {
                    let ga = grads[a].get_or_insert_with(|| vec![T::zero(); w.len()]);
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = T::zero();
                            for j in 0..n {
                                s += g[r * n + j] * x[c * n + j];
                            }
                            ga[r * k + c] += s;
                        }
                    }
                }
                // dB = Aᵀ·G
                {
                    let gb = grads[b].get_or_insert_with(|| vec![T::zero(); x.len()]);
                    for r in 0..m {
                        for c in 0..k {
                            let wrc = w[r * k + c];
                            for j in 0..n {
                                gb[c * n + j] += wrc * g[r * n + j];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for j in [*a, *b] {
                    let buf = grads[j].get_or_insert_with(|| vec![T::zero(); g.len()]);
                    for (dst, &gi) in buf.iter_mut().zip(g) {
                        *dst += gi;
                    }
                }
            }
            Op::Hadamard(a, b) => {
                let (a, b) = (*a, *b);
                let (av, bv) = (value(a).data(), value(b).data());
                let buf = grads[a].get_or_insert_with(|| vec![T::zero(); g.len()]);
                for ((dst, &gi), &y) in buf.iter_mut().zip(g).zip(bv) {
                    *dst += gi * y;
                }
                let buf = grads[b].get_or_insert_with(|| vec![T::zero(); g.len()]);
                for ((dst, &gi), &x) in buf.iter_mut().zip(g).zip(av) {
                    *dst += gi * x;
                }
            }
            Op::Tanh(a) => {
                let y = nodes[i].value.as_ref().unwrap().data();
                let buf = grads[*a].get_or_insert_with(|| vec![T::zero(); g.len()]);
                for ((dst, &gi), &yi) in buf.iter_mut().zip(g).zip(y) {
                    *dst += gi * (T::one() - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.as_ref().unwrap().data();
                let buf = grads[*a].get_or_insert_with(|| vec![T::zero(); g.len()]);
                for ((dst, &gi), &yi) in buf.iter_mut().zip(g).zip(y) {
                    *dst += gi * yi * (T::one() - yi);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &j in parts {
                    let len = value(j).len();
                    let buf = grads[j].get_or_insert_with(|| vec![T::zero(); len]);
                    for (dst, &gi) in buf.iter_mut().zip(&g[offset..offset + len]) {
                        *dst += gi;
                    }
                    offset += len;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                gold,
                probs,
            } => {
                let g0 = g[0];
                let buf = grads[*logits].get_or_insert_with(|| vec![T::zero(); probs.len()]);
                for (c, (dst, &p)) in buf.iter_mut().zip(probs).enumerate() {
                    let target = if c == *gold { T::one() } else { T::zero() };
                    *dst += g0 * (p - target);
                }
            }
            Op::Mean(a) => {
                let len = value(*a).len();
                let share = g[0] / T::from_usize(len).unwrap();
                let buf = grads[*a].get_or_insert_with(|| vec![T::zero(); len]);
                buf.iter_mut().for_each(|x| *x += share);
            }
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec3(g: &mut Graph<'_, f64>, v: [f64; 3]) -> NodeRef {
        g.input(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn identity_matmul_returns_vector() {
        let mut g = Graph::<f64>::new();
        let i3 = g.input(Tensor::identity(3));
        let v = vec3(&mut g, [0.3, -1.2, 4.0]);
        let y = g.matmul(i3, v).unwrap();
        assert_eq!(g.value(y).data(), &[0.3, -1.2, 4.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::zeros(&[2, 3]));
        let s = g.sigmoid(z).unwrap();
        assert!(g.value(s).data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn cross_entropy_of_equal_logits_is_ln2() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::vector(vec![0.0, 0.0]));
        let ce = g.softmax_cross_entropy(l, 0).unwrap();
        assert!((g.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::vector(vec![1000.0, 0.0]));
        let ce = g.softmax_cross_entropy(l, 1).unwrap();
        assert!((g.value(ce).item() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_names_operator_and_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[4]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");

        let c = g.input(Tensor::zeros(&[3]));
        let err = g.add(b, c).unwrap_err().to_string();
        assert!(
            err.contains("add") && err.contains("[4]") && err.contains("[3]"),
            "{err}"
        );
    }

    #[test]
    fn scalar_product_gradient_is_other_operand() {
        let mut params = ParamSet::<f64>::new();
        let x = params
            .insert("x", Tensor::vector(vec![1.0, 2.0, 3.0]))
            .unwrap();
        let y = params
            .insert("y", Tensor::vector(vec![-0.5, 0.25, 4.0]))
            .unwrap();
        let mut g = Graph::with_params(&params);
        let (xn, yn) = (g.param(x), g.param(y));
        let prod = g.hadamard(xn, yn).unwrap();
        let s = g.mean(prod).unwrap();
        let grads = g.backward(s).unwrap();
        // mean scales by 1/3.
        let gx = grads.get(x).unwrap().data().to_vec();
        for (a, b) in gx.iter().zip([-0.5, 0.25, 4.0]) {
            assert!((a * 3.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_loss_has_zero_parameter_gradient() {
        let mut params = ParamSet::<f64>::new();
        let w = params.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::with_params(&params);
        let wn = g.param(w);
        let c = g.input(Tensor::vector(vec![5.0, 7.0]));
        let m = g.mean(c).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(grads.get(w).is_none());
        assert!(grads
            .get_or_zero(w, &params)
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(g.grad(wn).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let v = vec3(&mut g, [1.0, 2.0, 3.0]);
        assert!(g.backward(v).is_err());
    }

    #[test]
    fn repeated_operand_accumulates_both_terms() {
        let mut params = ParamSet::<f64>::new();
        let x = params.insert("x", Tensor::vector(vec![3.0])).unwrap();
        let mut g = Graph::with_params(&params);
        let xn = g.param(x);
        let sq = g.hadamard(xn, xn).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn node_gradients_match_value_shapes() {
        let mut params = ParamSet::<f64>::new();
        let w = params
            .insert(
                "w",
                Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
            )
            .unwrap();
        let mut g = Graph::with_params(&params);
        let wn = g.param(w);
        let x = vec3(&mut g, [1.0, -1.0, 0.5]);
        let y = g.matmul(wn, x).unwrap();
        let t = g.tanh(y).unwrap();
        let loss = g.softmax_cross_entropy(t, 1).unwrap();
        g.backward(loss).unwrap();
        for r in [wn, x, y, t, loss] {
            assert_eq!(g.grad(r).shape(), g.value(r).shape());
        }
    }

    #[test]
    fn lookup_gradient_lands_in_one_row() {
        let mut params = ParamSet::<f64>::new();
        let e = params
            .insert(
                "e",
                Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            )
            .unwrap();
        let mut g = Graph::with_params(&params);
        let en = g.param(e);
        let row = g.lookup(en, 1).unwrap();
        assert_eq!(g.value(row).data(), &[3.0, 4.0]);
        let m = g.mean(row).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(
            grads.get(e).unwrap().data(),
            &[0.0, 0.0, 0.5, 0.5, 0.0, 0.0]
        );
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut grads = Gradients::<f64>::new();
        grads.insert(ParamId(0), Tensor::vector(vec![3.0, 4.0]));
        let before = grads.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
