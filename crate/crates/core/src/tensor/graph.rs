//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is a tape of shape-checked nodes in topological order (every
//! node's inputs precede it by construction). Named leaf inputs are bound at
//! evaluation time, so one graph can be re-evaluated against many bindings —
//! the attack loops re-run a fixed graph a thousand times with an updated
//! adversarial image. Graphs are immutable after [`GraphBuilder::finish`];
//! concurrent forward/backward evaluations may share one graph freely.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, LOG_CLAMP};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op<F> {
    Input { name: String },
    Const(Tensor<F>),
    MatMul { a: NodeId, b: NodeId },
    BiasAdd { a: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    Sum(NodeId),
    Mean(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// Fused row-wise softmax + cross-entropy against integer labels,
    /// summed over rows.
    SoftmaxXent { logits: NodeId, labels: Vec<usize> },
    /// Fused sigmoid + Bernoulli cross-entropy against target probabilities,
    /// summed over all elements.
    BernoulliXent { logits: NodeId, targets: NodeId },
}

impl<F> Op<F> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Const(_) => "const",
            Op::MatMul { .. } => "matmul",
            Op::BiasAdd { .. } => "bias_add",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Square(_) => "square",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::BernoulliXent { .. } => "bernoulli_xent",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Const(_) => vec![],
            Op::MatMul { a, b } | Op::BiasAdd { a, b } => vec![a, b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Square(a)
            | Op::Exp(a)
            | Op::Log(a) => vec![a],
            Op::SoftmaxXent { logits, .. } => vec![logits],
            Op::BernoulliXent { logits, targets } => vec![logits, targets],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<F> {
    op: Op<F>,
    shape: Vec<usize>,
}

/// Incrementally builds a [`Graph`]; all shape checking happens here.
pub struct GraphBuilder<F: Real> {
    nodes: Vec<Node<F>>,
    inputs: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

impl<F: Real> Default for GraphBuilder<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> GraphBuilder<F> {
    pub fn new() -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn node_label(&self, id: NodeId) -> String {
        format!("n{}:{}", id, self.nodes[id].op.kind())
    }

    fn push(&mut self, op: Op<F>, shape: Vec<usize>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape });
        id
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn mismatch(&self, op: &str, detail: String) -> Error {
        Error::ShapeMismatch {
            node: format!("n{}:{}", self.nodes.len(), op),
            detail,
        }
    }

    /// Declare a named leaf input of fixed shape.
    pub fn input(&mut self, name: &str, shape: Vec<usize>) -> Result<NodeId> {
        if self.inputs.contains_key(name) {
            return Err(Error::InvalidConfig(format!("duplicate input `{name}`")));
        }
        let id = self.push(
            Op::Input {
                name: name.to_string(),
            },
            shape,
        );
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    /// Embed a constant tensor.
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch(
                "matmul",
                format!(
                    "cannot multiply {:?} ({}) by {:?} ({})",
                    sa,
                    self.node_label(a),
                    sb,
                    self.node_label(b)
                ),
            ));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul { a, b }, shape))
    }

    /// Row-broadcast addition of a rank-1 bias onto a rank-2 matrix.
    pub fn bias_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(self.mismatch(
                "bias_add",
                format!("cannot broadcast bias {:?} over {:?}", sb, sa),
            ));
        }
        Ok(self.push(Op::BiasAdd { a, b }, sa))
    }

    fn unary(&mut self, op: impl FnOnce(NodeId) -> Op<F>, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(op(a), shape)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Square, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp, a)
    }

    /// Natural log with the argument clamped at `LOG_CLAMP`.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Log, a)
    }

    pub fn scale(&mut self, a: NodeId, factor: F) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, factor), shape)
    }

    fn binary(&mut self, opname: &str, op: impl FnOnce(NodeId, NodeId) -> Op<F>, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            let detail = format!(
                "operands {:?} ({}) vs {:?} ({})",
                sa,
                self.node_label(a),
                sb,
                self.node_label(b)
            );
            return Err(self.mismatch(opname, detail));
        }
        let shape = sa.to_vec();
        Ok(self.push(op(a, b), shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", Op::Mul, a, b)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), vec![1])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), vec![1])
    }

    /// Softmax cross-entropy of row logits against integer labels, summed
    /// over rows.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || labels.len() != s[0] {
            return Err(self.mismatch(
                "softmax_xent",
                format!("logits {:?} vs {} labels", s, labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= s[1]) {
            return Err(Error::ClassOutOfRange(bad, s[1]));
        }
        Ok(self.push(Op::SoftmaxXent { logits, labels }, vec![1]))
    }

    /// Bernoulli cross-entropy of `sigmoid(logits)` against target
    /// probabilities, summed over all elements.
    pub fn bernoulli_xent(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let (sl, st) = (self.shape(logits), self.shape(targets));
        if sl != st {
            let detail = format!("logits {:?} vs targets {:?}", sl, st);
            return Err(self.mismatch("bernoulli_xent", detail));
        }
        Ok(self.push(Op::BernoulliXent { logits, targets }, vec![1]))
    }

    /// Name a node as a graph output.
    pub fn output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn finish(self) -> Graph<F> {
        Graph {
            nodes: self.nodes,
            inputs: self.inputs,
            outputs: self.outputs,
        }
    }
}

/// Immutable computation graph. See the module docs.
#[derive(Debug)]
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    inputs: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

/// Named tensor references supplied to [`Graph::forward`]. Bound tensors are
/// borrowed, not copied, so re-evaluating a graph against large parameter
/// sets is cheap.
#[derive(Clone, Default)]
pub struct Bindings<'t, F> {
    map: BTreeMap<String, &'t Tensor<F>>,
}

impl<'t, F: Real> Bindings<'t, F> {
    pub fn new() -> Self {
        Bindings {
            map: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, name: &str, value: &'t Tensor<F>) -> &mut Self {
        self.map.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&'t Tensor<F>> {
        self.map.get(name).copied()
    }
}

impl<F: Real> Graph<F> {
    pub fn input_id(&self, name: &str) -> Result<NodeId> {
        self.inputs
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownInput(name.to_string()))
    }

    pub fn output_id(&self, name: &str) -> Result<NodeId> {
        self.outputs
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownOutput(name.to_string()))
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(|s| s.as_str())
    }

    fn label(&self, id: NodeId) -> String {
        format!("n{}:{}", id, self.nodes[id].op.kind())
    }

    /// Evaluate every node. Deterministic for fixed bindings.
    pub fn forward<'a>(&'a self, bindings: &Bindings<'a, F>) -> Result<Evaluation<'a, F>> {
        let mut values: Vec<Cow<'a, Tensor<F>>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let value: Cow<'a, Tensor<F>> = match &node.op {
                Op::Input { name } => {
                    let t = bindings
                        .get(name)
                        .ok_or_else(|| Error::MissingBinding(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::ShapeMismatch {
                            node: self.label(id),
                            detail: format!(
                                "input `{}` declared {:?}, bound {:?}",
                                name,
                                node.shape,
                                t.shape()
                            ),
                        });
                    }
                    Cow::Borrowed(t)
                }
                Op::Const(t) => Cow::Borrowed(t),
                Op::MatMul { a, b } => {
                    let (ta, tb) = (values[*a].as_ref(), values[*b].as_ref());
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let mut out = Tensor::zeros(vec![m, n]);
                    F::gemm(
                        false,
                        false,
                        m,
                        k,
                        n,
                        F::one(),
                        ta.data(),
                        tb.data(),
                        F::zero(),
                        out.data_mut(),
                    );
                    Cow::Owned(out)
                }
                Op::BiasAdd { a, b } => {
                    let (ta, tb) = (values[*a].as_ref(), values[*b].as_ref());
                    let mut out = ta.clone();
                    let cols = tb.numel();
                    for row in out.data_mut().chunks_mut(cols) {
                        for (v, &bias) in row.iter_mut().zip(tb.data()) {
                            *v += bias;
                        }
                    }
                    Cow::Owned(out)
                }
                Op::Relu(a) => {
                    Cow::Owned(values[*a].map(|v| if v > F::zero() { v } else { F::zero() }))
                }
                Op::Sigmoid(a) => Cow::Owned(values[*a].map(sigmoid)),
                Op::Add(a, b) => {
                    Cow::Owned(zip_map(values[*a].as_ref(), values[*b].as_ref(), |x, y| x + y))
                }
                Op::Sub(a, b) => {
                    Cow::Owned(zip_map(values[*a].as_ref(), values[*b].as_ref(), |x, y| x - y))
                }
                Op::Mul(a, b) => {
                    Cow::Owned(zip_map(values[*a].as_ref(), values[*b].as_ref(), |x, y| x * y))
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    Cow::Owned(values[*a].map(|v| v * f))
                }
                Op::Sum(a) => {
                    let mut acc = F::zero();
                    for &v in values[*a].data() {
                        acc += v;
                    }
                    Cow::Owned(Tensor::scalar(acc))
                }
                Op::Mean(a) => {
                    let mut acc = F::zero();
                    for &v in values[*a].data() {
                        acc += v;
                    }
                    Cow::Owned(Tensor::scalar(acc / F::from_f64(values[*a].numel() as f64)))
                }
                Op::Square(a) => Cow::Owned(values[*a].map(|v| v * v)),
                Op::Exp(a) => Cow::Owned(values[*a].map(|v| v.exp())),
                Op::Log(a) => {
                    let floor = F::from_f64(LOG_CLAMP);
                    Cow::Owned(values[*a].map(|v| v.max(floor).ln()))
                }
                Op::SoftmaxXent { logits, labels } => {
                    let t = values[*logits].as_ref();
                    let cols = t.shape()[1];
                    let mut acc = F::zero();
                    for (row, &label) in t.data().chunks(cols).zip(labels) {
                        acc += row_log_sum_exp(row) - row[label];
                    }
                    Cow::Owned(Tensor::scalar(acc))
                }
                Op::BernoulliXent { logits, targets } => {
                    let (tl, tt) = (values[*logits].as_ref(), values[*targets].as_ref());
                    let mut acc = F::zero();
                    for (&l, &t) in tl.data().iter().zip(tt.data()) {
                        // softplus(l) - l*t, computed stably for large |l|
                        acc += softplus(l) - l * t;
                    }
                    Cow::Owned(Tensor::scalar(acc))
                }
            };
            values.push(value);
        }
        Ok(Evaluation {
            graph: self,
            values,
        })
    }
}

fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

fn softplus<F: Real>(v: F) -> F {
    // ln(1 + e^v) = max(v, 0) + ln(1 + e^-|v|)
    v.max(F::zero()) + (-v.abs()).exp().ln_1p()
}

fn row_log_sum_exp<F: Real>(row: &[F]) -> F {
    let mut max = row[0];
    for &v in &row[1..] {
        if v > max {
            max = v;
        }
    }
    let mut acc = F::zero();
    for &v in row {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

/// Row-wise softmax as a plain tensor function (inference-side; gradients
/// always flow through the fused `softmax_xent` op instead).
pub fn softmax_rows<F: Real>(logits: &Tensor<F>) -> Tensor<F> {
    let cols = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let lse = row_log_sum_exp(row);
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    out
}

fn zip_map<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked at build")
}

/// Result of one forward pass; borrows the graph it evaluated.
#[derive(Debug)]
pub struct Evaluation<'a, F: Real> {
    graph: &'a Graph<F>,
    values: Vec<Cow<'a, Tensor<F>>>,
}

/// Gradients keyed by graph input name.
#[derive(Debug, Default)]
pub struct Gradients<F> {
    by_name: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.by_name
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl<'a, F: Real> Evaluation<'a, F> {
    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        self.values[id].as_ref()
    }

    pub fn output(&self, name: &str) -> Result<&Tensor<F>> {
        Ok(self.values[self.graph.output_id(name)?].as_ref())
    }

    pub fn output_scalar(&self, name: &str) -> Result<F> {
        let t = self.output(name)?;
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss {
                node: name.to_string(),
                shape: t.shape().to_vec(),
            });
        }
        Ok(t.item())
    }

    /// Reverse sweep from a scalar loss node.
    ///
    /// Returns gradients for each name in `wrt` (zeros when the loss does not
    /// depend on that input). Adjoints are only propagated through nodes that
    /// transitively depend on a requested input, so frozen-parameter graphs
    /// skip the weight-gradient GEMMs entirely.
    pub fn backward(&self, loss: NodeId, wrt: &[&str]) -> Result<Gradients<F>> {
        let nodes = &self.graph.nodes;
        if self.values[loss].numel() != 1 {
            return Err(Error::NonScalarLoss {
                node: self.graph.label(loss),
                shape: self.values[loss].shape().to_vec(),
            });
        }
        let mut wrt_ids = Vec::with_capacity(wrt.len());
        for name in wrt {
            wrt_ids.push(self.graph.input_id(name)?);
        }

        // active[i]: node i transitively depends on some requested input.
        let mut active = vec![false; nodes.len()];
        for &id in &wrt_ids {
            active[id] = true;
        }
        for id in 0..nodes.len() {
            if !active[id] {
                active[id] = nodes[id].op.inputs().iter().any(|&i| active[i]);
            }
        }

        let mut adjoints: Vec<Option<Tensor<F>>> = vec![None; nodes.len()];
        if active[loss] {
            adjoints[loss] = Some(Tensor::scalar(F::one()));
        }

        for id in (0..=loss).rev() {
            let Some(adj) = adjoints[id].take() else {
                continue;
            };
            if !active[id] {
                continue;
            }
            // Keep the adjoint for requested leaves.
            if wrt_ids.contains(&id) {
                adjoints[id] = Some(adj.clone());
            }
            match &nodes[id].op {
                Op::Input { .. } | Op::Const(_) => {}
                Op::MatMul { a, b } => {
                    // dA = dC * B^T ; dB = A^T * dC
                    let (va, vb) = (self.values[*a].as_ref(), self.values[*b].as_ref());
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    if active[*a] {
                        let mut da = Tensor::zeros(vec![m, k]);
                        F::gemm(
                            false,
                            true,
                            m,
                            n,
                            k,
                            F::one(),
                            adj.data(),
                            vb.data(),
                            F::zero(),
                            da.data_mut(),
                        );
                        accumulate(&mut adjoints[*a], da);
                    }
                    if active[*b] {
                        let mut db = Tensor::zeros(vec![k, n]);
                        F::gemm(
                            true,
                            false,
                            k,
                            m,
                            n,
                            F::one(),
                            va.data(),
                            adj.data(),
                            F::zero(),
                            db.data_mut(),
                        );
                        accumulate(&mut adjoints[*b], db);
                    }
                }
                Op::BiasAdd { a, b } => {
                    if active[*a] {
                        accumulate(&mut adjoints[*a], adj.clone());
                    }
                    if active[*b] {
                        let cols = self.values[*b].numel();
                        let mut db = Tensor::zeros(vec![cols]);
                        for row in adj.data().chunks(cols) {
                            for (acc, &g) in db.data_mut().iter_mut().zip(row) {
                                *acc += g;
                            }
                        }
                        accumulate(&mut adjoints[*b], db);
                    }
                }
                Op::Relu(a) => {
                    let g = zip_map(&adj, self.values[*a].as_ref(), |g, x| {
                        if x > F::zero() {
                            g
                        } else {
                            F::zero()
                        }
                    });
                    accumulate(&mut adjoints[*a], g);
                }
                Op::Sigmoid(a) => {
                    let g = zip_map(&adj, self.values[id].as_ref(), |g, y| g * y * (F::one() - y));
                    accumulate(&mut adjoints[*a], g);
                }
                Op::Add(a, b) => {
                    if active[*a] {
                        accumulate(&mut adjoints[*a], adj.clone());
                    }
                    if active[*b] {
                        accumulate(&mut adjoints[*b], adj.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if active[*a] {
                        accumulate(&mut adjoints[*a], adj.clone());
                    }
                    if active[*b] {
                        accumulate(&mut adjoints[*b], adj.map(|g| -g));
                    }
                }
                Op::Mul(a, b) => {
                    if active[*a] {
                        accumulate(
                            &mut adjoints[*a],
                            zip_map(&adj, self.values[*b].as_ref(), |g, y| g * y),
                        );
                    }
                    if active[*b] {
                        accumulate(
                            &mut adjoints[*b],
                            zip_map(&adj, self.values[*a].as_ref(), |g, x| g * x),
                        );
                    }
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    accumulate(&mut adjoints[*a], adj.map(|g| g * f));
                }
                Op::Sum(a) => {
                    let g = adj.item();
                    let shape = self.values[*a].shape().to_vec();
                    let numel = self.values[*a].numel();
                    accumulate(
                        &mut adjoints[*a],
                        Tensor::new(shape, vec![g; numel]).expect("same shape"),
                    );
                }
                Op::Mean(a) => {
                    let numel = self.values[*a].numel();
                    let g = adj.item() / F::from_f64(numel as f64);
                    let shape = self.values[*a].shape().to_vec();
                    accumulate(
                        &mut adjoints[*a],
                        Tensor::new(shape, vec![g; numel]).expect("same shape"),
                    );
                }
                Op::Square(a) => {
                    let two = F::from_f64(2.0);
                    let g = zip_map(&adj, self.values[*a].as_ref(), |g, x| g * two * x);
                    accumulate(&mut adjoints[*a], g);
                }
                Op::Exp(a) => {
                    let g = zip_map(&adj, self.values[id].as_ref(), |g, y| g * y);
                    accumulate(&mut adjoints[*a], g);
                }
                Op::Log(a) => {
                    let floor = F::from_f64(LOG_CLAMP);
                    let g = zip_map(&adj, self.values[*a].as_ref(), |g, x| g / x.max(floor));
                    accumulate(&mut adjoints[*a], g);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let g = adj.item();
                    let t = self.values[*logits].as_ref();
                    let cols = t.shape()[1];
                    let mut grad = softmax_rows(t);
                    for (row, &label) in grad.data_mut().chunks_mut(cols).zip(labels) {
                        row[label] -= F::one();
                        for v in row.iter_mut() {
                            *v *= g;
                        }
                    }
                    accumulate(&mut adjoints[*logits], grad);
                }
                Op::BernoulliXent { logits, targets } => {
                    let g = adj.item();
                    let (vl, vt) = (self.values[*logits].as_ref(), self.values[*targets].as_ref());
                    if active[*logits] {
                        let grad = zip_map(vl, vt, |l, t| g * (sigmoid(l) - t));
                        accumulate(&mut adjoints[*logits], grad);
                    }
                    if active[*targets] {
                        let grad = vl.map(|l| -g * l);
                        accumulate(&mut adjoints[*targets], grad);
                    }
                }
            }
        }

        let mut by_name = BTreeMap::new();
        for (name, &id) in self.graph.inputs.iter() {
            if !wrt_ids.contains(&id) {
                continue;
            }
            let grad = adjoints[id]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.values[id].shape().to_vec()));
            by_name.insert(name.clone(), grad);
        }
        Ok(Gradients { by_name })
    }

    /// Backward from a named scalar output.
    pub fn backward_output(&self, output: &str, wrt: &[&str]) -> Result<Gradients<F>> {
        self.backward(self.graph.output_id(output)?, wrt)
    }
}

fn accumulate<F: Real>(slot: &mut Option<Tensor<F>>, grad: Tensor<F>) {
    match slot {
        Some(existing) => {
            for (a, &g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *a += g;
            }
        }
        None => *slot = Some(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::row(v.to_vec())
    }

    #[test]
    fn identity_graph_passes_through() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 2]).unwrap();
        g.output("y", x);
        let graph = g.finish();
        let mut b = Bindings::new();
        let xs = t(&[1.0, 2.0]);
        b.set("x", &xs);
        let eval = graph.forward(&b).unwrap();
        assert_eq!(eval.output("y").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_by_definition() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 2]).unwrap();
        let y = g.relu(x);
        g.output("y", y);
        let graph = g.finish();
        let mut b = Bindings::new();
        let xs = t(&[-1.0, 2.0]);
        b.set("x", &xs);
        let eval = graph.forward(&b).unwrap();
        assert_eq!(eval.output("y").unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_affine_matches_hand_arithmetic() {
        // x = [2, 4], W = [[0.5, -0.25], [0.75, 0.125]], b = [0.1, -0.2]
        // xW + b = [4.1, -0.2]; sigmoid -> [1/(1+e^-4.1), 1/(1+e^0.2)]
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 2]).unwrap();
        let w = g.constant(Tensor::matrix(2, 2, vec![0.5, -0.25, 0.75, 0.125]).unwrap());
        let b = g.constant(Tensor::new(vec![2], vec![0.1, -0.2]).unwrap());
        let z = g.matmul(x, w).unwrap();
        let z = g.bias_add(z, b).unwrap();
        let y = g.sigmoid(z);
        g.output("y", y);
        let graph = g.finish();
        let mut bind = Bindings::new();
        let xs = t(&[2.0, 4.0]);
        bind.set("x", &xs);
        let eval = graph.forward(&bind).unwrap();
        let got = eval.output("y").unwrap().data().to_vec();
        let want = [
            1.0 / (1.0 + (-4.1f64).exp()),
            1.0 / (1.0 + (0.2f64).exp()),
        ];
        assert!((got[0] - want[0]).abs() < 1e-15);
        assert!((got[1] - want[1]).abs() < 1e-15);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 3]).unwrap();
        let s = g.sum(x);
        g.output("loss", s);
        let graph = g.finish();
        let mut b = Bindings::new();
        let xs = t(&[4.0, -2.0, 0.5]);
        b.set("x", &xs);
        let eval = graph.forward(&b).unwrap();
        let grads = eval.backward_output("loss", &["x"]).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_dot_square() {
        // loss = x . x at x = [3] -> grad 2x = [6]
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 1]).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.output("loss", s);
        let graph = g.finish();
        let mut b = Bindings::new();
        let xs = t(&[3.0]);
        b.set("x", &xs);
        let eval = graph.forward(&b).unwrap();
        let grads = eval.backward_output("loss", &["x"]).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 2]).unwrap();
        let y = g.relu(x);
        g.output("y", y);
        let graph = g.finish();
        let mut b = Bindings::new();
        let xs = t(&[1.0, 2.0]);
        b.set("x", &xs);
        let eval = graph.forward(&b).unwrap();
        let err = eval.backward_output("y", &["x"]).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn unreachable_input_gets_zero_gradient() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 2]).unwrap();
        let unused = g.input("unused", vec![1, 2]).unwrap();
        let _ = unused;
        let s = g.sum(x);
        g.output("loss", s);
        let graph = g.finish();
        let mut b = Bindings::new();
        let xs = t(&[1.0, 2.0]);
        let us = t(&[7.0, 8.0]);
        b.set("x", &xs);
        b.set("unused", &us);
        let eval = graph.forward(&b).unwrap();
        let grads = eval.backward_output("loss", &["x", "unused"]).unwrap();
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_shape_error_names_node() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 2]).unwrap();
        let w = g.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        let err = g.matmul(x, w).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "got: {msg}");
    }

    #[test]
    fn missing_binding_is_reported() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![1, 2]).unwrap();
        let s = g.sum(x);
        g.output("loss", s);
        let graph = g.finish();
        let err = graph.forward(&Bindings::new()).unwrap_err();
        assert!(matches!(err, Error::MissingBinding(name) if name == "x"));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", vec![2, 2]).unwrap();
        let w = g.constant(Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 0.05]).unwrap());
        let h = g.matmul(x, w).unwrap();
        let h = g.sigmoid(h);
        let s = g.sum(h);
        g.output("loss", s);
        let graph = g.finish();
        let mut b = Bindings::new();
        let xs = Tensor::matrix(2, 2, vec![0.1, 0.9, -0.4, 2.0]).unwrap();
        b.set("x", &xs);
        let a = graph.forward(&b).unwrap().output_scalar("loss").unwrap();
        let c = graph.forward(&b).unwrap().output_scalar("loss").unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn softmax_rows_normalized() {
        let logits = Tensor::matrix(2, 3, vec![1.0f64, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax_rows(&logits);
        for row in p.data().chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bernoulli_xent_matches_naive_formula() {
        let mut g = GraphBuilder::<f64>::new();
        let l = g.input("l", vec![1, 2]).unwrap();
        let targets = g.constant(t(&[1.0, 0.25]));
        let ce = g.bernoulli_xent(l, targets).unwrap();
        g.output("ce", ce);
        let graph = g.finish();
        let mut b = Bindings::new();
        let ls = t(&[0.5, -1.5]);
        b.set("l", &ls);
        let eval = graph.forward(&b).unwrap();
        let got = eval.output_scalar("ce").unwrap();
        let p = [sigmoid(0.5f64), sigmoid(-1.5f64)];
        let tgt = [1.0, 0.25];
        let want: f64 = p
            .iter()
            .zip(&tgt)
            .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
            .sum();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn softmax_xent_uniform_is_ln_classes() {
        let mut g = GraphBuilder::<f64>::new();
        let l = g.input("l", vec![1, 10]).unwrap();
        let ce = g.softmax_xent(l, vec![3]).unwrap();
        g.output("ce", ce);
        let graph = g.finish();
        let mut b = Bindings::new();
        let ls = t(&[0.0; 10]);
        b.set("l", &ls);
        let eval = graph.forward(&b).unwrap();
        let got = eval.output_scalar("ce").unwrap();
        assert!((got - (10.0f64).ln()).abs() < 1e-12);
    }
}
