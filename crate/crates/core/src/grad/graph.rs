use std::collections::{BTreeMap, HashMap};

use statrs::function::erf::erf;

use super::array::{split_axis, DenseArray};
use super::params::ParamStore;
use super::GradError;

/// Index of a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named input arrays bound to a graph's input leaves.
pub type Bindings = HashMap<String, DenseArray>;

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Param(String),
    Const(DenseArray),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Concat(Vec<NodeId>, usize),
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
    },
    /// Swaps the last two axes.
    Transpose(NodeId),
    Reshape(NodeId),
    Broadcast(NodeId),
    Sum(NodeId, Option<usize>),
    Mean(NodeId, Option<usize>),
    /// Softmax over the last axis.
    Softmax(NodeId),
    Gelu(NodeId),
    /// Normalization over the last axis, no affine part.
    LayerNorm(NodeId, f64),
    /// Repeats every slice along `axis` `times` times in place.
    Repeat {
        input: NodeId,
        axis: usize,
        times: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Broadcast(_) => "broadcast",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Softmax(_) => "softmax",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm(..) => "layer_norm",
            Op::Repeat { .. } => "repeat",
        }
    }

    /// Operand nodes in order.
    pub fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Const(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Concat(xs, _) => xs.clone(),
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Broadcast(a)
            | Op::Sum(a, _)
            | Op::Mean(a, _)
            | Op::Softmax(a)
            | Op::Gelu(a)
            | Op::LayerNorm(a, _) => vec![*a],
            Op::Slice { input, .. } | Op::Repeat { input, .. } => vec![*input],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    label: String,
}

/// A computation graph over dense arrays, built once and evaluated with
/// bound inputs and a parameter store.
///
/// Nodes are appended in topological order, so reverse index order is a
/// valid reverse topological order for gradient accumulation.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: Vec<(String, NodeId)>,
    scope: Vec<String>,
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn push_scope(&mut self, name: &str) {
        self.scope.push(name.to_string());
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
    }

    /// Names of all parameter leaves, deduplicated and sorted.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Param(name) => Some(name.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn input_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input(name) => Some(name.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.push((name.to_string(), id));
    }

    pub fn output(&self, name: &str) -> Option<NodeId> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let mut label = self.scope.join("/");
        if !label.is_empty() {
            label.push('/');
        }
        label.push_str(&format!("{}#{}", op.name(), id.0));
        self.nodes.push(Node { op, shape, label });
        id
    }

    fn shape_error(&self, op: &str, detail: String) -> GradError {
        let mut label = self.scope.join("/");
        if !label.is_empty() {
            label.push('/');
        }
        label.push_str(&format!("{op}#{}", self.nodes.len()));
        GradError::Shape { node: label, detail }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(Op::Input(name.to_string()), shape.to_vec())
    }

    pub fn param(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(Op::Param(name.to_string()), shape.to_vec())
    }

    pub fn constant(&mut self, value: DenseArray) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(self.shape_error(op, format!("operands {sa:?} and {sb:?} differ")));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, factor), shape)
    }

    /// `[.., m, k] x [k, n]` or batched `[b, m, k] x [b, k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(self.shape_error("matmul", format!("ranks of {sa:?} x {sb:?} below 2")));
        }
        let k = sa[sa.len() - 1];
        let shape = if sb.len() == 2 {
            if sb[0] != k {
                return Err(self.shape_error("matmul", format!("inner extents {sa:?} x {sb:?}")));
            }
            let mut s = sa[..sa.len() - 1].to_vec();
            s.push(sb[1]);
            s
        } else if sa.len() == 3 && sb.len() == 3 {
            if sa[0] != sb[0] || sb[1] != k {
                return Err(self.shape_error("matmul", format!("batched {sa:?} x {sb:?}")));
            }
            vec![sa[0], sa[1], sb[2]]
        } else {
            return Err(self.shape_error("matmul", format!("unsupported {sa:?} x {sb:?}")));
        };
        Ok(self.push(Op::MatMul(a, b), shape))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, GradError> {
        let first = parts
            .first()
            .ok_or_else(|| self.shape_error("concat", "no operands".into()))?;
        let mut shape = self.shape(*first).to_vec();
        if axis >= shape.len() {
            return Err(self.shape_error("concat", format!("axis {axis} out of {shape:?}")));
        }
        let mut extent = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == shape.len()
                && s.iter()
                    .zip(&shape)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(self.shape_error(
                    "concat",
                    format!("operand {s:?} incompatible with {shape:?} on axis {axis}"),
                ));
            }
            extent += s[axis];
        }
        shape[axis] = extent;
        Ok(self.push(Op::Concat(parts.to_vec(), axis), shape))
    }

    pub fn slice(
        &mut self,
        input: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, GradError> {
        let mut shape = self.shape(input).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(self.shape_error(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        shape[axis] = len;
        Ok(self.push(Op::Slice { input, axis, start }, shape))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let mut shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(self.shape_error("transpose", format!("rank of {shape:?} below 2")));
        }
        shape.swap(r - 2, r - 1);
        Ok(self.push(Op::Transpose(a), shape))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, GradError> {
        let from = self.shape(a);
        if from.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(self.shape_error("reshape", format!("{from:?} into {shape:?}")));
        }
        Ok(self.push(Op::Reshape(a), shape.to_vec()))
    }

    /// Broadcasts `a` to `shape`; missing leading axes are treated as 1.
    pub fn broadcast(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, GradError> {
        let from = self.shape(a).to_vec();
        if from.len() > shape.len() {
            return Err(self.shape_error("broadcast", format!("{from:?} to {shape:?}")));
        }
        let pad = shape.len() - from.len();
        for (d, &ext) in from.iter().enumerate() {
            if ext != 1 && ext != shape[pad + d] {
                return Err(self.shape_error("broadcast", format!("{from:?} to {shape:?}")));
            }
        }
        Ok(self.push(Op::Broadcast(a), shape.to_vec()))
    }

    fn reduced_shape(&self, op: &str, a: NodeId, axis: Option<usize>) -> Result<Vec<usize>, GradError> {
        let shape = self.shape(a);
        match axis {
            None => Ok(vec![]),
            Some(ax) if ax < shape.len() => {
                let mut s = shape.to_vec();
                s.remove(ax);
                Ok(s)
            }
            Some(ax) => Err(self.shape_error(op, format!("axis {ax} out of {shape:?}"))),
        }
    }

    pub fn sum(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId, GradError> {
        let shape = self.reduced_shape("sum", a, axis)?;
        Ok(self.push(Op::Sum(a, axis), shape))
    }

    pub fn mean(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId, GradError> {
        let shape = self.reduced_shape("mean", a, axis)?;
        Ok(self.push(Op::Mean(a, axis), shape))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(self.shape_error("softmax", "scalar operand".into()));
        }
        Ok(self.push(Op::Softmax(a), shape))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Gelu(a), shape)
    }

    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId, GradError> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(self.shape_error("layer_norm", "scalar operand".into()));
        }
        Ok(self.push(Op::LayerNorm(a, eps), shape))
    }

    pub fn repeat(&mut self, input: NodeId, axis: usize, times: usize) -> Result<NodeId, GradError> {
        let mut shape = self.shape(input).to_vec();
        if axis >= shape.len() || times == 0 {
            return Err(self.shape_error("repeat", format!("axis {axis} x{times} of {shape:?}")));
        }
        shape[axis] *= times;
        Ok(self.push(Op::Repeat { input, axis, times }, shape))
    }

    /// Adds a row vector `bias` of shape `[d]` to every row of `x` (`[.., d]`).
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, GradError> {
        let shape = self.shape(x).to_vec();
        let b = self.broadcast(bias, &shape)?;
        self.add(x, b)
    }

    /// Sum of squared entries, divided by `denom`.
    pub fn sum_squares(&mut self, x: NodeId, denom: f64) -> Result<NodeId, GradError> {
        let sq = self.mul(x, x)?;
        let total = self.sum(sq, None)?;
        Ok(self.scale(total, 1.0 / denom))
    }

    /// Runs the forward pass.
    pub fn evaluate(&self, inputs: &Bindings, params: &ParamStore) -> Result<Evaluation, GradError> {
        let mut values: Vec<DenseArray> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let value = self.forward_node(node, &values, inputs, params)?;
            if !value.is_finite() {
                return Err(GradError::NonFinite {
                    node: node.label.clone(),
                    index: idx,
                });
            }
            debug_assert_eq!(value.shape(), node.shape.as_slice(), "{}", node.label);
            values.push(value);
        }
        Ok(Evaluation { values })
    }

    fn forward_node(
        &self,
        node: &Node,
        values: &[DenseArray],
        inputs: &Bindings,
        params: &ParamStore,
    ) -> Result<DenseArray, GradError> {
        let v = |id: &NodeId| &values[id.0];
        Ok(match &node.op {
            Op::Input(name) => {
                let arr = inputs.get(name).ok_or_else(|| GradError::Unbound {
                    node: node.label.clone(),
                    name: name.clone(),
                })?;
                if arr.shape() != node.shape.as_slice() {
                    return Err(GradError::Shape {
                        node: node.label.clone(),
                        detail: format!(
                            "input `{name}` bound with {:?}, declared {:?}",
                            arr.shape(),
                            node.shape
                        ),
                    });
                }
                arr.clone()
            }
            Op::Param(name) => {
                let arr = params.get(name).ok_or_else(|| GradError::Unbound {
                    node: node.label.clone(),
                    name: name.clone(),
                })?;
                if arr.shape() != node.shape.as_slice() {
                    return Err(GradError::Shape {
                        node: node.label.clone(),
                        detail: format!(
                            "parameter `{name}` stored as {:?}, declared {:?}",
                            arr.shape(),
                            node.shape
                        ),
                    });
                }
                arr.clone()
            }
            Op::Const(arr) => arr.clone(),
            Op::Add(a, b) => v(a).zip_map(v(b), |x, y| x + y),
            Op::Sub(a, b) => v(a).zip_map(v(b), |x, y| x - y),
            Op::Mul(a, b) => v(a).zip_map(v(b), |x, y| x * y),
            Op::Scale(a, f) => v(a).map(|x| x * f),
            Op::MatMul(a, b) => matmul_forward(v(a), v(b), &node.shape),
            Op::Concat(parts, axis) => {
                let arrays: Vec<&DenseArray> = parts.iter().map(v).collect();
                concat_forward(&arrays, *axis, &node.shape)
            }
            Op::Slice { input, axis, start } => slice_forward(v(input), *axis, *start, &node.shape),
            Op::Transpose(a) => transpose_last(v(a)),
            Op::Reshape(a) => DenseArray::new(node.shape.clone(), v(a).data().to_vec())?,
            Op::Broadcast(a) => broadcast_forward(v(a), &node.shape),
            Op::Sum(a, axis) => reduce_forward(v(a), *axis, &node.shape, false),
            Op::Mean(a, axis) => reduce_forward(v(a), *axis, &node.shape, true),
            Op::Softmax(a) => softmax_forward(v(a)),
            Op::Gelu(a) => v(a).map(gelu),
            Op::LayerNorm(a, eps) => layer_norm_forward(v(a), *eps),
            Op::Repeat { input, axis, times } => repeat_forward(v(input), *axis, *times, &node.shape),
        })
    }

    /// Reverse-mode gradients of the scalar node `loss`.
    pub fn backward(&self, eval: &Evaluation, loss: NodeId) -> Result<Gradients, GradError> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(GradError::NonScalarLoss {
                node: self.label(loss).to_string(),
                shape: loss_shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<DenseArray>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseArray::full(loss_shape, 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |id: &NodeId| &eval.values[id.0];
            let send = |id: NodeId, contrib: DenseArray, grads: &mut Vec<Option<DenseArray>>| {
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Input(name) => accumulate(&mut out.inputs, name, g),
                Op::Param(name) => accumulate(&mut out.params, name, g),
                Op::Const(_) => {}
                Op::Add(a, b) => {
                    send(*b, g.clone(), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|x| -x), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(val(b), |x, y| x * y);
                    let gb = g.zip_map(val(a), |x, y| x * y);
                    send(*a, ga, &mut grads);
                    send(*b, gb, &mut grads);
                }
                Op::Scale(a, f) => send(*a, g.map(|x| x * f), &mut grads),
                Op::MatMul(a, b) => {
                    let (ga, gb) = matmul_backward(val(a), val(b), &g);
                    send(*a, ga, &mut grads);
                    send(*b, gb, &mut grads);
                }
                Op::Concat(parts, axis) => {
                    let shapes: Vec<&[usize]> = parts.iter().map(|p| self.shape(*p)).collect();
                    for (p, gp) in parts.iter().zip(concat_backward(&g, *axis, &shapes)) {
                        send(*p, gp, &mut grads);
                    }
                }
                Op::Slice { input, axis, start } => {
                    let gi = slice_backward(&g, *axis, *start, self.shape(*input));
                    send(*input, gi, &mut grads);
                }
                Op::Transpose(a) => send(*a, transpose_last(&g), &mut grads),
                Op::Reshape(a) => {
                    let gi = g.reshaped(self.shape(*a).to_vec())?;
                    send(*a, gi, &mut grads);
                }
                Op::Broadcast(a) => {
                    let gi = broadcast_backward(&g, self.shape(*a));
                    send(*a, gi, &mut grads);
                }
                Op::Sum(a, axis) => {
                    let gi = reduce_backward(&g, *axis, self.shape(*a), false);
                    send(*a, gi, &mut grads);
                }
                Op::Mean(a, axis) => {
                    let gi = reduce_backward(&g, *axis, self.shape(*a), true);
                    send(*a, gi, &mut grads);
                }
                Op::Softmax(a) => {
                    let gi = softmax_backward(&eval.values[idx], &g);
                    send(*a, gi, &mut grads);
                }
                Op::Gelu(a) => {
                    let gi = g.zip_map(val(a), |gy, x| gy * gelu_derivative(x));
                    send(*a, gi, &mut grads);
                }
                Op::LayerNorm(a, eps) => {
                    let gi = layer_norm_backward(val(a), &eval.values[idx], &g, *eps);
                    send(*a, gi, &mut grads);
                }
                Op::Repeat { input, axis, times } => {
                    let gi = repeat_backward(&g, *axis, *times, self.shape(*input));
                    send(*input, gi, &mut grads);
                }
            }
        }
        // Parameters that the loss does not reach still get an explicit zero.
        for name in self.param_names() {
            if !out.params.contains_key(&name) {
                let shape = self
                    .nodes
                    .iter()
                    .find_map(|n| match &n.op {
                        Op::Param(p) if *p == name => Some(n.shape.clone()),
                        _ => None,
                    })
                    .unwrap_or_default();
                out.params.insert(name, DenseArray::zeros(&shape));
            }
        }
        Ok(out)
    }

    /// Forward pass followed by the backward pass from `loss`.
    pub fn gradients(
        &self,
        loss: NodeId,
        inputs: &Bindings,
        params: &ParamStore,
    ) -> Result<(Evaluation, Gradients), GradError> {
        let eval = self.evaluate(inputs, params)?;
        let grads = self.backward(&eval, loss)?;
        Ok((eval, grads))
    }
}

fn accumulate(map: &mut BTreeMap<String, DenseArray>, name: &str, g: DenseArray) {
    match map.get_mut(name) {
        Some(acc) => acc.add_assign(&g),
        None => {
            map.insert(name.to_string(), g);
        }
    }
}

/// Values of every node after a forward pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    values: Vec<DenseArray>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.values[id.0]
    }

    pub fn output<'a>(&'a self, graph: &Graph, name: &str) -> Option<&'a DenseArray> {
        graph.output(name).map(|id| self.value(id))
    }

    /// All marked outputs by name.
    pub fn outputs(&self, graph: &Graph) -> BTreeMap<String, DenseArray> {
        graph
            .outputs
            .iter()
            .map(|(n, id)| (n.clone(), self.values[id.0].clone()))
            .collect()
    }
}

/// Gradients keyed by parameter name (and by input name for input leaves).
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub params: BTreeMap<String, DenseArray>,
    pub inputs: BTreeMap<String, DenseArray>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&DenseArray> {
        self.params.get(name)
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: Gradients) {
        for (k, v) in other.params {
            accumulate(&mut self.params, &k, v);
        }
        for (k, v) in other.inputs {
            accumulate(&mut self.inputs, &k, v);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.params.values_mut().chain(self.inputs.values_mut()) {
            for x in v.data_mut() {
                *x *= factor;
            }
        }
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`,
    // whose lengths are checked by the callers' shape bookkeeping.
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

fn matmul_forward(a: &DenseArray, b: &DenseArray, out_shape: &[usize]) -> DenseArray {
    let sa = a.shape();
    let sb = b.shape();
    let mut out = DenseArray::zeros(out_shape);
    if sb.len() == 2 {
        let k = sb[0];
        let n = sb[1];
        let m = a.len() / k.max(1);
        assert_eq!(m * k, a.len());
        gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), out.data_mut(), 0.0);
    } else {
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        for i in 0..batch {
            let a_blk = &a.data()[i * m * k..(i + 1) * m * k];
            let b_blk = &b.data()[i * k * n..(i + 1) * k * n];
            let c_blk = &mut out.data_mut()[i * m * n..(i + 1) * m * n];
            gemm(m, k, n, a_blk, (k as isize, 1), b_blk, (n as isize, 1), c_blk, 0.0);
        }
    }
    out
}

fn matmul_backward(a: &DenseArray, b: &DenseArray, g: &DenseArray) -> (DenseArray, DenseArray) {
    let sa = a.shape().to_vec();
    let sb = b.shape().to_vec();
    let mut ga = DenseArray::zeros(&sa);
    let mut gb = DenseArray::zeros(&sb);
    if sb.len() == 2 {
        let (k, n) = (sb[0], sb[1]);
        let m = a.len() / k.max(1);
        // ga = g . b^T  ([m, n] x [n, k])
        gemm(m, n, k, g.data(), (n as isize, 1), b.data(), (1, n as isize), ga.data_mut(), 0.0);
        // gb = a^T . g  ([k, m] x [m, n])
        gemm(k, m, n, a.data(), (1, k as isize), g.data(), (n as isize, 1), gb.data_mut(), 0.0);
    } else {
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        for i in 0..batch {
            let a_blk = &a.data()[i * m * k..(i + 1) * m * k];
            let b_blk = &b.data()[i * k * n..(i + 1) * k * n];
            let g_blk = &g.data()[i * m * n..(i + 1) * m * n];
            gemm(
                m,
                n,
                k,
                g_blk,
                (n as isize, 1),
                b_blk,
                (1, n as isize),
                &mut ga.data_mut()[i * m * k..(i + 1) * m * k],
                0.0,
            );
            gemm(
                k,
                m,
                n,
                a_blk,
                (1, k as isize),
                g_blk,
                (n as isize, 1),
                &mut gb.data_mut()[i * k * n..(i + 1) * k * n],
                0.0,
            );
        }
    }
    (ga, gb)
}

fn concat_forward(parts: &[&DenseArray], axis: usize, out_shape: &[usize]) -> DenseArray {
    let (outer, _, inner) = split_axis(out_shape, axis);
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let ext = p.shape()[axis];
            let blk = ext * inner;
            data.extend_from_slice(&p.data()[o * blk..(o + 1) * blk]);
        }
    }
    DenseArray::new(out_shape.to_vec(), data).expect("concat bookkeeping")
}

fn concat_backward(g: &DenseArray, axis: usize, shapes: &[&[usize]]) -> Vec<DenseArray> {
    let (outer, total, inner) = split_axis(g.shape(), axis);
    let mut out: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    for o in 0..outer {
        let mut offset = o * total * inner;
        for (dst, s) in out.iter_mut().zip(shapes) {
            let blk = s[axis] * inner;
            dst.extend_from_slice(&g.data()[offset..offset + blk]);
            offset += blk;
        }
    }
    out.into_iter()
        .zip(shapes)
        .map(|(d, s)| DenseArray::new(s.to_vec(), d).expect("concat bookkeeping"))
        .collect()
}

fn slice_forward(x: &DenseArray, axis: usize, start: usize, out_shape: &[usize]) -> DenseArray {
    let (outer, ext, inner) = split_axis(x.shape(), axis);
    let len = out_shape[axis];
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * ext + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    DenseArray::new(out_shape.to_vec(), data).expect("slice bookkeeping")
}

fn slice_backward(g: &DenseArray, axis: usize, start: usize, in_shape: &[usize]) -> DenseArray {
    let (outer, ext, inner) = split_axis(in_shape, axis);
    let len = g.shape()[axis];
    let mut out = DenseArray::zeros(in_shape);
    for o in 0..outer {
        let base = (o * ext + start) * inner;
        out.data_mut()[base..base + len * inner]
            .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

fn transpose_last(x: &DenseArray) -> DenseArray {
    let s = x.shape();
    let r = s.len();
    let (rows, cols) = (s[r - 2], s[r - 1]);
    let batch = x.len() / (rows * cols).max(1);
    let mut shape = s.to_vec();
    shape.swap(r - 2, r - 1);
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let src = &x.data()[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    DenseArray::new(shape, out).expect("transpose bookkeeping")
}

/// Input strides aligned to `out_shape`, zero along broadcast axes.
fn broadcast_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let pad = out_shape.len() - in_shape.len();
    let mut strides = vec![0; out_shape.len()];
    let mut acc = 1;
    for d in (0..in_shape.len()).rev() {
        strides[pad + d] = if in_shape[d] == 1 { 0 } else { acc };
        acc *= in_shape[d];
    }
    strides
}

fn for_each_broadcast(in_shape: &[usize], out_shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(in_shape, out_shape);
    let total: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in 0..total {
        f(o, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

fn broadcast_forward(x: &DenseArray, out_shape: &[usize]) -> DenseArray {
    let mut out = DenseArray::zeros(out_shape);
    let src = x.data();
    let dst = out.data_mut();
    for_each_broadcast(x.shape(), out_shape, |o, i| dst[o] = src[i]);
    out
}

fn broadcast_backward(g: &DenseArray, in_shape: &[usize]) -> DenseArray {
    let mut out = DenseArray::zeros(in_shape);
    let src = g.data();
    let dst = out.data_mut();
    for_each_broadcast(in_shape, g.shape(), |o, i| dst[i] += src[o]);
    out
}

fn reduce_forward(x: &DenseArray, axis: Option<usize>, out_shape: &[usize], mean: bool) -> DenseArray {
    match axis {
        None => {
            let s: f64 = x.data().iter().sum();
            let v = if mean { s / x.len() as f64 } else { s };
            DenseArray::full(out_shape, v)
        }
        Some(ax) => {
            let (outer, n, inner) = split_axis(x.shape(), ax);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..n {
                    let row = &x.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
            if mean {
                let inv = 1.0 / n as f64;
                out.iter_mut().for_each(|v| *v *= inv);
            }
            DenseArray::new(out_shape.to_vec(), out).expect("reduce bookkeeping")
        }
    }
}

fn reduce_backward(g: &DenseArray, axis: Option<usize>, in_shape: &[usize], mean: bool) -> DenseArray {
    match axis {
        None => {
            let n: usize = in_shape.iter().product();
            let v = if mean { g.item() / n as f64 } else { g.item() };
            DenseArray::full(in_shape, v)
        }
        Some(ax) => {
            let (outer, n, inner) = split_axis(in_shape, ax);
            let factor = if mean { 1.0 / n as f64 } else { 1.0 };
            let mut out = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for k in 0..n {
                    let dst = &mut out[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s * factor;
                    }
                }
            }
            DenseArray::new(in_shape.to_vec(), out).expect("reduce bookkeeping")
        }
    }
}

fn softmax_forward(x: &DenseArray) -> DenseArray {
    let d = *x.shape().last().expect("rank checked at build");
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn softmax_backward(y: &DenseArray, g: &DenseArray) -> DenseArray {
    let d = *y.shape().last().expect("rank checked at build");
    let mut out = DenseArray::zeros(y.shape());
    for ((yr, gr), or) in y
        .data()
        .chunks_exact(d)
        .zip(g.data().chunks_exact(d))
        .zip(out.data_mut().chunks_exact_mut(d))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, yv), gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    out
}

fn layer_norm_forward(x: &DenseArray, eps: f64) -> DenseArray {
    let d = *x.shape().last().expect("rank checked at build");
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

fn layer_norm_backward(x: &DenseArray, y: &DenseArray, g: &DenseArray, eps: f64) -> DenseArray {
    let d = *x.shape().last().expect("rank checked at build");
    let mut out = DenseArray::zeros(x.shape());
    for (((xr, yr), gr), or) in x
        .data()
        .chunks_exact(d)
        .zip(y.data().chunks_exact(d))
        .zip(g.data().chunks_exact(d))
        .zip(out.data_mut().chunks_exact_mut(d))
    {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let g_mean = gr.iter().sum::<f64>() / d as f64;
        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for ((o, gv), yv) in or.iter_mut().zip(gr).zip(yr) {
            *o = inv * (gv - g_mean - yv * gy_mean);
        }
    }
    out
}

fn repeat_forward(x: &DenseArray, axis: usize, times: usize, out_shape: &[usize]) -> DenseArray {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for k in 0..n {
            let blk = &x.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
            for _ in 0..times {
                data.extend_from_slice(blk);
            }
        }
    }
    DenseArray::new(out_shape.to_vec(), data).expect("repeat bookkeeping")
}

fn repeat_backward(g: &DenseArray, axis: usize, times: usize, in_shape: &[usize]) -> DenseArray {
    let (outer, n, inner) = split_axis(in_shape, axis);
    let mut out = DenseArray::zeros(in_shape);
    for o in 0..outer {
        for k in 0..n {
            let dst_off = (o * n + k) * inner;
            for r in 0..times {
                let src_off = ((o * n + k) * times + r) * inner;
                for i in 0..inner {
                    out.data_mut()[dst_off + i] += g.data()[src_off + i];
                }
            }
        }
    }
    out
}
