//! A small reverse-mode automatic differentiation engine.
//!
//! The design is a flat tape: every operation eagerly computes its float32
//! value and records enough context to (a) push gradients backward and (b)
//! re-execute itself in float64. Backward runs once over the tape in reverse
//! with float64 accumulators, writing float32 gradients into leaves. The
//! float64 replay exists for finite-difference gradient checking: perturb a
//! leaf, re-run the recorded program at higher precision, difference the
//! results ([`gradcheck`]).
//!
//! Graphs are built per forward pass and confined to one thread. Learnable
//! state lives outside the graph in a [`ParamStore`]; a pass pulls parameters
//! in as leaves and pushes their gradients back out after backward.

pub mod gradcheck;
mod kernels;
mod params;

pub use kernels::Real;
pub use params::{Adam, AdamHyper, Param, ParamId, ParamStore};

use crate::error::{Error, Result};
use kernels as k;

/// A dense row-major float32 tensor. `grad`, when present, always has the
/// same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if k::numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for shape {shape:?}", k::numel(&shape)),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = k::numel(&shape);
        Tensor { shape, data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn scalar(x: f32) -> Self {
        Tensor { shape: vec![], data: vec![x], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f32]) {
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }
}

/// Handle to a node in one [`Graph`]. Ids are creation-ordered, so an input's
/// id is always smaller than its consumer's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation. Carries only the context needed to re-execute (axis,
/// indices, constants); values live on the nodes.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul,
    Add,
    Mul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Reshape,
    Transpose { perm: Vec<usize> },
    Relu,
    Softmax,
    LayerNorm { eps: f64 },
    MaxReduce { axis: usize },
    MinReduce { axis: usize },
    MeanReduce { axis: usize },
    GatherRows { indices: Vec<usize> },
    Exp,
    Log,
    Sqrt,
    Arcosh,
    Scale { c: f64 },
    AddScalar { c: f64 },
    PairwiseSqdist,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    /// Set when this leaf mirrors a stored parameter.
    param: Option<ParamId>,
}

/// The tape. See the module docs for the execution model.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    /// The float32 gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    /// Every differentiable leaf in creation order — the natural probe set
    /// for a finite-difference check of a composite forward pass.
    pub fn differentiable_leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].value.requires_grad)
            .map(NodeId)
            .collect()
    }

    // --- node constructors -------------------------------------------------

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t, None)
    }

    /// A non-learnable input.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Result<NodeId> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> NodeId {
        self.leaf(Tensor::zeros(shape))
    }

    /// Pulls a stored parameter into the graph as a differentiable leaf.
    /// Gradients flow back to the store via [`Graph::apply_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = store.tensor(id);
        let leaf = Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            requires_grad: true,
            grad: None,
        };
        self.push(Op::Leaf, vec![], leaf, Some(id))
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, param: Option<ParamId>) -> NodeId {
        debug_assert!(
            !value.data.iter().any(|v| v.is_nan()),
            "op {op:?} produced NaN"
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value, param });
        id
    }

    fn result(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>, data: Vec<f32>) -> NodeId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].value.requires_grad);
        let t = Tensor { shape, data, requires_grad, grad: None };
        self.push(op, inputs, t, None)
    }

    // --- ops ----------------------------------------------------------------

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                expected: "2-D operands with matching inner dim".into(),
                got: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, kk, n) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::new();
        k::matmul(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, m, kk, n, &mut out);
        Ok(self.result(Op::Matmul, vec![a, b], vec![m, n], out))
    }

    /// Elementwise addition with right-aligned broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = k::broadcast_shape(&sa, &sb).ok_or_else(|| Error::ShapeMismatch {
            expected: "broadcast-compatible shapes".into(),
            got: format!("{sa:?} + {sb:?}"),
        })?;
        let mut out = Vec::new();
        k::add(&self.nodes[a.0].value.data, &sa, &self.nodes[b.0].value.data, &sb, &out_shape, &mut out);
        Ok(self.result(Op::Add, vec![a, b], out_shape, out))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape(a)),
                got: format!("{:?}", self.shape(b)),
            });
        }
        let shape = self.shape(a).to_vec();
        let mut out = Vec::new();
        k::mul(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, &mut out);
        Ok(self.result(Op::Mul, vec![a, b], shape, out))
    }

    /// Concatenation along `axis`.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch { expected: "at least one input".into(), got: "0".into() });
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::AxisOutOfRange { axis, ndim: first.len() });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &v)| d != axis && v != first[d])
            {
                return Err(Error::ShapeMismatch {
                    expected: format!("shapes agreeing off axis {axis}"),
                    got: format!("{s:?} vs {first:?}"),
                });
            }
            out_shape[axis] += s[axis];
        }
        let bufs: Vec<(&[f32], &[usize])> = parts
            .iter()
            .map(|&p| (self.nodes[p.0].value.data.as_slice(), self.nodes[p.0].value.shape.as_slice()))
            .collect();
        let mut out = Vec::new();
        k::concat(&bufs, axis, &out_shape, &mut out);
        Ok(self.result(Op::Concat { axis }, parts.to_vec(), out_shape, out))
    }

    /// Contiguous range along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange { axis, ndim: shape.len() });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::ShapeMismatch {
                expected: format!("slice within dim {} of size {}", axis, shape[axis]),
                got: format!("[{start}, {})", start + len),
            });
        }
        let mut out = Vec::new();
        k::slice(&self.nodes[x.0].value.data, &shape, axis, start, len, &mut out);
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.result(Op::Slice { axis, start, len }, vec![x], out_shape, out))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if k::numel(&shape) != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} elements", self.value(x).numel()),
                got: format!("shape {shape:?}"),
            });
        }
        let data = self.nodes[x.0].value.data.clone();
        Ok(self.result(Op::Reshape, vec![x], shape, data))
    }

    /// General axis permutation; output dim `d` is input dim `perm[d]`.
    pub fn transpose(&mut self, x: NodeId, perm: Vec<usize>) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::ShapeMismatch {
                expected: format!("a permutation of 0..{}", shape.len()),
                got: format!("{perm:?}"),
            });
        }
        let mut out = Vec::new();
        k::transpose(&self.nodes[x.0].value.data, &shape, &perm, &mut out);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.result(Op::Transpose { perm }, vec![x], out_shape, out))
    }

    /// Swaps the two axes of a matrix.
    pub fn t2(&mut self, x: NodeId) -> Result<NodeId> {
        if self.shape(x).len() != 2 {
            return Err(Error::ShapeMismatch { expected: "2-D tensor".into(), got: format!("{:?}", self.shape(x)) });
        }
        self.transpose(x, vec![1, 0])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let mut out = Vec::new();
        k::relu(&self.nodes[x.0].value.data, &mut out);
        Ok(self.result(Op::Relu, vec![x], shape, out))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().ok_or(Error::AxisOutOfRange { axis: 0, ndim: 0 })?;
        let mut out = Vec::new();
        k::softmax(&self.nodes[x.0].value.data, last, &mut out);
        Ok(self.result(Op::Softmax, vec![x], shape, out))
    }

    /// Normalization over the last axis (zero mean, unit variance, no affine).
    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().ok_or(Error::AxisOutOfRange { axis: 0, ndim: 0 })?;
        let mut out = Vec::new();
        k::layer_norm(&self.nodes[x.0].value.data, last, eps, &mut out);
        Ok(self.result(Op::LayerNorm { eps }, vec![x], shape, out))
    }

    fn reduce_shape(&self, x: NodeId, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange { axis, ndim: shape.len() });
        }
        let mut out = shape.to_vec();
        out.remove(axis);
        Ok(out)
    }

    /// Maximum along `axis` (axis dropped). Backward routes the gradient to
    /// the first attaining index.
    pub fn max_reduce(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let out_shape = self.reduce_shape(x, axis)?;
        let (mut out, mut arg) = (Vec::new(), Vec::new());
        k::extremum_reduce(&self.nodes[x.0].value.data, self.shape(x), axis, true, &mut out, &mut arg);
        Ok(self.result(Op::MaxReduce { axis }, vec![x], out_shape, out))
    }

    /// Minimum along `axis` (axis dropped), same tie rule as max.
    pub fn min_reduce(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let out_shape = self.reduce_shape(x, axis)?;
        let (mut out, mut arg) = (Vec::new(), Vec::new());
        k::extremum_reduce(&self.nodes[x.0].value.data, self.shape(x), axis, false, &mut out, &mut arg);
        Ok(self.result(Op::MinReduce { axis }, vec![x], out_shape, out))
    }

    /// Mean along `axis` (axis dropped).
    pub fn mean_reduce(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let out_shape = self.reduce_shape(x, axis)?;
        let mut out = Vec::new();
        k::mean_reduce(&self.nodes[x.0].value.data, self.shape(x), axis, &mut out);
        Ok(self.result(Op::MeanReduce { axis }, vec![x], out_shape, out))
    }

    /// Selects axis-0 slices by index; indices may repeat (backward
    /// scatter-adds).
    pub fn gather_rows(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(Error::AxisOutOfRange { axis: 0, ndim: 0 });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(Error::ShapeMismatch {
                expected: format!("indices < {}", shape[0]),
                got: format!("{bad}"),
            });
        }
        let row: usize = shape[1..].iter().product();
        let mut out = Vec::new();
        k::gather_rows(&self.nodes[x.0].value.data, row, &indices, &mut out);
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        Ok(self.result(Op::GatherRows { indices }, vec![x], out_shape, out))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let mut out = Vec::new();
        k::exp(&self.nodes[x.0].value.data, &mut out);
        Ok(self.result(Op::Exp, vec![x], shape, out))
    }

    /// Natural log; requires strictly positive inputs.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x.0].value.data.iter().any(|&v| v <= 0.0) {
            return Err(Error::ShapeMismatch { expected: "positive inputs for log".into(), got: "non-positive value".into() });
        }
        let shape = self.shape(x).to_vec();
        let mut out = Vec::new();
        k::ln(&self.nodes[x.0].value.data, &mut out);
        Ok(self.result(Op::Log, vec![x], shape, out))
    }

    /// Square root; requires non-negative inputs.
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x.0].value.data.iter().any(|&v| v < 0.0) {
            return Err(Error::ShapeMismatch { expected: "non-negative inputs for sqrt".into(), got: "negative value".into() });
        }
        let shape = self.shape(x).to_vec();
        let mut out = Vec::new();
        k::sqrt(&self.nodes[x.0].value.data, &mut out);
        Ok(self.result(Op::Sqrt, vec![x], shape, out))
    }

    /// Inverse hyperbolic cosine; requires inputs >= 1 (the loss applies it
    /// to `1 + chamfer`).
    pub fn arcosh(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x.0].value.data.iter().any(|&v| v < 1.0) {
            return Err(Error::ShapeMismatch { expected: "inputs >= 1 for arcosh".into(), got: "value below 1".into() });
        }
        let shape = self.shape(x).to_vec();
        let mut out = Vec::new();
        k::acosh(&self.nodes[x.0].value.data, &mut out);
        Ok(self.result(Op::Arcosh, vec![x], shape, out))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let mut out = Vec::new();
        k::scale(&self.nodes[x.0].value.data, c, &mut out);
        Ok(self.result(Op::Scale { c }, vec![x], shape, out))
    }

    /// Addition of a compile-time constant.
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let mut out = Vec::new();
        k::add_scalar(&self.nodes[x.0].value.data, c, &mut out);
        Ok(self.result(Op::AddScalar { c }, vec![x], shape, out))
    }

    /// All squared distances between rows of `p` (n x 3) and `q` (m x 3).
    pub fn pairwise_sqdist(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let (sp, sq) = (self.shape(p), self.shape(q));
        if sp.len() != 2 || sq.len() != 2 || sp[1] != 3 || sq[1] != 3 {
            return Err(Error::ShapeMismatch {
                expected: "(n x 3) and (m x 3)".into(),
                got: format!("{sp:?} and {sq:?}"),
            });
        }
        let (n, m) = (sp[0], sq[0]);
        let mut out = Vec::new();
        k::pairwise_sqdist(&self.nodes[p.0].value.data, &self.nodes[q.0].value.data, n, m, &mut out);
        Ok(self.result(Op::PairwiseSqdist, vec![p, q], vec![n, m], out))
    }

    // --- backward -------------------------------------------------------------

    /// Reverse pass from a scalar loss. Float64 accumulators internally;
    /// float32 gradients land on `requires_grad` leaves and accumulate across
    /// calls (callers zero between steps).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NotScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        acc[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gout) = acc[id].take() else { continue };
            if !self.nodes[id].value.requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let g32: Vec<f32> = gout.iter().map(|&g| g as f32).collect();
                self.nodes[id].value.accumulate_grad(&g32);
                continue;
            }
            let inputs = self.nodes[id].inputs.clone();
            let grads = self.backward_one(id, &gout);
            for (input, grad) in inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !self.nodes[input.0].value.requires_grad {
                    continue;
                }
                match &mut acc[input.0] {
                    Some(existing) => {
                        for (e, g) in existing.iter_mut().zip(&grad) {
                            *e += g;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    /// Gradient of one node's op w.r.t. each input, given the output gradient.
    /// Forward values are read back in float64.
    fn backward_one(&self, id: usize, gout: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.nodes[id];
        let val64 = |nid: NodeId| -> Vec<f64> {
            self.nodes[nid.0].value.data.iter().map(|&v| f64::from(v)).collect()
        };
        let in_shape = |i: usize| -> &[usize] { &self.nodes[node.inputs[i].0].value.shape };
        match &node.op {
            Op::Leaf => vec![],
            Op::Matmul => {
                let a = val64(node.inputs[0]);
                let b = val64(node.inputs[1]);
                let (m, kk) = (in_shape(0)[0], in_shape(0)[1]);
                let n = in_shape(1)[1];
                // dA = dC * B^T, dB = A^T * dC.
                let mut da = vec![0.0; m * kk];
                f64::gemm(m, n, kk, gout, false, &b, true, &mut da);
                let mut db = vec![0.0; kk * n];
                f64::gemm(kk, m, n, &a, true, gout, false, &mut db);
                vec![Some(da), Some(db)]
            }
            Op::Add => {
                let out_shape = &node.value.shape;
                let mut grads = Vec::with_capacity(2);
                for i in 0..2 {
                    let ish = in_shape(i);
                    if ish == out_shape.as_slice() {
                        grads.push(Some(gout.to_vec()));
                    } else {
                        // Sum the output gradient over broadcast positions.
                        let st = k::broadcast_strides(ish, out_shape);
                        let mut g = vec![0.0; k::numel(ish)];
                        k::for_each_broadcast(out_shape, &[&st], |lin, offs| {
                            g[offs[0]] += gout[lin];
                        });
                        grads.push(Some(g));
                    }
                }
                grads
            }
            Op::Mul => {
                let a = val64(node.inputs[0]);
                let b = val64(node.inputs[1]);
                let da = gout.iter().zip(&b).map(|(&g, &y)| g * y).collect();
                let db = gout.iter().zip(&a).map(|(&g, &x)| g * x).collect();
                vec![Some(da), Some(db)]
            }
            Op::Concat { axis } => {
                let out_shape = &node.value.shape;
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total_block = out_shape[*axis] * inner;
                let mut grads = Vec::with_capacity(node.inputs.len());
                let mut offset = 0usize;
                for i in 0..node.inputs.len() {
                    let len = in_shape(i)[*axis];
                    let block = len * inner;
                    let mut g = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        let base = o * total_block + offset;
                        g.extend_from_slice(&gout[base..base + block]);
                    }
                    grads.push(Some(g));
                    offset += block;
                }
                grads
            }
            Op::Slice { axis, start, len } => {
                let ish = in_shape(0);
                let (outer, full, inner) = k::reduce_layout(ish, *axis);
                let mut g = vec![0.0; k::numel(ish)];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * full + start) * inner;
                    g[dst..dst + len * inner].copy_from_slice(&gout[src..src + len * inner]);
                }
                vec![Some(g)]
            }
            Op::Reshape => vec![Some(gout.to_vec())],
            Op::Transpose { perm } => {
                // Inverse permutation applied to the gradient.
                let mut inv = vec![0usize; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inv[p] = d;
                }
                let mut g = Vec::new();
                k::transpose(gout, &node.value.shape, &inv, &mut g);
                vec![Some(g)]
            }
            Op::Relu => {
                let x = val64(node.inputs[0]);
                vec![Some(gout.iter().zip(&x).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect())]
            }
            Op::Softmax => {
                let y = val64(NodeId(id));
                let last = *node.value.shape.last().unwrap();
                let mut g = vec![0.0; y.len()];
                for r in 0..y.len() / last {
                    let ys = &y[r * last..(r + 1) * last];
                    let gs = &gout[r * last..(r + 1) * last];
                    let dot: f64 = ys.iter().zip(gs).map(|(&yv, &gv)| yv * gv).sum();
                    for i in 0..last {
                        g[r * last + i] = ys[i] * (gs[i] - dot);
                    }
                }
                vec![Some(g)]
            }
            Op::LayerNorm { eps } => {
                let x = val64(node.inputs[0]);
                let last = *node.value.shape.last().unwrap();
                let n = last as f64;
                let mut g = vec![0.0; x.len()];
                for r in 0..x.len() / last {
                    let xs = &x[r * last..(r + 1) * last];
                    let gs = &gout[r * last..(r + 1) * last];
                    let mean = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xs.iter().map(|&v| (v - mean) * inv).collect();
                    let mg = gs.iter().sum::<f64>() / n;
                    let mgx = gs.iter().zip(&xhat).map(|(&gv, &xv)| gv * xv).sum::<f64>() / n;
                    for i in 0..last {
                        g[r * last + i] = inv * (gs[i] - mg - xhat[i] * mgx);
                    }
                }
                vec![Some(g)]
            }
            Op::MaxReduce { axis } | Op::MinReduce { axis } => {
                let want_max = matches!(node.op, Op::MaxReduce { .. });
                let x = val64(node.inputs[0]);
                let ish = in_shape(0);
                let (mut vals, mut arg) = (Vec::new(), Vec::new());
                k::extremum_reduce(&x, ish, *axis, want_max, &mut vals, &mut arg);
                let (_, len, inner) = k::reduce_layout(ish, *axis);
                let outer = x.len() / (len * inner);
                let mut g = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let j = arg[o * inner + i];
                        g[(o * len + j) * inner + i] = gout[o * inner + i];
                    }
                }
                vec![Some(g)]
            }
            Op::MeanReduce { axis } => {
                let ish = in_shape(0);
                let (outer, len, inner) = k::reduce_layout(ish, *axis);
                let inv = 1.0 / len as f64;
                let mut g = vec![0.0; k::numel(ish)];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            g[(o * len + j) * inner + i] = gout[o * inner + i] * inv;
                        }
                    }
                }
                vec![Some(g)]
            }
            Op::GatherRows { indices } => {
                let ish = in_shape(0);
                let row: usize = ish[1..].iter().product();
                let mut g = vec![0.0; k::numel(ish)];
                for (out_row, &src) in indices.iter().enumerate() {
                    for c in 0..row {
                        g[src * row + c] += gout[out_row * row + c];
                    }
                }
                vec![Some(g)]
            }
            Op::Exp => {
                let y = val64(NodeId(id));
                vec![Some(gout.iter().zip(&y).map(|(&g, &v)| g * v).collect())]
            }
            Op::Log => {
                let x = val64(node.inputs[0]);
                vec![Some(gout.iter().zip(&x).map(|(&g, &v)| g / v).collect())]
            }
            Op::Sqrt => {
                let y = val64(NodeId(id));
                vec![Some(gout.iter().zip(&y).map(|(&g, &v)| g / (2.0 * v)).collect())]
            }
            Op::Arcosh => {
                let x = val64(node.inputs[0]);
                vec![Some(gout.iter().zip(&x).map(|(&g, &v)| g / (v * v - 1.0).sqrt()).collect())]
            }
            Op::Scale { c } => vec![Some(gout.iter().map(|&g| g * c).collect())],
            Op::AddScalar { .. } => vec![Some(gout.to_vec())],
            Op::PairwiseSqdist => {
                let p = val64(node.inputs[0]);
                let q = val64(node.inputs[1]);
                let (n, m) = (in_shape(0)[0], in_shape(1)[0]);
                let mut gp = vec![0.0; n * 3];
                let mut gq = vec![0.0; m * 3];
                for i in 0..n {
                    for j in 0..m {
                        let g = gout[i * m + j];
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..3 {
                            let d = p[i * 3 + c] - q[j * 3 + c];
                            gp[i * 3 + c] += 2.0 * g * d;
                            gq[j * 3 + c] -= 2.0 * g * d;
                        }
                    }
                }
                vec![Some(gp), Some(gq)]
            }
        }
    }

    /// Adds every parameter-backed leaf's gradient into the store. Call after
    /// [`Graph::backward`]; a shared parameter pulled in several times
    /// accumulates all of its uses.
    pub fn apply_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(pid), Some(g)) = (node.param, node.value.grad.as_deref()) {
                store.accumulate_grad(pid, g);
            }
        }
    }

    // --- float64 replay ----------------------------------------------------

    /// Re-executes the tape up to `target` in float64 and returns the scalar
    /// value. `overrides` substitutes leaf values (for finite differences);
    /// everything else re-runs from the recorded program, so data-dependent
    /// choices (argmax winners and the like) are recomputed at the perturbed
    /// point exactly as the forward pass would.
    pub fn replay_f64(&self, target: NodeId, overrides: &[(NodeId, &[f64])]) -> Result<f64> {
        if self.value(target).numel() != 1 {
            return Err(Error::NotScalarLoss { shape: self.shape(target).to_vec() });
        }
        let mut vals: Vec<Option<Vec<f64>>> = vec![None; target.0 + 1];
        for id in 0..=target.0 {
            let node = &self.nodes[id];
            let v = match &node.op {
                Op::Leaf => {
                    match overrides.iter().find(|(nid, _)| nid.0 == id) {
                        Some((_, data)) => data.to_vec(),
                        None => node.value.data.iter().map(|&v| f64::from(v)).collect(),
                    }
                }
                op => {
                    let input = |i: usize| vals[node.inputs[i].0].as_deref().expect("inputs precede consumers");
                    let mut out = Vec::new();
                    match op {
                        Op::Leaf => unreachable!(),
                        Op::Matmul => {
                            let s = &self.nodes[node.inputs[0].0].value.shape;
                            let n = self.nodes[node.inputs[1].0].value.shape[1];
                            k::matmul(input(0), input(1), s[0], s[1], n, &mut out);
                        }
                        Op::Add => {
                            let sa = self.nodes[node.inputs[0].0].value.shape.clone();
                            let sb = self.nodes[node.inputs[1].0].value.shape.clone();
                            k::add(input(0), &sa, input(1), &sb, &node.value.shape, &mut out);
                        }
                        Op::Mul => k::mul(input(0), input(1), &mut out),
                        Op::Concat { axis } => {
                            let bufs: Vec<(&[f64], &[usize])> = node
                                .inputs
                                .iter()
                                .map(|nid| {
                                    (vals[nid.0].as_deref().unwrap(), self.nodes[nid.0].value.shape.as_slice())
                                })
                                .collect();
                            k::concat(&bufs, *axis, &node.value.shape, &mut out);
                        }
                        Op::Slice { axis, start, len } => {
                            let ish = &self.nodes[node.inputs[0].0].value.shape;
                            k::slice(input(0), ish, *axis, *start, *len, &mut out);
                        }
                        Op::Reshape => out = input(0).to_vec(),
                        Op::Transpose { perm } => {
                            let ish = &self.nodes[node.inputs[0].0].value.shape;
                            k::transpose(input(0), ish, perm, &mut out);
                        }
                        Op::Relu => k::relu(input(0), &mut out),
                        Op::Softmax => k::softmax(input(0), *node.value.shape.last().unwrap(), &mut out),
                        Op::LayerNorm { eps } => {
                            k::layer_norm(input(0), *node.value.shape.last().unwrap(), *eps, &mut out)
                        }
                        Op::MaxReduce { axis } | Op::MinReduce { axis } => {
                            let want_max = matches!(op, Op::MaxReduce { .. });
                            let ish = &self.nodes[node.inputs[0].0].value.shape;
                            let mut arg = Vec::new();
                            k::extremum_reduce(input(0), ish, *axis, want_max, &mut out, &mut arg);
                        }
                        Op::MeanReduce { axis } => {
                            let ish = &self.nodes[node.inputs[0].0].value.shape;
                            k::mean_reduce(input(0), ish, *axis, &mut out);
                        }
                        Op::GatherRows { indices } => {
                            let ish = &self.nodes[node.inputs[0].0].value.shape;
                            let row: usize = ish[1..].iter().product();
                            k::gather_rows(input(0), row, indices, &mut out);
                        }
                        Op::Exp => k::exp(input(0), &mut out),
                        Op::Log => k::ln(input(0), &mut out),
                        Op::Sqrt => k::sqrt(input(0), &mut out),
                        Op::Arcosh => k::acosh(input(0), &mut out),
                        Op::Scale { c } => k::scale(input(0), *c, &mut out),
                        Op::AddScalar { c } => k::add_scalar(input(0), *c, &mut out),
                        Op::PairwiseSqdist => {
                            let n = self.nodes[node.inputs[0].0].value.shape[0];
                            let m = self.nodes[node.inputs[1].0].value.shape[0];
                            k::pairwise_sqdist(input(0), input(1), n, m, &mut out);
                        }
                    }
                    out
                }
            };
            vals[id] = Some(v);
        }
        Ok(vals[target.0].as_ref().unwrap()[0])
    }
}

// --- composite builders ------------------------------------------------------

impl Graph {
    /// `x W + b` for a row-major weight `(in x out)` and bias `(out)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Squared chamfer distance between two clouds held as `(n x 3)` nodes:
    /// the sum of both directional means of squared nearest distances.
    pub fn chamfer_l2(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let d = self.pairwise_sqdist(p, q)?;
        let min_pq = self.min_reduce(d, 1)?;
        let mean_pq = self.mean_reduce(min_pq, 0)?;
        let min_qp = self.min_reduce(d, 0)?;
        let mean_qp = self.mean_reduce(min_qp, 0)?;
        self.add(mean_pq, mean_qp)
    }

    /// `arcosh(1 + chamfer_l2(p, q))` — one term of the training objective.
    pub fn arc_chamfer(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let cd = self.chamfer_l2(p, q)?;
        let shifted = self.add_scalar(cd, 1.0)?;
        self.arcosh(shifted)
    }
}

#[cfg(test)]
mod tests;
