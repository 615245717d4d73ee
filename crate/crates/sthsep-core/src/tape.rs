//! Define-by-run computation tape. Each builder method validates shapes,
//! evaluates the op eagerly, and records enough structure to push gradients
//! back to its parents. `backward` walks nodes in reverse creation order,
//! which is a valid reverse topological order because parents always exist
//! before their children.

use std::collections::HashMap;

use crate::error::{CoreError, CoreResult};
use crate::store::ParamStore;
use crate::tensor::TensorF;

pub type NodeId = usize;

/// Variance floor inside layer normalization; keeps constant rows finite
/// while leaving the output variance within 1e-8 of 1 for ordinary inputs.
const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBiasRows(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    ScalarAdd(NodeId),
    MulScalarNode(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Permute(NodeId, Vec<usize>),
    Reshape(NodeId),
    Concat(Vec<NodeId>, usize),
    SliceAxis0(NodeId, usize),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    PowConst(NodeId, f64),
    Softmax(NodeId, usize),
    LayerNorm(NodeId),
    MeanAxis(NodeId, usize),
    SumAxis(NodeId, usize),
    MeanAll(NodeId),
    ScaleRows(NodeId, NodeId),
    ScaleCols(NodeId, NodeId),
    Conv1dCausal {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dilation: usize,
    },
}

struct Node {
    value: TensorF,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<String, NodeId>,
}

/// Per-node gradients produced by `Graph::backward`.
pub struct Gradients {
    grads: Vec<Option<TensorF>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&TensorF> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

fn lane_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let alen = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, alen, inner)
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &TensorF {
        &self.nodes[id].value
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: TensorF, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Differentiable leaf holding caller data.
    pub fn input(&mut self, t: TensorF) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Non-parameter leaf; same behavior as `input`, named for intent.
    pub fn constant(&mut self, t: TensorF) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Leaf bound to a named parameter. Repeated lookups share one node so
    /// gradients from every use accumulate in a single place.
    pub fn param(&mut self, name: &str) -> CoreResult<NodeId> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let value = self.store.value(name)?.clone();
        let id = self.push(value, Op::Param(name.to_string()));
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> CoreResult<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(CoreError::ShapeMismatch {
                op: op_name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let data = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = TensorF::new(sa.to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `[R, C] + [C]`: broadcast a bias vector across rows.
    pub fn add_bias_rows(&mut self, x: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let bs = self.nodes[b].value.shape().to_vec();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(CoreError::ShapeMismatch {
                op: "add_bias_rows",
                lhs: xs,
                rhs: bs,
            });
        }
        let (r, c) = (xs[0], xs[1]);
        let mut out = TensorF::zeros(&[r, c]);
        {
            let xd = self.nodes[x].value.data();
            let bd = self.nodes[b].value.data();
            let od = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    od[i * c + j] = xd[i * c + j] + bd[j];
                }
            }
        }
        Ok(self.push(out, Op::AddBiasRows(x, b)))
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x].value.map(|v| v * c);
        self.push(value, Op::ScalarMul(x, c))
    }

    pub fn scalar_add(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x].value.map(|v| v + c);
        self.push(value, Op::ScalarAdd(x))
    }

    /// Multiply every element by a one-element node (learned scalar).
    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> CoreResult<NodeId> {
        if self.nodes[s].value.len() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "mul_scalar_node",
                lhs: self.nodes[x].value.shape().to_vec(),
                rhs: self.nodes[s].value.shape().to_vec(),
            });
        }
        let sv = self.nodes[s].value.data()[0];
        let value = self.nodes[x].value.map(|v| v * sv);
        Ok(self.push(value, Op::MulScalarNode(x, s)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let sa = self.nodes[a].value.shape().to_vec();
        let sb = self.nodes[b].value.shape().to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = TensorF::zeros(&[m, n]);
        {
            let ad = self.nodes[a].value.data();
            let bd = self.nodes[b].value.data();
            let od = out.data_mut();
            for i in 0..m {
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    let orow = &mut od[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
        }
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: NodeId) -> CoreResult<NodeId> {
        if self.nodes[x].value.rank() != 2 {
            return Err(CoreError::InvalidShape(format!(
                "transpose expects rank 2, got {:?}",
                self.nodes[x].value.shape()
            )));
        }
        let value = self.nodes[x].value.transposed2();
        Ok(self.push(value, Op::Transpose(x)))
    }

    /// Axis permutation for any rank; materializes the data.
    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> CoreResult<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(CoreError::InvalidArgument(format!(
                "permute axes {:?} invalid for shape {:?}",
                axes, shape
            )));
        }
        let value = permute_data(&self.nodes[x].value, axes);
        Ok(self.push(value, Op::Permute(x, axes.to_vec())))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> CoreResult<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.nodes[x].value.len() {
            return Err(CoreError::InvalidShape(format!(
                "reshape {:?} -> {:?} changes element count",
                self.nodes[x].value.shape(),
                shape
            )));
        }
        let value = TensorF::new(shape.to_vec(), self.nodes[x].value.data().to_vec())?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> CoreResult<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.nodes[parts[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(CoreError::InvalidArgument(format!(
                "concat axis {} out of range for shape {:?}",
                axis, first
            )));
        }
        let mut total_axis = 0;
        for &p in parts {
            let s = self.nodes[p].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(CoreError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total_axis;
        let (outer, _, inner) = lane_split(&out_shape, axis);
        let mut out = TensorF::zeros(&out_shape);
        {
            let od = out.data_mut();
            let mut offset = 0;
            for &p in parts {
                let s = self.nodes[p].value.shape();
                let alen = s[axis];
                let pd = self.nodes[p].value.data();
                for o in 0..outer {
                    let src = &pd[o * alen * inner..(o + 1) * alen * inner];
                    let dst_start = (o * total_axis + offset) * inner;
                    od[dst_start..dst_start + alen * inner].copy_from_slice(src);
                }
                offset += alen;
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis)))
    }

    /// Contiguous slice along axis 0.
    pub fn slice_axis0(&mut self, x: NodeId, start: usize, len: usize) -> CoreResult<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(CoreError::InvalidArgument(format!(
                "slice [{start}, {start}+{len}) out of range for shape {:?}",
                shape
            )));
        }
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let data = self.nodes[x].value.data()[start * inner..(start + len) * inner].to_vec();
        let value = TensorF::new(out_shape, data)?;
        Ok(self.push(value, Op::SliceAxis0(x, start)))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    /// ReLU with the subgradient-at-zero convention fixed to 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(x))
    }

    pub fn abs_val(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(f64::abs);
        self.push(value, Op::Abs(x))
    }

    /// Elementwise `x^p`; callers are responsible for keeping x in-domain
    /// (used for the inverse-sqrt degree scaling, where x >= 1).
    pub fn pow_const(&mut self, x: NodeId, p: f64) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.powf(p));
        self.push(value, Op::PowConst(x, p))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> CoreResult<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        if axis >= shape.len() {
            return Err(CoreError::InvalidArgument(format!(
                "softmax axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let (outer, alen, inner) = lane_split(&shape, axis);
        let mut out = TensorF::zeros(&shape);
        {
            let xd = self.nodes[x].value.data();
            let od = out.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * alen + k) * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for k in 0..alen {
                        mx = mx.max(xd[at(k)]);
                    }
                    let mut sum = 0.0;
                    for k in 0..alen {
                        let e = (xd[at(k)] - mx).exp();
                        od[at(k)] = e;
                        sum += e;
                    }
                    for k in 0..alen {
                        od[at(k)] /= sum;
                    }
                }
            }
        }
        Ok(self.push(out, Op::Softmax(x, axis)))
    }

    /// Normalizes each lane along the last axis to zero mean, unit variance.
    pub fn layer_norm(&mut self, x: NodeId) -> CoreResult<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        if shape.is_empty() {
            return Err(CoreError::InvalidShape("layer_norm on empty shape".into()));
        }
        let last = *shape.last().unwrap();
        let lanes = self.nodes[x].value.len() / last;
        let mut out = TensorF::zeros(&shape);
        {
            let xd = self.nodes[x].value.data();
            let od = out.data_mut();
            for l in 0..lanes {
                let seg = &xd[l * last..(l + 1) * last];
                let mean = seg.iter().sum::<f64>() / last as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
                let sigma = (var + LAYER_NORM_EPS).sqrt();
                for k in 0..last {
                    od[l * last + k] = (seg[k] - mean) / sigma;
                }
            }
        }
        Ok(self.push(out, Op::LayerNorm(x)))
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> CoreResult<NodeId> {
        self.reduce_axis(x, axis, true)
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> CoreResult<NodeId> {
        self.reduce_axis(x, axis, false)
    }

    fn reduce_axis(&mut self, x: NodeId, axis: usize, mean: bool) -> CoreResult<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        if axis >= shape.len() {
            return Err(CoreError::InvalidArgument(format!(
                "reduce axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let (outer, alen, inner) = lane_split(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = TensorF::zeros(&out_shape);
        {
            let xd = self.nodes[x].value.data();
            let od = out.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let mut s = 0.0;
                    for k in 0..alen {
                        s += xd[(o * alen + k) * inner + i];
                    }
                    od[o * inner + i] = if mean { s / alen as f64 } else { s };
                }
            }
        }
        let op = if mean {
            Op::MeanAxis(x, axis)
        } else {
            Op::SumAxis(x, axis)
        };
        Ok(self.push(out, op))
    }

    /// Mean over every element, producing a scalar node.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].value.len() as f64;
        let s: f64 = self.nodes[x].value.data().iter().sum();
        self.push(TensorF::scalar(s / n), Op::MeanAll(x))
    }

    /// `diag(v) * x` for `x: [R, C]`, `v: [R]`.
    pub fn scale_rows(&mut self, x: NodeId, v: NodeId) -> CoreResult<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let vs = self.nodes[v].value.shape().to_vec();
        if xs.len() != 2 || vs.len() != 1 || vs[0] != xs[0] {
            return Err(CoreError::ShapeMismatch {
                op: "scale_rows",
                lhs: xs,
                rhs: vs,
            });
        }
        let (r, c) = (xs[0], xs[1]);
        let mut out = TensorF::zeros(&[r, c]);
        {
            let xd = self.nodes[x].value.data();
            let vd = self.nodes[v].value.data();
            let od = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    od[i * c + j] = xd[i * c + j] * vd[i];
                }
            }
        }
        Ok(self.push(out, Op::ScaleRows(x, v)))
    }

    /// `x * diag(v)` for `x: [R, C]`, `v: [C]`.
    pub fn scale_cols(&mut self, x: NodeId, v: NodeId) -> CoreResult<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let vs = self.nodes[v].value.shape().to_vec();
        if xs.len() != 2 || vs.len() != 1 || vs[0] != xs[1] {
            return Err(CoreError::ShapeMismatch {
                op: "scale_cols",
                lhs: xs,
                rhs: vs,
            });
        }
        let (r, c) = (xs[0], xs[1]);
        let mut out = TensorF::zeros(&[r, c]);
        {
            let xd = self.nodes[x].value.data();
            let vd = self.nodes[v].value.data();
            let od = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    od[i * c + j] = xd[i * c + j] * vd[j];
                }
            }
        }
        Ok(self.push(out, Op::ScaleCols(x, v)))
    }

    /// Causal dilated 1-D convolution over the leading (time) axis.
    ///
    /// `x: [T, N, Cin]`, `w: [K, Cin, Cout]`, `b: [Cout]` -> `[T, N, Cout]`.
    /// Missing history (negative time) is treated as zero left-padding, so
    /// output t depends only on inputs at times <= t.
    pub fn conv1d_causal(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dilation: usize,
    ) -> CoreResult<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let ws = self.nodes[w].value.shape().to_vec();
        let bs = self.nodes[b].value.shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 || xs[2] != ws[1] || ws[2] != bs[0] {
            return Err(CoreError::ShapeMismatch {
                op: "conv1d_causal",
                lhs: xs,
                rhs: ws,
            });
        }
        if dilation == 0 {
            return Err(CoreError::InvalidArgument("conv dilation must be >= 1".into()));
        }
        let (t_len, n, cin) = (xs[0], xs[1], xs[2]);
        let (k_len, _, cout) = (ws[0], ws[1], ws[2]);
        if (k_len - 1) * dilation >= t_len {
            return Err(CoreError::InvalidArgument(format!(
                "conv receptive field (k={k_len}, dilation={dilation}) exceeds input length {t_len}"
            )));
        }
        let mut out = TensorF::zeros(&[t_len, n, cout]);
        {
            let xd = self.nodes[x].value.data();
            let wd = self.nodes[w].value.data();
            let bd = self.nodes[b].value.data();
            let od = out.data_mut();
            for t in 0..t_len {
                for nn in 0..n {
                    let obase = (t * n + nn) * cout;
                    for o in 0..cout {
                        od[obase + o] = bd[o];
                    }
                    for k in 0..k_len {
                        let back = (k_len - 1 - k) * dilation;
                        if back > t {
                            continue;
                        }
                        let src = t - back;
                        let xbase = (src * n + nn) * cin;
                        for ci in 0..cin {
                            let xv = xd[xbase + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let wbase = (k * cin + ci) * cout;
                            for o in 0..cout {
                                od[obase + o] += xv * wd[wbase + o];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Conv1dCausal { x, w, b, dilation }))
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> CoreResult<Gradients> {
        let lshape = self.nodes[loss].value.shape();
        if self.nodes[loss].value.len() != 1 {
            return Err(CoreError::NonScalarLoss(lshape.to_vec()));
        }
        let mut grads: Vec<Option<TensorF>> = vec![None; self.nodes.len()];
        grads[loss] = Some(TensorF::new(lshape.to_vec(), vec![1.0])?);

        for id in (0..self.nodes.len()).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.push_back(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients for every parameter leaf, in node-creation order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(String, TensorF)> {
        let mut out = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = grads.get(id) {
                    out.push((name.clone(), g.clone()));
                }
            }
        }
        out
    }

    fn push_back(
        &self,
        id: NodeId,
        g: &TensorF,
        grads: &mut Vec<Option<TensorF>>,
    ) -> CoreResult<()> {
        let acc = |grads: &mut Vec<Option<TensorF>>, target: NodeId, add: TensorF| {
            match &mut grads[target] {
                Some(existing) => {
                    for (dst, src) in existing.data_mut().iter_mut().zip(add.data()) {
                        *dst += src;
                    }
                }
                slot @ None => *slot = Some(add),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let mut da = TensorF::zeros(av.shape());
                let mut db = TensorF::zeros(bv.shape());
                for i in 0..g.len() {
                    da.data_mut()[i] = g.data()[i] * bv.data()[i];
                    db.data_mut()[i] = g.data()[i] * av.data()[i];
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::AddBiasRows(x, b) => {
                let (r, c) = {
                    let s = self.nodes[*x].value.shape();
                    (s[0], s[1])
                };
                acc(grads, *x, g.clone());
                let mut db = TensorF::zeros(&[c]);
                for i in 0..r {
                    for j in 0..c {
                        db.data_mut()[j] += g.data()[i * c + j];
                    }
                }
                acc(grads, *b, db);
            }
            Op::ScalarMul(x, cst) => {
                acc(grads, *x, g.map(|v| v * cst));
            }
            Op::ScalarAdd(x) => {
                acc(grads, *x, g.clone());
            }
            Op::MulScalarNode(x, s) => {
                let sv = self.nodes[*s].value.data()[0];
                acc(grads, *x, g.map(|v| v * sv));
                let xs = self.nodes[*x].value.data();
                let ds: f64 = g.data().iter().zip(xs).map(|(gv, xv)| gv * xv).sum();
                acc(grads, *s, TensorF::new(self.nodes[*s].value.shape().to_vec(), vec![ds])?);
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = g . B^T
                let mut da = TensorF::zeros(&[m, k]);
                {
                    let gd = g.data();
                    let bd = bv.data();
                    let dd = da.data_mut();
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gd[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                dd[i * k + p] += gij * bd[p * n + j];
                            }
                        }
                    }
                }
                // dB = A^T . g
                let mut db = TensorF::zeros(&[k, n]);
                {
                    let gd = g.data();
                    let ad = av.data();
                    let dd = db.data_mut();
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                dd[p * n + j] += aip * gd[i * n + j];
                            }
                        }
                    }
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Transpose(x) => {
                acc(grads, *x, g.transposed2());
            }
            Op::Permute(x, axes) => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                acc(grads, *x, permute_data(g, &inverse));
            }
            Op::Reshape(x) => {
                let back = TensorF::new(
                    self.nodes[*x].value.shape().to_vec(),
                    g.data().to_vec(),
                )?;
                acc(grads, *x, back);
            }
            Op::Concat(parts, axis) => {
                let out_shape = self.nodes[id].value.shape();
                let (outer, total_axis, inner) = lane_split(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let alen = self.nodes[p].value.shape()[*axis];
                    let mut dp = TensorF::zeros(self.nodes[p].value.shape());
                    {
                        let dd = dp.data_mut();
                        for o in 0..outer {
                            let src_start = (o * total_axis + offset) * inner;
                            dd[o * alen * inner..(o + 1) * alen * inner]
                                .copy_from_slice(&g.data()[src_start..src_start + alen * inner]);
                        }
                    }
                    acc(grads, p, dp);
                    offset += alen;
                }
            }
            Op::SliceAxis0(x, start) => {
                let xshape = self.nodes[*x].value.shape();
                let inner: usize = xshape[1..].iter().product();
                let len = self.nodes[id].value.shape()[0];
                let mut dx = TensorF::zeros(xshape);
                dx.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
                acc(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let y = &self.nodes[id].value;
                let mut dx = TensorF::zeros(y.shape());
                for i in 0..y.len() {
                    dx.data_mut()[i] = g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
                }
                acc(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[id].value;
                let mut dx = TensorF::zeros(y.shape());
                for i in 0..y.len() {
                    let yv = y.data()[i];
                    dx.data_mut()[i] = g.data()[i] * yv * (1.0 - yv);
                }
                acc(grads, *x, dx);
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].value;
                let mut dx = TensorF::zeros(xv.shape());
                for i in 0..xv.len() {
                    dx.data_mut()[i] = if xv.data()[i] > 0.0 { g.data()[i] } else { 0.0 };
                }
                acc(grads, *x, dx);
            }
            Op::Abs(x) => {
                let xv = &self.nodes[*x].value;
                let mut dx = TensorF::zeros(xv.shape());
                for i in 0..xv.len() {
                    let s = if xv.data()[i] > 0.0 {
                        1.0
                    } else if xv.data()[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    dx.data_mut()[i] = g.data()[i] * s;
                }
                acc(grads, *x, dx);
            }
            Op::PowConst(x, p) => {
                let xv = &self.nodes[*x].value;
                let mut dx = TensorF::zeros(xv.shape());
                for i in 0..xv.len() {
                    dx.data_mut()[i] = g.data()[i] * p * xv.data()[i].powf(p - 1.0);
                }
                acc(grads, *x, dx);
            }
            Op::Softmax(x, axis) => {
                let y = &self.nodes[id].value;
                let (outer, alen, inner) = lane_split(y.shape(), *axis);
                let mut dx = TensorF::zeros(y.shape());
                {
                    let yd = y.data();
                    let gd = g.data();
                    let dd = dx.data_mut();
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * alen + k) * inner + i;
                            let mut dot = 0.0;
                            for k in 0..alen {
                                dot += gd[at(k)] * yd[at(k)];
                            }
                            for k in 0..alen {
                                dd[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::LayerNorm(x) => {
                let xv = &self.nodes[*x].value;
                let y = &self.nodes[id].value;
                let last = *xv.shape().last().unwrap();
                let lanes = xv.len() / last;
                let mut dx = TensorF::zeros(xv.shape());
                {
                    let xd = xv.data();
                    let yd = y.data();
                    let gd = g.data();
                    let dd = dx.data_mut();
                    for l in 0..lanes {
                        let base = l * last;
                        let seg = &xd[base..base + last];
                        let mean = seg.iter().sum::<f64>() / last as f64;
                        let var =
                            seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
                        let sigma = (var + LAYER_NORM_EPS).sqrt();
                        let gm = gd[base..base + last].iter().sum::<f64>() / last as f64;
                        let gym = gd[base..base + last]
                            .iter()
                            .zip(&yd[base..base + last])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / last as f64;
                        // Exact because y already absorbs sigma:
                        // dL/dx_k = (g_k - mean(g) - y_k * mean(g .* y)) / sigma
                        for k in 0..last {
                            dd[base + k] = (gd[base + k] - gm - yd[base + k] * gym) / sigma;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::MeanAxis(x, axis) | Op::SumAxis(x, axis) => {
                let mean = matches!(self.nodes[id].op, Op::MeanAxis(..));
                let xshape = self.nodes[*x].value.shape();
                let (outer, alen, inner) = lane_split(xshape, *axis);
                let scale = if mean { 1.0 / alen as f64 } else { 1.0 };
                let mut dx = TensorF::zeros(xshape);
                {
                    let gd = g.data();
                    let dd = dx.data_mut();
                    for o in 0..outer {
                        for i in 0..inner {
                            let gv = gd[o * inner + i] * scale;
                            for k in 0..alen {
                                dd[(o * alen + k) * inner + i] = gv;
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::MeanAll(x) => {
                let n = self.nodes[*x].value.len();
                let gv = g.data()[0] / n as f64;
                acc(grads, *x, TensorF::filled(self.nodes[*x].value.shape(), gv));
            }
            Op::ScaleRows(x, v) => {
                let xv = &self.nodes[*x].value;
                let vv = &self.nodes[*v].value;
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let mut dx = TensorF::zeros(xv.shape());
                let mut dv = TensorF::zeros(vv.shape());
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = g.data()[i * c + j] * vv.data()[i];
                        dv.data_mut()[i] += g.data()[i * c + j] * xv.data()[i * c + j];
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *v, dv);
            }
            Op::ScaleCols(x, v) => {
                let xv = &self.nodes[*x].value;
                let vv = &self.nodes[*v].value;
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let mut dx = TensorF::zeros(xv.shape());
                let mut dv = TensorF::zeros(vv.shape());
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = g.data()[i * c + j] * vv.data()[j];
                        dv.data_mut()[j] += g.data()[i * c + j] * xv.data()[i * c + j];
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *v, dv);
            }
            Op::Conv1dCausal { x, w, b, dilation } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (t_len, n, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (k_len, _, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let mut dx = TensorF::zeros(xv.shape());
                let mut dw = TensorF::zeros(wv.shape());
                let mut db = TensorF::zeros(self.nodes[*b].value.shape());
                {
                    let gd = g.data();
                    let xd = xv.data();
                    let wd = wv.data();
                    let dxd = dx.data_mut();
                    let dwd = dw.data_mut();
                    let dbd = db.data_mut();
                    for t in 0..t_len {
                        for nn in 0..n {
                            let gbase = (t * n + nn) * cout;
                            for o in 0..cout {
                                dbd[o] += gd[gbase + o];
                            }
                            for k in 0..k_len {
                                let back = (k_len - 1 - k) * dilation;
                                if back > t {
                                    continue;
                                }
                                let src = t - back;
                                let xbase = (src * n + nn) * cin;
                                for ci in 0..cin {
                                    let wbase = (k * cin + ci) * cout;
                                    let xvv = xd[xbase + ci];
                                    let mut dx_acc = 0.0;
                                    for o in 0..cout {
                                        let gv = gd[gbase + o];
                                        dwd[wbase + o] += xvv * gv;
                                        dx_acc += wd[wbase + o] * gv;
                                    }
                                    dxd[xbase + ci] += dx_acc;
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *w, dw);
                acc(grads, *b, db);
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn permute_data(t: &TensorF, axes: &[usize]) -> TensorF {
    let shape = t.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out = TensorF::zeros(&out_shape);
    let total = t.len();
    {
        let td = t.data();
        let od = out.data_mut();
        let mut idx = vec![0usize; rank];
        for (flat, slot) in od.iter_mut().enumerate().take(total) {
            // Decompose the flat output index into out coordinates.
            let mut rem = flat;
            for a in (0..rank).rev() {
                idx[a] = rem % out_shape[a];
                rem /= out_shape[a];
            }
            let mut src = 0;
            for a in 0..rank {
                src += idx[a] * in_strides[axes[a]];
            }
            *slot = td[src];
        }
    }
    out
}
