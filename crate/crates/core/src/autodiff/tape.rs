use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Tape::apply`], with their attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Elementwise with numpy-style broadcasting.
    Add,
    Sub,
    Mul,
    Div,
    /// `[n, k] x [k, m] -> [n, m]`.
    MatMul,
    Relu,
    LeakyRelu { slope: f64 },
    Concat { axis: usize },
    /// Removes `axis`; the backward pass routes to the first maximal entry.
    ReduceMax { axis: usize },
    ReduceMean { axis: usize },
    ReduceSum { axis: usize },
    /// Sum of every element into a scalar.
    SumAll,
    Reshape { shape: Vec<usize> },
    IndexSelect { axis: usize, indices: Vec<usize> },
    /// Inputs `[C, H, W]`, weight `[Co, C, kh, kw]`, bias `[Co]`; zero padding.
    Conv2d { stride: usize, padding: usize },
    /// `[C, H, W] -> [C]`.
    GlobalMaxPool2d,
    /// `[n, d], [m, d] -> [n, m]` of squared Euclidean distances.
    SqDistMatrix,
    Softmax { axis: usize },
    Sqrt,
    Scale { factor: f64 },
    /// Rank-2 transpose.
    Transpose,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "multiply",
            OpKind::Div => "divide",
            OpKind::MatMul => "matmul",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu { .. } => "leaky_relu",
            OpKind::Concat { .. } => "concat",
            OpKind::ReduceMax { .. } => "reduce_max",
            OpKind::ReduceMean { .. } => "reduce_mean",
            OpKind::ReduceSum { .. } => "reduce_sum",
            OpKind::SumAll => "sum",
            OpKind::Reshape { .. } => "reshape",
            OpKind::IndexSelect { .. } => "index_select",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::GlobalMaxPool2d => "global_max_pool_2d",
            OpKind::SqDistMatrix => "sq_dist_matrix",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Sqrt => "sqrt",
            OpKind::Scale { .. } => "scale",
            OpKind::Transpose => "transpose",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => Some(2),
            OpKind::MatMul | OpKind::SqDistMatrix => Some(2),
            OpKind::Conv2d { .. } => Some(3),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

struct Node {
    value: Tensor,
    op: Option<OpKind>,
    inputs: Vec<Var>,
    argmax: Vec<usize>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// a reverse sweep is a valid topological traversal.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not require gradients or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push(value, None, Vec::new(), Vec::new(), requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Argmax routing saved by a max-reduction node.
    pub fn argmax(&self, var: Var) -> Option<&[usize]> {
        let node = &self.nodes[var.0];
        match node.op {
            Some(OpKind::ReduceMax { .. }) | Some(OpKind::GlobalMaxPool2d) => Some(&node.argmax),
            _ => None,
        }
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Option<OpKind>,
        inputs: Vec<Var>,
        argmax: Vec<usize>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node { value, op, inputs, argmax, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records `kind` applied to `inputs` and returns the output node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let name = kind.name();
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(Error::shape(name, format!("expected {n} inputs, got {}", inputs.len())));
            }
        } else if inputs.is_empty() {
            return Err(Error::shape(name, "no inputs"));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Invalid(format!("{name}: unknown node {}", bad.0)));
        }
        let (value, argmax) = self.forward(&kind, inputs)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, Some(kind), inputs.to_vec(), argmax, requires_grad))
    }

    fn forward(&self, kind: &OpKind, inputs: &[Var]) -> Result<(Tensor, Vec<usize>)> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let name = kind.name();
        let out = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let (a, b) = (val(0), val(1));
                let shape = broadcast_shape(a.shape(), b.shape())
                    .ok_or_else(|| Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
                let f: fn(f64, f64) -> f64 = match kind {
                    OpKind::Add => |x, y| x + y,
                    OpKind::Sub => |x, y| x - y,
                    OpKind::Mul => |x, y| x * y,
                    _ => |x, y| x / y,
                };
                let data = if a.shape() == b.shape() {
                    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
                } else {
                    let ma = broadcast_map(a.shape(), &shape);
                    let mb = broadcast_map(b.shape(), &shape);
                    ma.iter().zip(&mb).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect()
                };
                Tensor::new(shape, data)?
            }
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (n, k, m) = matmul_dims(a.shape(), b.shape())?;
                Tensor::new(vec![n, m], matmul(a.data(), b.data(), n, k, m))?
            }
            OpKind::Relu => map(val(0), |x| x.max(0.0)),
            OpKind::LeakyRelu { slope } => {
                let s = *slope;
                map(val(0), move |x| if x > 0.0 { x } else { s * x })
            }
            OpKind::Sqrt => map(val(0), f64::sqrt),
            OpKind::Scale { factor } => {
                let s = *factor;
                map(val(0), move |x| s * x)
            }
            OpKind::Concat { axis } => {
                let parts: Vec<&Tensor> = (0..inputs.len()).map(val).collect();
                concat(&parts, *axis)?
            }
            OpKind::ReduceMax { axis } => {
                let x = val(0);
                let (outer, len, inner) = split_axis(x.shape(), *axis, name)?;
                let mut out = Vec::with_capacity(outer * inner);
                let mut arg = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for j in 0..inner {
                        let base = o * len * inner + j;
                        let (mut best, mut best_l) = (x.data()[base], 0);
                        for l in 1..len {
                            let v = x.data()[base + l * inner];
                            if v > best {
                                best = v;
                                best_l = l;
                            }
                        }
                        out.push(best);
                        arg.push(best_l);
                    }
                }
                return Ok((Tensor::new(reduced_shape(x.shape(), *axis), out)?, arg));
            }
            OpKind::ReduceMean { axis } | OpKind::ReduceSum { axis } => {
                let x = val(0);
                let (outer, len, inner) = split_axis(x.shape(), *axis, name)?;
                let scale = if matches!(kind, OpKind::ReduceMean { .. }) { 1.0 / len as f64 } else { 1.0 };
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= scale);
                Tensor::new(reduced_shape(x.shape(), *axis), out)?
            }
            OpKind::SumAll => Tensor::scalar(val(0).data().iter().sum()),
            OpKind::Reshape { shape } => {
                let x = val(0);
                if shape.iter().product::<usize>() != x.len() {
                    return Err(Error::shape(name, format!("{:?} -> {shape:?}", x.shape())));
                }
                Tensor::new(shape.clone(), x.data().to_vec())?
            }
            OpKind::IndexSelect { axis, indices } => {
                let x = val(0);
                let (outer, len, inner) = split_axis(x.shape(), *axis, name)?;
                if indices.is_empty() {
                    return Err(Error::shape(name, "empty index list"));
                }
                if let Some(bad) = indices.iter().find(|&&i| i >= len) {
                    return Err(Error::shape(name, format!("index {bad} out of range {len}")));
                }
                let mut out = Vec::with_capacity(outer * indices.len() * inner);
                for o in 0..outer {
                    for &i in indices {
                        let start = (o * len + i) * inner;
                        out.extend_from_slice(&x.data()[start..start + inner]);
                    }
                }
                let mut shape = x.shape().to_vec();
                shape[*axis] = indices.len();
                Tensor::new(shape, out)?
            }
            OpKind::Conv2d { stride, padding } => {
                let geom = ConvGeom::new(val(0).shape(), val(1).shape(), val(2).shape(), *stride, *padding)?;
                let out = geom.forward(val(0).data(), val(1).data(), val(2).data());
                Tensor::new(vec![geom.co, geom.ho, geom.wo], out)?
            }
            OpKind::GlobalMaxPool2d => {
                let x = val(0);
                if x.shape().len() != 3 {
                    return Err(Error::shape(name, format!("expected [C, H, W], got {:?}", x.shape())));
                }
                let plane = x.shape()[1] * x.shape()[2];
                let mut out = Vec::with_capacity(x.shape()[0]);
                let mut arg = Vec::with_capacity(x.shape()[0]);
                for ch in x.data().chunks_exact(plane) {
                    let (mut best, mut best_i) = (ch[0], 0);
                    for (i, &v) in ch.iter().enumerate().skip(1) {
                        if v > best {
                            best = v;
                            best_i = i;
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
                return Ok((Tensor::new(vec![x.shape()[0]], out)?, arg));
            }
            OpKind::SqDistMatrix => {
                let (a, b) = (val(0), val(1));
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
                    return Err(Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let (n, m, d) = (a.shape()[0], b.shape()[0], a.shape()[1]);
                let mut out = Vec::with_capacity(n * m);
                for i in 0..n {
                    let ai = &a.data()[i * d..(i + 1) * d];
                    for j in 0..m {
                        let bj = &b.data()[j * d..(j + 1) * d];
                        out.push(ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum());
                    }
                }
                Tensor::new(vec![n, m], out)?
            }
            OpKind::Softmax { axis } => {
                let x = val(0);
                let (outer, len, inner) = split_axis(x.shape(), *axis, name)?;
                let mut out = x.data().to_vec();
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + j;
                        let max = (0..len).map(|l| out[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                        let mut total = 0.0;
                        for l in 0..len {
                            let e = (out[idx(l)] - max).exp();
                            out[idx(l)] = e;
                            total += e;
                        }
                        for l in 0..len {
                            out[idx(l)] /= total;
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), out)?
            }
            OpKind::Transpose => {
                let x = val(0);
                if x.shape().len() != 2 {
                    return Err(Error::shape(name, format!("expected rank 2, got {:?}", x.shape())));
                }
                let (r, c) = (x.shape()[0], x.shape()[1]);
                Tensor::new(vec![c, r], transpose(x.data(), r, c))?
            }
        };
        Ok((out, Vec::new()))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Invalid(format!("backward: unknown node {}", loss.0)));
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", loss_value.shape())));
        }
        if !loss_value.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, op, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, op: &OpKind, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let inputs = &node.inputs;
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let wants = |i: usize| self.nodes[inputs[i].0].requires_grad;
        // Accumulates into the gradient buffer of input `i`.
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            let var = inputs[i];
            if !self.nodes[var.0].requires_grad {
                return;
            }
            let buf = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.len()]);
            f(buf);
        };
        match op {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let (a, b) = (val(0), val(1));
                let out_shape = node.value.shape();
                let ma = broadcast_map(a.shape(), out_shape);
                let mb = broadcast_map(b.shape(), out_shape);
                let (ad, bd) = (a.data(), b.data());
                if wants(0) {
                    acc(0, &mut |ga| {
                        for (k, &gk) in g.iter().enumerate() {
                            let d = match op {
                                OpKind::Mul => bd[mb[k]],
                                OpKind::Div => 1.0 / bd[mb[k]],
                                _ => 1.0,
                            };
                            ga[ma[k]] += gk * d;
                        }
                    });
                }
                if wants(1) {
                    acc(1, &mut |gb| {
                        for (k, &gk) in g.iter().enumerate() {
                            let d = match op {
                                OpKind::Add => 1.0,
                                OpKind::Sub => -1.0,
                                OpKind::Mul => ad[ma[k]],
                                _ => -ad[ma[k]] / (bd[mb[k]] * bd[mb[k]]),
                            };
                            gb[mb[k]] += gk * d;
                        }
                    });
                }
            }
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                if wants(0) {
                    // dA = G * B^T
                    let bt = transpose(b.data(), k, m);
                    let da = matmul(g, &bt, n, m, k);
                    acc(0, &mut |ga| add_into(ga, &da));
                }
                if wants(1) {
                    // dB = A^T * G
                    let at = transpose(a.data(), n, k);
                    let db = matmul(&at, g, k, n, m);
                    acc(1, &mut |gb| add_into(gb, &db));
                }
            }
            OpKind::Relu | OpKind::LeakyRelu { .. } => {
                let slope = match op {
                    OpKind::LeakyRelu { slope } => *slope,
                    _ => 0.0,
                };
                let x = val(0).data();
                acc(0, &mut |gx| {
                    for ((d, &xi), &gi) in gx.iter_mut().zip(x).zip(g) {
                        *d += if xi > 0.0 { gi } else { slope * gi };
                    }
                });
            }
            OpKind::Sqrt => {
                let y = node.value.data();
                acc(0, &mut |gx| {
                    for ((d, &yi), &gi) in gx.iter_mut().zip(y).zip(g) {
                        // Subgradient 0 at the origin.
                        if yi > 0.0 {
                            *d += gi / (2.0 * yi);
                        }
                    }
                });
            }
            OpKind::Scale { factor } => {
                acc(0, &mut |gx| {
                    for (d, &gi) in gx.iter_mut().zip(g) {
                        *d += factor * gi;
                    }
                });
            }
            OpKind::Concat { axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for i in 0..inputs.len() {
                    let len = val(i).shape()[*axis];
                    acc(i, &mut |gx| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut gx[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            OpKind::ReduceMax { axis } => {
                let shape = val(0).shape();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let arg = &node.argmax;
                acc(0, &mut |gx| {
                    for (k, &gk) in g.iter().enumerate() {
                        let (o, j) = (k / inner, k % inner);
                        gx[(o * len + arg[k]) * inner + j] += gk;
                    }
                });
            }
            OpKind::ReduceMean { axis } | OpKind::ReduceSum { axis } => {
                let shape = val(0).shape();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let scale = if matches!(op, OpKind::ReduceMean { .. }) { 1.0 / len as f64 } else { 1.0 };
                acc(0, &mut |gx| {
                    for (k, &gk) in g.iter().enumerate() {
                        let (o, j) = (k / inner, k % inner);
                        for l in 0..len {
                            gx[(o * len + l) * inner + j] += scale * gk;
                        }
                    }
                });
            }
            OpKind::SumAll => {
                acc(0, &mut |gx| gx.iter_mut().for_each(|d| *d += g[0]));
            }
            OpKind::Reshape { .. } => acc(0, &mut |gx| add_into(gx, g)),
            OpKind::IndexSelect { axis, indices } => {
                let shape = val(0).shape();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                acc(0, &mut |gx| {
                    for o in 0..outer {
                        for (s, &i) in indices.iter().enumerate() {
                            let src = &g[(o * indices.len() + s) * inner..(o * indices.len() + s + 1) * inner];
                            add_into(&mut gx[(o * len + i) * inner..(o * len + i + 1) * inner], src);
                        }
                    }
                });
            }
            OpKind::Conv2d { stride, padding } => {
                let geom = ConvGeom::new(val(0).shape(), val(1).shape(), val(2).shape(), *stride, *padding)
                    .expect("validated in forward");
                if wants(0) {
                    let d = geom.grad_input(val(1).data(), g);
                    acc(0, &mut |gx| add_into(gx, &d));
                }
                if wants(1) {
                    let d = geom.grad_weight(val(0).data(), g);
                    acc(1, &mut |gw| add_into(gw, &d));
                }
                let plane = geom.ho * geom.wo;
                acc(2, &mut |gb| {
                    for (b, ch) in gb.iter_mut().zip(g.chunks_exact(plane)) {
                        *b += ch.iter().sum::<f64>();
                    }
                });
            }
            OpKind::GlobalMaxPool2d => {
                let shape = val(0).shape();
                let plane = shape[1] * shape[2];
                let arg = &node.argmax;
                acc(0, &mut |gx| {
                    for (c, &gc) in g.iter().enumerate() {
                        gx[c * plane + arg[c]] += gc;
                    }
                });
            }
            OpKind::SqDistMatrix => {
                let (a, b) = (val(0), val(1));
                let (n, m, d) = (a.shape()[0], b.shape()[0], a.shape()[1]);
                let (ad, bd) = (a.data(), b.data());
                if wants(0) {
                    acc(0, &mut |ga| {
                        for i in 0..n {
                            for j in 0..m {
                                let gij = 2.0 * g[i * m + j];
                                for c in 0..d {
                                    ga[i * d + c] += gij * (ad[i * d + c] - bd[j * d + c]);
                                }
                            }
                        }
                    });
                }
                if wants(1) {
                    acc(1, &mut |gb| {
                        for i in 0..n {
                            for j in 0..m {
                                let gij = 2.0 * g[i * m + j];
                                for c in 0..d {
                                    gb[j * d + c] -= gij * (ad[i * d + c] - bd[j * d + c]);
                                }
                            }
                        }
                    });
                }
            }
            OpKind::Softmax { axis } => {
                let y = node.value.data();
                let shape = node.value.shape();
                let (outer, len, inner) = (
                    shape[..*axis].iter().product::<usize>(),
                    shape[*axis],
                    shape[axis + 1..].iter().product::<usize>(),
                );
                acc(0, &mut |gx| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + j;
                            let dot: f64 = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                gx[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                            }
                        }
                    }
                });
            }
            OpKind::Transpose => {
                let shape = node.value.shape();
                let t = transpose(g, shape[0], shape[1]);
                acc(0, &mut |gx| add_into(gx, &t));
            }
        }
    }

    /// Hash of every discrete decision taken during the forward pass: max
    /// routing, gather indices and activation sign patterns. Two passes with
    /// equal signatures evaluate the same smooth branch of the computation.
    pub fn routing_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Some(OpKind::ReduceMax { .. }) | Some(OpKind::GlobalMaxPool2d) => {
                    i.hash(&mut h);
                    node.argmax.hash(&mut h);
                }
                Some(OpKind::IndexSelect { indices, .. }) => {
                    i.hash(&mut h);
                    indices.hash(&mut h);
                }
                Some(OpKind::Relu) | Some(OpKind::LeakyRelu { .. }) => {
                    i.hash(&mut h);
                    for v in self.nodes[node.inputs[0].0].value.data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

macro_rules! unary {
    ($($name:ident => $kind:expr),* $(,)?) => {
        impl Tape {
            $(
                pub fn $name(&mut self, x: Var) -> Result<Var> {
                    self.apply($kind, &[x])
                }
            )*
        }
    };
}

macro_rules! binary {
    ($($name:ident => $kind:expr),* $(,)?) => {
        impl Tape {
            $(
                pub fn $name(&mut self, a: Var, b: Var) -> Result<Var> {
                    self.apply($kind, &[a, b])
                }
            )*
        }
    };
}

unary! {
    relu => OpKind::Relu,
    sqrt => OpKind::Sqrt,
    sum => OpKind::SumAll,
    global_max_pool_2d => OpKind::GlobalMaxPool2d,
    transpose => OpKind::Transpose,
}

binary! {
    add => OpKind::Add,
    sub => OpKind::Sub,
    mul => OpKind::Mul,
    div => OpKind::Div,
    matmul => OpKind::MatMul,
    sq_dist_matrix => OpKind::SqDistMatrix,
}

impl Tape {
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(OpKind::LeakyRelu { slope }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::Scale { factor }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(OpKind::Concat { axis }, xs)
    }

    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::ReduceMax { axis }, &[x])
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::ReduceMean { axis }, &[x])
    }

    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::ReduceSum { axis }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::Reshape { shape }, &[x])
    }

    pub fn index_select(&mut self, x: Var, axis: usize, indices: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::IndexSelect { axis, indices }, &[x])
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        self.apply(OpKind::Conv2d { stride, padding }, &[x, weight, bias])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::Softmax { axis }, &[x])
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every linear index of `out_shape`, the linear index into a tensor of
/// `in_shape` broadcast against it.
fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let total: usize = out_shape.iter().product();
    if in_shape == out_shape {
        return (0..total).collect();
    }
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let mut strides = vec![0; rank];
    let mut s = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            strides[i + offset] = s;
        }
        s *= in_shape[i];
    }
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0; rank];
    let mut off = 0;
    for _ in 0..total {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

fn split_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product()))
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0].shape();
    if axis >= first.len() {
        return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
    }
    for p in &parts[1..] {
        let s = p.shape();
        let compatible = s.len() == first.len() && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", format!("{first:?} vs {s:?} along axis {axis}")));
        }
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut shape = first.to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    Tensor::new(shape, out)
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::shape("matmul", format!("{a:?} x {b:?}")));
    }
    Ok((a[0], a[1], b[1]))
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(input: &[usize], weight: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let bad = |d: String| Error::shape("conv2d", d);
        if input.len() != 3 || weight.len() != 4 {
            return Err(bad(format!("input {input:?}, weight {weight:?}")));
        }
        if weight[1] != input[0] || bias != [weight[0]] {
            return Err(bad(format!("input {input:?}, weight {weight:?}, bias {bias:?}")));
        }
        if stride == 0 {
            return Err(bad("stride must be positive".into()));
        }
        let (h, w, kh, kw) = (input[1], input[2], weight[2], weight[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(bad(format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        Ok(ConvGeom {
            ci: input[0],
            h,
            w,
            co: weight[0],
            kh,
            kw,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        })
    }

    /// Visits every (output position, input position) pair of one kernel tap.
    #[inline]
    fn for_each_tap(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        for oy in 0..self.ho {
            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
            if iy < 0 || iy >= self.h as isize {
                continue;
            }
            for ox in 0..self.wo {
                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                if ix < 0 || ix >= self.w as isize {
                    continue;
                }
                f(oy * self.wo + ox, iy as usize * self.w + ix as usize);
            }
        }
    }

    fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (plane_in, plane_out) = (self.h * self.w, self.ho * self.wo);
        let mut out = vec![0.0; self.co * plane_out];
        for co in 0..self.co {
            let dst = &mut out[co * plane_out..(co + 1) * plane_out];
            dst.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..self.ci {
                let src = &x[ci * plane_in..(ci + 1) * plane_in];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wv = weight[((co * self.ci + ci) * self.kh + ky) * self.kw + kx];
                        self.for_each_tap(ky, kx, |o, i| dst[o] += wv * src[i]);
                    }
                }
            }
        }
        out
    }

    fn grad_input(&self, weight: &[f64], g: &[f64]) -> Vec<f64> {
        let (plane_in, plane_out) = (self.h * self.w, self.ho * self.wo);
        let mut out = vec![0.0; self.ci * plane_in];
        for co in 0..self.co {
            let gc = &g[co * plane_out..(co + 1) * plane_out];
            for ci in 0..self.ci {
                let dst = &mut out[ci * plane_in..(ci + 1) * plane_in];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wv = weight[((co * self.ci + ci) * self.kh + ky) * self.kw + kx];
                        self.for_each_tap(ky, kx, |o, i| dst[i] += wv * gc[o]);
                    }
                }
            }
        }
        out
    }

    fn grad_weight(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let (plane_in, plane_out) = (self.h * self.w, self.ho * self.wo);
        let mut out = vec![0.0; self.co * self.ci * self.kh * self.kw];
        for co in 0..self.co {
            let gc = &g[co * plane_out..(co + 1) * plane_out];
            for ci in 0..self.ci {
                let src = &x[ci * plane_in..(ci + 1) * plane_in];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let mut total = 0.0;
                        self.for_each_tap(ky, kx, |o, i| total += src[i] * gc[o]);
                        out[((co * self.ci + ci) * self.kh + ky) * self.kw + kx] += total;
                    }
                }
            }
        }
        out
    }
}
