//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] owns an append-only list of nodes. Construction is eager:
//! every builder validates shapes, computes the node's value immediately,
//! and returns a [`NodeId`] into the tape. Nodes can only refer to earlier
//! nodes, so tape order is already a topological order and
//! [`Graph::backward`] is a single reverse sweep with

//! deterministic accumulation order (same graph, same bits).
//!
//! Binary arithmetic broadcasts only between a one-element tensor and a
//! tensor; every other shape combination must match exactly. Convolutions
//! are channels-last: images are `(H, W, C)`, videos `(T, H, W, C)`, 2-D
//! kernels `(KH, KW, Cin, Cout)`, 3-D kernels `(KT, KH, KW, Cin, Cout)`.

use crate::tensor::{elem_count, Tensor};
use crate::{Error, Result};

/// Identifier of a node in a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Zero-padding behavior for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatially matches the input; requires odd kernel extents.
    Same,
    /// No padding; output shrinks by `k - 1` per axis.
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    // The added constant is folded into the value eagerly and has unit
    // derivative, so the op only records the operand.
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    BiasAdd(NodeId, NodeId),
    Conv2d { input: NodeId, kernel: NodeId, padding: Padding },
    Conv3d { input: NodeId, kernel: NodeId, padding: Padding },
    AvgPool2d { input: NodeId, window: usize, stride: usize },
    GlobalAvgPool(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    ReduceSum(NodeId),
    ReduceMean(NodeId),
    Reshape(NodeId),
    Slice { input: NodeId, start: Vec<usize> },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Clamp { input: NodeId, lo: f64, hi: f64 },
    CrossEntropy { probs: NodeId, class: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
}

/// Eagerly evaluated computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    /// Number of nodes on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss with respect to this node, if
    /// `backward` has run.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input node holding `value`.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn binary_value(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() == bv.shape() {
            av.zip_map(bv, op, f)
        } else if av.is_scalar() {
            let s = av.data()[0];
            Ok(bv.map(|v| f(s, v)))
        } else if bv.is_scalar() {
            let s = bv.data()[0];
            Ok(av.map(|v| f(v, s)))
        } else {
            Err(Error::ShapeMismatch { op, lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() })
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary_value("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary_value("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary_value("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Elementwise division; the divisor must be nonzero everywhere.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[b.0].value.data().contains(&0.0) {
            return Err(Error::Numeric("div: divisor contains zero".into()));
        }
        let v = self.binary_value("div", a, b, |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    /// Add a compile-time constant.
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    /// `(m, k) x (k, n) -> (m, n)`, or `(m, k) x (k,) -> (m,)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        if av.rank() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (n, vec_rhs) = match bv.rank() {
            2 if bv.shape()[0] == k => (bv.shape()[1], false),
            1 if bv.shape()[0] == k => (1, true),
            _ => return Err(mismatch()),
        };
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let shape: &[usize] = if vec_rhs { &[m] } else { &[m, n] };
        let v = Tensor::from_vec(shape, out)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// Add a vector along the last axis of `a`.
    pub fn bias_add(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let c = *av.shape().last().unwrap_or(&0);
        if bv.rank() != 1 || bv.shape()[0] != c || av.rank() == 0 {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let bd = bv.data();
        let mut out = av.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o += bd[i % c];
        }
        let v = Tensor::from_vec(av.shape(), out)?;
        Ok(self.push(Op::BiasAdd(a, bias), v))
    }

    /// 2-D convolution of an `(H, W, Cin)` image with a
    /// `(KH, KW, Cin, Cout)` kernel.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, padding: Padding) -> Result<NodeId> {
        let (iv, kv) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            lhs: iv.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        };
        if iv.rank() != 3 || kv.rank() != 4 || iv.shape()[2] != kv.shape()[2] {
            return Err(mismatch());
        }
        let (h, w, cin) = (iv.shape()[0], iv.shape()[1], iv.shape()[2]);
        let (kh, kw, cout) = (kv.shape()[0], kv.shape()[1], kv.shape()[3]);
        let (ph, pw, oh, ow) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "conv2d same padding needs odd kernel extents, got {}x{}",
                        kh, kw
                    )));
                }
                ((kh - 1) / 2, (kw - 1) / 2, h, w)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(mismatch());
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        let mut out = vec![0.0; oh * ow * cout];
        let (id, kd) = (iv.data(), kv.data());
        for o_r in 0..oh {
            for o_c in 0..ow {
                let obase = (o_r * ow + o_c) * cout;
                for k_r in 0..kh {
                    let i_r = (o_r + k_r).wrapping_sub(ph);
                    if i_r >= h {
                        continue;
                    }
                    for k_c in 0..kw {
                        let i_c = (o_c + k_c).wrapping_sub(pw);
                        if i_c >= w {
                            continue;
                        }
                        let ibase = (i_r * w + i_c) * cin;
                        let kbase = (k_r * kw + k_c) * cin * cout;
                        for ic in 0..cin {
                            let a = id[ibase + ic];
                            let krow = &kd[kbase + ic * cout..kbase + (ic + 1) * cout];
                            let orow = &mut out[obase..obase + cout];
                            for (o, &kk) in orow.iter_mut().zip(krow) {
                                *o += a * kk;
                            }
                        }
                    }
                }
            }
        }
        let v = Tensor::from_vec(&[oh, ow, cout], out)?;
        Ok(self.push(Op::Conv2d { input, kernel, padding }, v))
    }

    /// 3-D convolution of a `(T, H, W, Cin)` video with a
    /// `(KT, KH, KW, Cin, Cout)` kernel.
    pub fn conv3d(&mut self, input: NodeId, kernel: NodeId, padding: Padding) -> Result<NodeId> {
        let (iv, kv) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
        let mismatch = || Error::ShapeMismatch {
            op: "conv3d",
            lhs: iv.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        };
        if iv.rank() != 4 || kv.rank() != 5 || iv.shape()[3] != kv.shape()[3] {
            return Err(mismatch());
        }
        let (t, h, w, cin) = (iv.shape()[0], iv.shape()[1], iv.shape()[2], iv.shape()[3]);
        let (kt, kh, kw, cout) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[4]);
        let (pt, ph, pw, ot, oh, ow) = match padding {
            Padding::Same => {
                if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "conv3d same padding needs odd kernel extents, got {}x{}x{}",
                        kt, kh, kw
                    )));
                }
                ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2, t, h, w)
            }
            Padding::Valid => {
                if t < kt || h < kh || w < kw {
                    return Err(mismatch());
                }
                (0, 0, 0, t - kt + 1, h - kh + 1, w - kw + 1)
            }
        };
        let mut out = vec![0.0; ot * oh * ow * cout];
        let (id, kd) = (iv.data(), kv.data());
        for o_t in 0..ot {
            for o_r in 0..oh {
                for o_c in 0..ow {
                    let obase = ((o_t * oh + o_r) * ow + o_c) * cout;
                    for k_t in 0..kt {
                        let i_t = (o_t + k_t).wrapping_sub(pt);
                        if i_t >= t {
                            continue;
                        }
                        for k_r in 0..kh {
                            let i_r = (o_r + k_r).wrapping_sub(ph);
                            if i_r >= h {
                                continue;
                            }
                            for k_c in 0..kw {
                                let i_c = (o_c + k_c).wrapping_sub(pw);
                                if i_c >= w {
                                    continue;
                                }
                                let ibase = ((i_t * h + i_r) * w + i_c) * cin;
                                let kbase = (((k_t * kh + k_r) * kw + k_c) * cin) * cout;
                                for ic in 0..cin {
                                    let a = id[ibase + ic];
                                    let krow = &kd[kbase + ic * cout..kbase + (ic + 1) * cout];
                                    let orow = &mut out[obase..obase + cout];
                                    for (o, &kk) in orow.iter_mut().zip(krow) {
                                        *o += a * kk;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let v = Tensor::from_vec(&[ot, oh, ow, cout], out)?;
        Ok(self.push(Op::Conv3d { input, kernel, padding }, v))
    }

    /// Average pooling over an `(H, W, C)` image; window and stride must
    /// tile the image exactly.
    pub fn avg_pool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let iv = &self.nodes[input.0].value;
        if iv.rank() != 3 || window == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "avg_pool2d needs an (H, W, C) input and positive window/stride, \
                 got shape {:?}, window {window}, stride {stride}",
                iv.shape()
            )));
        }
        let (h, w, c) = (iv.shape()[0], iv.shape()[1], iv.shape()[2]);
        if h < window || w < window || !(h - window).is_multiple_of(stride) || !(w - window).is_multiple_of(stride) {
            return Err(Error::InvalidArgument(format!(
                "avg_pool2d window {window} stride {stride} does not tile {h}x{w}"
            )));
        }
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let inv = 1.0 / (window * window) as f64;
        let id = iv.data();
        let mut out = vec![0.0; oh * ow * c];
        for o_r in 0..oh {
            for o_c in 0..ow {
                let obase = (o_r * ow + o_c) * c;
                for d_r in 0..window {
                    for d_c in 0..window {
                        let ibase = ((o_r * stride + d_r) * w + (o_c * stride + d_c)) * c;
                        for ch in 0..c {
                            out[obase + ch] += id[ibase + ch] * inv;
                        }
                    }
                }
            }
        }
        let v = Tensor::from_vec(&[oh, ow, c], out)?;
        Ok(self.push(Op::AvgPool2d { input, window, stride }, v))
    }

    /// Mean over all leading axes, keeping the channel (last) axis:
    /// `(..., C) -> (C,)`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let iv = &self.nodes[input.0].value;
        if iv.rank() < 2 {
            return Err(Error::InvalidArgument(format!(
                "global_avg_pool needs rank >= 2, got shape {:?}",
                iv.shape()
            )));
        }
        let c = *iv.shape().last().unwrap();
        let lead = iv.len() / c;
        let inv = 1.0 / lead as f64;
        let mut out = vec![0.0; c];
        for (i, &v) in iv.data().iter().enumerate() {
            out[i % c] += v * inv;
        }
        let v = Tensor::from_vec(&[c], out)?;
        Ok(self.push(Op::GlobalAvgPool(input), v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(stable_sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    /// Numerically stable softmax over a rank-1 tensor.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.rank() != 1 || av.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "softmax needs a non-empty rank-1 tensor, got shape {:?}",
                av.shape()
            )));
        }
        let m = av.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = av.data().iter().map(|&v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let v = Tensor::from_vec(av.shape(), exps.into_iter().map(|e| e / total).collect())?;
        Ok(self.push(Op::Softmax(a), v))
    }

    /// Sum of all elements, as a scalar.
    pub fn reduce_sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::ReduceSum(a), Tensor::scalar(s))
    }

    /// Mean of all elements, as a scalar.
    pub fn reduce_mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::ReduceMean(a), Tensor::scalar(s))
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if elem_count(shape) != av.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: av.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let v = Tensor::from_vec(shape, av.data().to_vec())?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Rectangular sub-tensor `[start[d], end[d])` along every axis.
    pub fn slice(&mut self, a: NodeId, start: &[usize], end: &[usize]) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let rank = av.rank();
        if start.len() != rank || end.len() != rank {
            return Err(Error::InvalidArgument(format!(
                "slice bounds rank {}..{} does not match tensor rank {rank}",
                start.len(),
                end.len()
            )));
        }
        for d in 0..rank {
            if start[d] >= end[d] || end[d] > av.shape()[d] {
                return Err(Error::InvalidArgument(format!(
                    "slice range {}..{} invalid for axis {d} of extent {}",
                    start[d],
                    end[d],
                    av.shape()[d]
                )));
            }
        }
        let out_shape: Vec<usize> = (0..rank).map(|d| end[d] - start[d]).collect();
        let in_strides = strides(av.shape());
        let mut out = Vec::with_capacity(elem_count(&out_shape));
        let mut idx = vec![0usize; rank];
        let id = av.data();
        loop {
            let off: usize = (0..rank).map(|d| (start[d] + idx[d]) * in_strides[d]).sum();
            out.push(id[off]);
            let mut d = rank;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
            if idx.iter().all(|&v| v == 0) {
                break;
            }
        }
        let v = Tensor::from_vec(&out_shape, out)?;
        Ok(self.push(Op::Slice { input: a, start: start.to_vec() }, v))
    }

    /// Concatenate tensors along `axis`; all other extents must match.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.nodes[inputs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0;
        for &id in inputs {
            let sh = self.nodes[id.0].value.shape();
            let compatible = sh.len() == first.len()
                && sh.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: sh.to_vec(),
                });
            }
            axis_total += sh[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let tail: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(elem_count(&out_shape));
        for o in 0..outer {
            for &id in inputs {
                let v = &self.nodes[id.0].value;
                let row = v.shape()[axis] * tail;
                out.extend_from_slice(&v.data()[o * row..(o + 1) * row]);
            }
        }
        let v = Tensor::from_vec(&out_shape, out)?;
        Ok(self.push(Op::Concat { inputs: inputs.to_vec(), axis }, v))
    }

    /// Clamp into `[lo, hi]`; the gradient passes through exactly where
    /// `lo <= x <= hi` and is zero outside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("clamp bounds {lo}..{hi} invalid")));
        }
        let v = self.nodes[a.0].value.map(|x| x.clamp(lo, hi));
        Ok(self.push(Op::Clamp { input: a, lo, hi }, v))
    }

    /// Negative log-likelihood `-ln p[class]` of a probability vector.
    pub fn cross_entropy(&mut self, probs: NodeId, class: usize) -> Result<NodeId> {
        let pv = &self.nodes[probs.0].value;
        if pv.rank() != 1 || class >= pv.len() {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: class {class} out of range for probability shape {:?}",
                pv.shape()
            )));
        }
        let p = pv.data()[class];
        if p <= 0.0 {
            return Err(Error::Numeric(format!(
                "cross_entropy: probability {p:e} for class {class} is not positive"
            )));
        }
        Ok(self.push(Op::CrossEntropy { probs, class }, Tensor::scalar(-p.ln())))
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate in tape
    /// order, so repeated runs are bit-identical.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let l = loss.0;
        if !self.nodes[l].value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[l].value.shape()
            )));
        }
        let mut grads: Vec<Tensor> =
            self.nodes.iter().map(|n| Tensor::zeros(n.value.shape())).collect();
        grads[l] = Tensor::filled(self.nodes[l].value.shape(), 1.0);

        for idx in (0..=l).rev() {
            if grads[idx].data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let up = grads[idx].clone();
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate_linear(&mut grads, a, &up, 1.0);
                    self.accumulate_linear(&mut grads, b, &up, 1.0);
                }
                Op::Sub(a, b) => {
                    self.accumulate_linear(&mut grads, a, &up, 1.0);
                    self.accumulate_linear(&mut grads, b, &up, -1.0);
                }
                Op::Mul(a, b) => {
                    let (da, db) = self.mul_grads(a, b, &up);
                    add_into(&mut grads[a.0], &da);
                    add_into(&mut grads[b.0], &db);
                }
                Op::Div(a, b) => {
                    let (da, db) = self.div_grads(a, b, &up);
                    add_into(&mut grads[a.0], &da);
                    add_into(&mut grads[b.0], &db);
                }
                Op::Neg(a) => {
                    for (g, u) in grads[a.0].data_mut().iter_mut().zip(up.data()) {
                        *g -= u;
                    }
                }
                Op::Scale(a, c) => {
                    for (g, u) in grads[a.0].data_mut().iter_mut().zip(up.data()) {
                        *g += u * c;
                    }
                }
                Op::AddScalar(a) => {
                    add_into(&mut grads[a.0], &up);
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = if bv.rank() == 2 { bv.shape()[1] } else { 1 };
                    let (ad, bd, ud) = (av.data(), bv.data(), up.data());
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                let u = ud[i * n + j];
                                acc += u * bd[p * n + j];
                                db[p * n + j] += ad[i * k + p] * u;
                            }
                            da[i * k + p] += acc;
                        }
                    }
                    add_slice(&mut grads[a.0], &da);
                    add_slice(&mut grads[b.0], &db);
                }
                Op::BiasAdd(a, bias) => {
                    let c = self.nodes[bias.0].value.len();
                    for (i, &u) in up.data().iter().enumerate() {
                        grads[bias.0].data_mut()[i % c] += u;
                    }
                    add_into(&mut grads[a.0], &up);
                }
                Op::Conv2d { input, kernel, padding } => {
                    self.conv2d_backward(input, kernel, padding, &up, &mut grads);
                }
                Op::Conv3d { input, kernel, padding } => {
                    self.conv3d_backward(input, kernel, padding, &up, &mut grads);
                }
                Op::AvgPool2d { input, window, stride } => {
                    let iv = &self.nodes[input.0].value;
                    let (w, c) = (iv.shape()[1], iv.shape()[2]);
                    let (oh, ow) = (up.shape()[0], up.shape()[1]);
                    let inv = 1.0 / (window * window) as f64;
                    let gi = grads[input.0].data_mut();
                    let ud = up.data();
                    for o_r in 0..oh {
                        for o_c in 0..ow {
                            let obase = (o_r * ow + o_c) * c;
                            for d_r in 0..window {
                                for d_c in 0..window {
                                    let ibase =
                                        ((o_r * stride + d_r) * w + (o_c * stride + d_c)) * c;
                                    for ch in 0..c {
                                        gi[ibase + ch] += ud[obase + ch] * inv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::GlobalAvgPool(a) => {
                    let c = up.len();
                    let lead = self.nodes[a.0].value.len() / c;
                    let inv = 1.0 / lead as f64;
                    let ud = up.data();
                    for (i, g) in grads[a.0].data_mut().iter_mut().enumerate() {
                        *g += ud[i % c] * inv;
                    }
                }
                Op::Relu(a) => {
                    let av = self.nodes[a.0].value.data();
                    for (i, g) in grads[a.0].data_mut().iter_mut().enumerate() {
                        if av[i] > 0.0 {
                            *g += up.data()[i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let yv = self.nodes[idx].value.data();
                    for (i, g) in grads[a.0].data_mut().iter_mut().enumerate() {
                        let y = yv[i];
                        *g += up.data()[i] * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let yv = self.nodes[idx].value.data();
                    for (i, g) in grads[a.0].data_mut().iter_mut().enumerate() {
                        let y = yv[i];
                        *g += up.data()[i] * (1.0 - y * y);
                    }
                }
                Op::Softmax(a) => {
                    let yv = self.nodes[idx].value.data();
                    let dot: f64 = up.data().iter().zip(yv).map(|(u, y)| u * y).sum();
                    for (i, g) in grads[a.0].data_mut().iter_mut().enumerate() {
                        *g += yv[i] * (up.data()[i] - dot);
                    }
                }
                Op::ReduceSum(a) => {
                    let u = up.data()[0];
                    for g in grads[a.0].data_mut() {
                        *g += u;
                    }
                }
                Op::ReduceMean(a) => {
                    let u = up.data()[0] / self.nodes[a.0].value.len() as f64;
                    for g in grads[a.0].data_mut() {
                        *g += u;
                    }
                }
                Op::Reshape(a) => {
                    add_slice(&mut grads[a.0], up.data());
                }
                Op::Slice { input, start } => {
                    let in_strides = strides(self.nodes[input.0].value.shape());
                    let rank = start.len();
                    let out_shape = up.shape().to_vec();
                    let gi = grads[input.0].data_mut();
                    let mut idx_nd = vec![0usize; rank];
                    for &u in up.data() {
                        let off: usize =
                            (0..rank).map(|d| (start[d] + idx_nd[d]) * in_strides[d]).sum();
                        gi[off] += u;
                        let mut d = rank;
                        loop {
                            if d == 0 {
                                break;
                            }
                            d -= 1;
                            idx_nd[d] += 1;
                            if idx_nd[d] < out_shape[d] {
                                break;
                            }
                            idx_nd[d] = 0;
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let first = self.nodes[inputs[0].0].value.shape();
                    let outer: usize = first[..axis].iter().product();
                    let tail: usize = first[axis + 1..].iter().product();
                    let ud = up.data();
                    let mut cursor = 0;
                    for o in 0..outer {
                        let _ = o;
                        for &id in &inputs {
                            let row = self.nodes[id.0].value.shape()[axis] * tail;
                            let gi = grads[id.0].data_mut();
                            let dst_base = gi.len() / outer * o;
                            for j in 0..row {
                                gi[dst_base + j] += ud[cursor + j];
                            }
                            cursor += row;
                        }
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    let av = self.nodes[input.0].value.data();
                    let gi = grads[input.0].data_mut();
                    for (i, &u) in up.data().iter().enumerate() {
                        if av[i] >= lo && av[i] <= hi {
                            gi[i] += u;
                        }
                    }
                }
                Op::CrossEntropy { probs, class } => {
                    let p = self.nodes[probs.0].value.data()[class];
                    grads[probs.0].data_mut()[class] -= up.data()[0] / p;
                }
            }
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = Some(g);
        }
        Ok(())
    }

    /// Accumulate `sign * up` into an input of a linear binary op, summing
    /// when the input is a broadcast scalar.
    fn accumulate_linear(&self, grads: &mut [Tensor], a: NodeId, up: &Tensor, sign: f64) {
        let target = &mut grads[a.0];
        if target.len() == 1 && up.len() > 1 {
            let total: f64 = up.data().iter().sum();
            target.data_mut()[0] += sign * total;
        } else {
            for (g, u) in target.data_mut().iter_mut().zip(up.data()) {
                *g += sign * u;
            }
        }
    }

    fn mul_grads(&self, a: NodeId, b: NodeId, up: &Tensor) -> (Tensor, Tensor) {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape() == bv.shape() {
            let da = up.zip_map(bv, "mul-grad", |u, y| u * y).expect("same shape");
            let db = up.zip_map(av, "mul-grad", |u, x| u * x).expect("same shape");
            (da, db)
        } else if av.is_scalar() {
            let total: f64 = up.data().iter().zip(bv.data()).map(|(u, y)| u * y).sum();
            let da = Tensor::filled(av.shape(), total);
            let db = up.scale(av.data()[0]);
            (da, db)
        } else {
            let total: f64 = up.data().iter().zip(av.data()).map(|(u, x)| u * x).sum();
            let db = Tensor::filled(bv.shape(), total);
            let da = up.scale(bv.data()[0]);
            (da, db)
        }
    }

    fn div_grads(&self, a: NodeId, b: NodeId, up: &Tensor) -> (Tensor, Tensor) {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape() == bv.shape() {
            let da = up.zip_map(bv, "div-grad", |u, y| u / y).expect("same shape");
            let mut db = Tensor::zeros(bv.shape());
            for (i, g) in db.data_mut().iter_mut().enumerate() {
                let y = bv.data()[i];
                *g = -up.data()[i] * av.data()[i] / (y * y);
            }
            (da, db)
        } else if av.is_scalar() {
            // out_i = a / b_i
            let x = av.data()[0];
            let total: f64 = up.data().iter().zip(bv.data()).map(|(u, y)| u / y).sum();
            let da = Tensor::filled(av.shape(), total);
            let mut db = Tensor::zeros(bv.shape());
            for (i, g) in db.data_mut().iter_mut().enumerate() {
                let y = bv.data()[i];
                *g = -up.data()[i] * x / (y * y);
            }
            (da, db)
        } else {
            // out_i = a_i / b
            let y = bv.data()[0];
            let da = up.scale(1.0 / y);
            let total: f64 = up.data().iter().zip(av.data()).map(|(u, x)| -u * x / (y * y)).sum();
            let db = Tensor::filled(bv.shape(), total);
            (da, db)
        }
    }

    fn conv2d_backward(
        &self,
        input: NodeId,
        kernel: NodeId,
        padding: Padding,
        up: &Tensor,
        grads: &mut [Tensor],
    ) {
        let iv = &self.nodes[input.0].value;
        let kv = &self.nodes[kernel.0].value;
        let (h, w, cin) = (iv.shape()[0], iv.shape()[1], iv.shape()[2]);
        let (kh, kw, cout) = (kv.shape()[0], kv.shape()[1], kv.shape()[3]);
        let (oh, ow) = (up.shape()[0], up.shape()[1]);
        let (ph, pw) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        let (id, kd, ud) = (iv.data(), kv.data(), up.data());
        // Split the two gradient buffers out of `grads` one at a time: the
        // input and kernel of a convolution are always distinct nodes.
        let mut gi = std::mem::replace(&mut grads[input.0], Tensor::zeros(&[0]));
        let gk = grads[kernel.0].data_mut();
        {
            let gi = gi.data_mut();
            for o_r in 0..oh {
                for o_c in 0..ow {
                    let obase = (o_r * ow + o_c) * cout;
                    let urow = &ud[obase..obase + cout];
                    for k_r in 0..kh {
                        let i_r = (o_r + k_r).wrapping_sub(ph);
                        if i_r >= h {
                            continue;
                        }
                        for k_c in 0..kw {
                            let i_c = (o_c + k_c).wrapping_sub(pw);
                            if i_c >= w {
                                continue;
                            }
                            let ibase = (i_r * w + i_c) * cin;
                            let kbase = (k_r * kw + k_c) * cin * cout;
                            for ic in 0..cin {
                                let a = id[ibase + ic];
                                let krow = &kd[kbase + ic * cout..kbase + (ic + 1) * cout];
                                let gkrow = &mut gk[kbase + ic * cout..kbase + (ic + 1) * cout];
                                let mut acc = 0.0;
                                for j in 0..cout {
                                    acc += urow[j] * krow[j];
                                    gkrow[j] += a * urow[j];
                                }
                                gi[ibase + ic] += acc;
                            }
                        }
                    }
                }
            }
        }
        grads[input.0] = gi;
    }

    fn conv3d_backward(
        &self,
        input: NodeId,
        kernel: NodeId,
        padding: Padding,
        up: &Tensor,
        grads: &mut [Tensor],
    ) {
        let iv = &self.nodes[input.0].value;
        let kv = &self.nodes[kernel.0].value;
        let (t, h, w, cin) = (iv.shape()[0], iv.shape()[1], iv.shape()[2], iv.shape()[3]);
        let (kt, kh, kw, cout) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[4]);
        let (ot, oh, ow) = (up.shape()[0], up.shape()[1], up.shape()[2]);
        let (pt, ph, pw) = match padding {
            Padding::Same => ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0, 0),
        };
        let (id, kd, ud) = (iv.data(), kv.data(), up.data());
        let mut gi = std::mem::replace(&mut grads[input.0], Tensor::zeros(&[0]));
        let gk = grads[kernel.0].data_mut();
        {
            let gi = gi.data_mut();
            for o_t in 0..ot {
                for o_r in 0..oh {
                    for o_c in 0..ow {
                        let obase = ((o_t * oh + o_r) * ow + o_c) * cout;
                        let urow = &ud[obase..obase + cout];
                        for k_t in 0..kt {
                            let i_t = (o_t + k_t).wrapping_sub(pt);
                            if i_t >= t {
                                continue;
                            }
                            for k_r in 0..kh {
                                let i_r = (o_r + k_r).wrapping_sub(ph);
                                if i_r >= h {
                                    continue;
                                }
                                for k_c in 0..kw {
                                    let i_c = (o_c + k_c).wrapping_sub(pw);
                                    if i_c >= w {
                                        continue;
                                    }
                                    let ibase = ((i_t * h + i_r) * w + i_c) * cin;
                                    let kbase = (((k_t * kh + k_r) * kw + k_c) * cin) * cout;
                                    for ic in 0..cin {
                                        let a = id[ibase + ic];
                                        let ko = kbase + ic * cout;
                                        let mut acc = 0.0;
                                        for j in 0..cout {
                                            acc += urow[j] * kd[ko + j];
                                            gk[ko + j] += a * urow[j];
                                        }
                                        gi[ibase + ic] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        grads[input.0] = gi;
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn add_slice(dst: &mut Tensor, src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}

/// Compare the reverse-mode gradient of a scalar-valued graph function
/// against central finite differences.
///
/// `f` must build a scalar output from the single provided leaf. Returns
/// the maximum over coordinates of `|analytic - fd| / max(|fd|, 1e-8)`,
/// a relative error with a small absolute floor so exactly-zero
/// finite-difference estimates do not divide by zero. Callers should pick
/// probe points whose true gradient coordinates are not vanishingly small,
/// otherwise the floor makes the ratio an absolute error scaled by 1e8.
/// Non-finite function values or gradients are rejected.
pub fn grad_check<F>(f: &F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("grad_check step {eps} must be positive")));
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let id = g.leaf(t.clone());
        let out = f(&mut g, id)?;
        let v = g.value(out).scalar_value()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("grad_check: non-finite value {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let id = g.leaf(x.clone());
    let out = f(&mut g, id)?;
    g.value(out).scalar_value()?;
    g.backward(out)?;
    let analytic = g.grad(id).expect("backward run").clone();
    if !analytic.all_finite() {
        return Err(Error::Numeric("grad_check: non-finite analytic gradient".into()));
    }

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let ad = analytic.data()[i];
        let err = (ad - fd).abs() / fd.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
