use super::kernels::{self, ConvGeometry};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        geometry: ConvGeometry,
        cols: Vec<T>,
    },
    ChannelBias {
        input: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Clamp {
        input: NodeId,
        lo: Vec<T>,
        hi: Vec<T>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, T),
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Reshape(NodeId),
    Sum(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Vec<T>,
        label: usize,
    },
    /// Output carries no gradient (sign).
    Detached,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of a differentiable computation.
///
/// Operands always precede their results, so the record order is a
/// topological order and [`backward`](Graph::backward) is a single reverse
/// sweep. A graph belongs to one thread; run independent samples on
/// independent graphs.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are collected for it iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].value.grad()
    }

    /// Moves a value (with its gradient) out of the graph, leaving an empty
    /// tensor in its place.
    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::zeros([0]))
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].value.requires_grad()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, operands: &[NodeId]) -> NodeId {
        let requires_grad = !matches!(op, Op::Detached) && operands.iter().any(|&id| self.requires_grad(id));
        debug_assert!(
            operands.iter().any(|&id| !self.value(id).is_finite()) || value.iter().all(|v| v.is_finite()),
            "non-finite output from finite operands"
        );
        let value = Tensor {
            shape,
            data: value,
            requires_grad,
            grad: None,
        };
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(out, vec![m, n], Op::MatMul { a, b }, &[a, b]))
    }

    /// Cross-correlation of a `[C_in×H×W]` input with `[C_out×C_in×kh×kw]`
    /// kernels, zero padding on every side.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let (si, sk) = (self.value(input).shape(), self.value(kernels).shape());
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] {
            return Err(Error::Dimension {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (c, h, w) = (si[0], si[1], si[2]);
        let (out_c, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if kh == 0 || kw == 0 || kh > ph || kw > pw {
            return Err(Error::Config(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {ph}x{pw}"
            )));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::Config(format!(
                "conv2d output size is not integral: padded {ph}x{pw}, kernel {kh}x{kw}, stride {stride}"
            )));
        }
        let geometry = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        };
        let cols = kernels::im2col(self.value(input).data(), &geometry);
        let out = kernels::matmul(
            self.value(kernels).data(),
            &cols,
            out_c,
            geometry.patch_len(),
            geometry.positions(),
        );
        let shape = vec![out_c, geometry.out_h, geometry.out_w];
        let op = Op::Conv2d {
            input,
            kernels,
            geometry,
            cols,
        };
        Ok(self.push(out, shape, op, &[input, kernels]))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[C×...]` input.
    pub fn channel_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (si, sb) = (self.value(input).shape(), self.value(bias).shape());
        if si.is_empty() || sb.len() != 1 || si[0] != sb[0] {
            return Err(Error::Dimension {
                op: "channel_bias",
                lhs: si.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let shape = si.to_vec();
        let plane = self.value(input).len() / shape[0].max(1);
        let mut out = self.value(input).data().to_vec();
        for (chunk, &b) in out.chunks_exact_mut(plane.max(1)).zip(self.value(bias).data()) {
            chunk.iter_mut().for_each(|v| *v = *v + b);
        }
        Ok(self.push(out, shape, Op::ChannelBias { input, bias }, &[input, bias]))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let t = self.value(input).relu();
        let shape = t.shape.clone();
        self.push(t.data, shape, Op::Relu(input), &[input])
    }

    /// Elementwise sign; the result is detached from the graph.
    pub fn sign(&mut self, input: NodeId) -> NodeId {
        let t = self.value(input).sign();
        let shape = t.shape.clone();
        self.push(t.data, shape, Op::Detached, &[input])
    }

    pub fn clamp(&mut self, input: NodeId, lo: T, hi: T) -> Result<NodeId> {
        let shape = self.value(input).shape().to_vec();
        let lo = Tensor::full(shape.clone(), lo);
        let hi = Tensor::full(shape, hi);
        self.clamp_between(input, &lo, &hi)
    }

    /// Elementwise clamp into `[lo[i], hi[i]]`. Gradient passes where the
    /// input lies inside the closed interval.
    pub fn clamp_between(&mut self, input: NodeId, lo: &Tensor<T>, hi: &Tensor<T>) -> Result<NodeId> {
        let t = self.value(input).clamp_between(lo, hi)?;
        let shape = t.shape.clone();
        let op = Op::Clamp {
            input,
            lo: lo.data().to_vec(),
            hi: hi.data().to_vec(),
        };
        Ok(self.push(t.data, shape, op, &[input]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.value(a).add(self.value(b))?;
        let shape = t.shape.clone();
        Ok(self.push(t.data, shape, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.value(a).sub(self.value(b))?;
        let shape = t.shape.clone();
        Ok(self.push(t.data, shape, Op::Sub(a, b), &[a, b]))
    }

    pub fn scalar_mul(&mut self, input: NodeId, factor: T) -> NodeId {
        let t = self.value(input).scale(factor);
        let shape = t.shape.clone();
        self.push(t.data, shape, Op::Scale(input, factor), &[input])
    }

    /// Max over `k×k` windows of a `[C×H×W]` input. Ties resolve to the
    /// first maximum in row-major window order.
    pub fn maxpool2d(&mut self, input: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let si = self.value(input).shape();
        if si.len() != 3 {
            return Err(Error::Dimension {
                op: "maxpool2d",
                lhs: si.to_vec(),
                rhs: vec![k, k],
            });
        }
        let (c, h, w) = (si[0], si[1], si[2]);
        if k == 0 || stride == 0 || k > h || k > w {
            return Err(Error::Config(format!(
                "maxpool window {k} (stride {stride}) does not fit input {h}x{w}"
            )));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let data = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..k {
                        let row = base + (oy * stride + dy) * w + ox * stride;
                        for idx in row..row + k {
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(out, vec![c, oh, ow], Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn reshape(&mut self, input: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let shape = shape.into();
        let src = self.value(input);
        if shape.iter().product::<usize>() != src.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: src.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = src.data().to_vec();
        Ok(self.push(data, shape, Op::Reshape(input), &[input]))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total = self.value(input).data().iter().copied().sum();
        self.push(vec![total], vec![1], Op::Sum(input), &[input])
    }

    /// `-log softmax(logits)[label]`, computed with the max subtracted.
    /// `logits` may have any shape; it is read as a flat vector of classes.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(Error::Argument(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let probs = softmax(z);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum: T = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = log_sum + max - z[label];
        let op = Op::SoftmaxCrossEntropy { logits, probs, label };
        Ok(self.push(vec![loss], vec![1], op, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`. Every leaf with
    /// `requires_grad` gets `grad += ∂loss/∂leaf` (zeros when the leaf does
    /// not reach the loss); calling twice without
    /// [`Tensor::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adjoints: Vec<Option<Vec<T>>> = Vec::new();
        adjoints.resize_with(loss.0 + 1, || None);
        adjoints[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adjoints[i].take() else {
                continue;
            };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut adjoints);
        }

        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                node.value.ensure_grad();
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adjoints: &mut [Option<Vec<T>>]) {
        let wants = |id: NodeId| self.requires_grad(id);
        let mut send = |id: NodeId, contribution: Vec<T>| match &mut adjoints[id.0] {
            Some(acc) => kernels::add_assign(acc, &contribution),
            slot @ None => *slot = Some(contribution),
        };

        match &self.nodes[i].op {
            Op::Leaf | Op::Detached => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    send(*a, kernels::matmul_grad_lhs(g, self.value(*b).data(), m, k, n));
                }
                if wants(*b) {
                    send(*b, kernels::matmul_grad_rhs(self.value(*a).data(), g, m, k, n));
                }
            }
            Op::Conv2d {
                input,
                kernels: kern,
                geometry,
                cols,
            } => {
                let (out_c, patch, positions) =
                    (self.value(*kern).shape()[0], geometry.patch_len(), geometry.positions());
                if wants(*kern) {
                    send(*kern, kernels::matmul_grad_lhs(g, cols, out_c, patch, positions));
                }
                if wants(*input) {
                    let gcols = kernels::matmul_grad_rhs(self.value(*kern).data(), g, out_c, patch, positions);
                    send(*input, kernels::col2im(&gcols, geometry));
                }
            }
            Op::ChannelBias { input, bias } => {
                if wants(*bias) {
                    let c = self.value(*bias).len();
                    let plane = g.len() / c.max(1);
                    let gb = g
                        .chunks_exact(plane.max(1))
                        .map(|ch| ch.iter().copied().sum())
                        .collect();
                    send(*bias, gb);
                }
                if wants(*input) {
                    send(*input, g.to_vec());
                }
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let gi = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                send(*input, gi);
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let gi = g
                    .iter()
                    .zip(x)
                    .zip(lo.iter().zip(hi))
                    .map(|((&gv, &xv), (&l, &h))| if l <= xv && xv <= h { gv } else { T::zero() })
                    .collect();
                send(*input, gi);
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    send(*b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Scale(input, factor) => {
                send(*input, g.iter().map(|&v| v * *factor).collect());
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = vec![T::zero(); self.value(*input).len()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    gi[idx] = gi[idx] + gv;
                }
                send(*input, gi);
            }
            Op::Reshape(input) => send(*input, g.to_vec()),
            Op::Sum(input) => send(*input, vec![g[0]; self.value(*input).len()]),
            Op::SoftmaxCrossEntropy { logits, probs, label } => {
                // The label entry is `p_y - 1` written as `-sum_{k != y} p_k`,
                // which stays nonzero when `p_y` rounds to one.
                let rest: T = probs
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != *label)
                    .map(|(_, &p)| p)
                    .sum();
                let mut gi: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
                gi[*label] = -rest * g[0];
                send(*logits, gi);
            }
        }
    }
}

/// Max-subtracted softmax of a flat logit vector.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
