//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and the backward pass is a reverse sweep. Every op is
//! a variant of [`Op`] with an explicit backward rule in
//! [`Graph::backward`]; there are no boxed closures.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::{self, Conv2dGeometry};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize by batch statistics and update the running averages.
    Train,
    /// Normalize by the running averages only.
    Eval,
}

/// Running statistics of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> BnStats<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros([channels]),
            var: Tensor::ones([channels]),
        }
    }
}

/// Backward rule to perturb on purpose, so that gradient checks can be
/// shown to catch a wrong derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultSite {
    Conv1dKernel,
    Conv2dKernel,
    BatchNormShift,
    MatMulRhs,
}

const FAULT_FACTOR: f64 = 1.01;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d {
        input: Var,
        kernel: Var,
        stride: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    },
    GlobalAvgPool {
        input: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Softmax(Var),
    Relu(Var),
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
        mode: BatchNormMode,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    ScaleColumns {
        x: Var,
        weights: Var,
    },
    Log(Var),
    Exp(Var),
    Sum(Var),
    EuclideanDistance(Var, Var),
    L2Norm(Var),
    CosineSimilarity(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Option<FaultSite>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape around `axis` into `(outer, extent, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Arms a deliberately wrong backward rule (test fixture).
    pub fn inject_fault(&mut self, site: Option<FaultSite>) {
        self.fault = site;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient, if the node took part in a backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let ng = self.needs(&[x]);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        Ok(self.unary(x, value, Op::Transpose(x)))
    }

    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let value = kernels::conv1d(self.value(input), self.value(kernel), stride)?;
        let ng = self.needs(&[input, kernel]);
        Ok(self.push(value, Op::Conv1d { input, kernel, stride }, ng))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = Conv2dGeometry::infer(self.shape(input), self.shape(kernel), stride, pad)?;
        let value = kernels::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let ng = self.needs(&deps);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }, ng))
    }

    /// `[N×C×H×W] -> [C×N]`: spatial mean per image and channel.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[n, c, h, w] = x.shape() else {
            return Err(TensorError::Rank {
                op: "global_avg_pool",
                expected: 4,
                shape: x.shape().to_vec(),
            });
        };
        let plane = h * w;
        let inv = T::one() / T::cast(plane as f64);
        let mut out = vec![T::zero(); c * n];
        for img in 0..n {
            for ch in 0..c {
                let s: T = x.data()[(img * c + ch) * plane..][..plane].iter().copied().sum();
                out[ch * n + img] = s * inv;
            }
        }
        let value = Tensor::new([c, n], out)?;
        Ok(self.unary(input, value, Op::GlobalAvgPool { input }))
    }

    /// `[D×N] + bias[D]`, the bias repeated over columns.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (d, n) = self.value(x).dims2("add_bias")?;
        let b = self.value(bias);
        if b.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut value = self.value(x).clone();
        for (r, &bv) in b.data().iter().enumerate() {
            for v in &mut value.data_mut()[r * n..(r + 1) * n] {
                *v = *v + bv;
            }
        }
        let ng = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddBias { x, bias }, ng))
    }

    /// `W·X + b` for `W: [out×in]`, `X: [in×N]`, `b: [out]`.
    pub fn linear(&mut self, weight: Var, x: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(weight, x)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Softmax over all elements of `x`.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = kernels::softmax(self.value(x));
        self.unary(x, value, Op::Softmax(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.unary(x, value, Op::Relu(x))
    }

    /// Batch normalization of `x: [D×N]` over its N columns.
    ///
    /// In train mode the biased batch variance is used both for
    /// normalization and for the running average, so that repeated
    /// identical batches make eval mode reproduce train mode.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        stats: &mut BnStats<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let (d, n) = self.value(x).dims2("batch_norm")?;
        for p in [scale, shift] {
            if self.shape(p) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "batch_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if stats.mean.shape() != [d] || stats.var.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm stats",
                lhs: self.shape(x).to_vec(),
                rhs: stats.mean.shape().to_vec(),
            });
        }
        // statistics and the affine map are accumulated in f64 and rounded
        // once, so f32 batches with a small variance keep full precision
        let (eps, momentum) = (BnStats::<T>::EPS, BnStats::<T>::MOMENTUM);
        let xv = self.value(x).data();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let mut normalized = vec![T::zero(); d * n];
        let mut out = vec![T::zero(); d * n];
        let mut inv_std = vec![T::zero(); d];
        for r in 0..d {
            let row: Vec<f64> = xv[r * n..(r + 1) * n].iter().map(|v| v.widen()).collect();
            let (mean, var) = match mode {
                BatchNormMode::Train => {
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let rm = &mut stats.mean.data_mut()[r];
                    *rm = T::cast((1.0 - momentum) * rm.widen() + momentum * mean);
                    let rv = &mut stats.var.data_mut()[r];
                    *rv = T::cast((1.0 - momentum) * rv.widen() + momentum * var);
                    (mean, var)
                }
                BatchNormMode::Eval => (stats.mean.data()[r].widen(), stats.var.data()[r].widen()),
            };
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = T::cast(is);
            let (g, b) = (sc[r].widen(), sh[r].widen());
            for (j, &v) in row.iter().enumerate() {
                let z = (v - mean) * is;
                normalized[r * n + j] = T::cast(z);
                out[r * n + j] = T::cast(z * g + b);
            }
        }
        let normalized = Tensor::new([d, n], normalized)?;
        let out = Tensor::new([d, n], out)?;
        let ng = self.needs(&[x, scale, shift]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
                mode,
            },
            ng,
        ))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = kernels::mean_axis(self.value(x), axis)?;
        Ok(self.unary(x, value, Op::MeanAxis { x, axis }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.unary(x, value, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.unary(x, value, Op::AddScalar(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.unary(x, value, Op::Reshape(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                detail: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let ext = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let ng = self.needs(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                detail: format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            });
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * ext + start) * inner..(o * ext + start + len) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.unary(x, value, Op::Slice { x, axis, start }))
    }

    /// `x: [D×L]` with column `i` multiplied by `weights[i]`.
    pub fn scale_columns(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (d, l) = self.value(x).dims2("scale_columns")?;
        if self.value(weights).len() != l {
            return Err(TensorError::ShapeMismatch {
                op: "scale_columns",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(weights).to_vec(),
            });
        }
        let w = self.value(weights).data().to_vec();
        let mut value = self.value(x).clone();
        for r in 0..d {
            for (v, &wv) in value.data_mut()[r * l..(r + 1) * l].iter_mut().zip(&w) {
                *v = *v * wv;
            }
        }
        let ng = self.needs(&[x, weights]);
        Ok(self.push(value, Op::ScaleColumns { x, weights }, ng))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        self.unary(x, value, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        self.unary(x, value, Op::Exp(x))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.unary(x, value, Op::Sum(x))
    }

    /// Inner product of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Euclidean distance. The gradient at zero distance is defined as 0.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self
            .value(a)
            .zip_map(self.value(b), "euclidean_distance", |x, y| x - y)?
            .data()
            .iter()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(d), Op::EuclideanDistance(a, b), ng))
    }

    pub fn l2_norm(&mut self, x: Var) -> Var {
        let n = self.value(x).data().iter().map(|&v| v * v).sum::<T>().sqrt();
        self.unary(x, Tensor::scalar(n), Op::L2Norm(x))
    }

    /// Cosine similarity; 0 (with zero gradient) if either input is zero.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).expect_same_shape(self.value(b), "cosine_similarity")?;
        let (dot, na, nb) = cosine_parts(self.value(a).data(), self.value(b).data());
        let c = if na > T::zero() && nb > T::zero() {
            dot / (na * nb)
        } else {
            T::zero()
        };
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(c), Op::CosineSimilarity(a, b), ng))
    }

    /// Per-column softmax cross-entropy of `logits: [C×B]` against
    /// `labels` (length B), returning `[B]` losses.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (c, b) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != b {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                detail: format!("{} labels for {b} columns", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                detail: format!("label {bad} out of range for {c} classes"),
            });
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); c * b];
        let mut losses = Vec::with_capacity(b);
        for (j, &y) in labels.iter().enumerate() {
            let col: Vec<T> = (0..c).map(|i| lv.at2(i, j)).collect();
            let lse = kernels::log_sum_exp(&col);
            for i in 0..c {
                probs[i * b + j] = (col[i] - lse).exp();
            }
            losses.push(lse - col[y]);
        }
        let probs = Tensor::new([c, b], probs)?;
        let value = Tensor::new([b], losses)?;
        Ok(self.unary(
            logits,
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Accumulates d(root)/d(node) into every node that needs a gradient.
    /// Calling it twice without [`Graph::zero_grad`] adds the gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = self.shape(root).to_vec();
        if self.value(root).len() != 1 {
            return Err(TensorError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(root_shape));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            match &mut self.nodes[idx].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn fault_factor(&self, site: FaultSite) -> T {
        if self.fault == Some(site) {
            T::cast(FAULT_FACTOR)
        } else {
            T::one()
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut send = |v: Var, t: Tensor<T>| {
            if self.nodes[v.0].needs_grad {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2("matmul")?;
                let n = bv.shape()[1];
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![T::zero(); m * k];
                    kernels::gemm_nt(g.data(), bv.data(), &mut ga, m, n, k);
                    send(*a, Tensor::new([m, k], ga)?);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![T::zero(); k * n];
                    kernels::gemm_tn(av.data(), g.data(), &mut gb, m, k, n);
                    let f = self.fault_factor(FaultSite::MatMulRhs);
                    if f != T::one() {
                        gb.iter_mut().for_each(|v| *v = *v * f);
                    }
                    send(*b, Tensor::new([k, n], gb)?);
                }
            }
            Op::Transpose(x) => send(*x, g.transpose()?),
            Op::Conv1d { input, kernel, stride } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (cin, width) = x.dims2("conv1d")?;
                let (cout, span) = (k.shape()[0], k.shape()[2]);
                let out_len = out.shape()[1];
                let mut gx = vec![T::zero(); cin * width];
                let mut gk = vec![T::zero(); cout * cin * span];
                for o in 0..cout {
                    let grow = &g.data()[o * out_len..(o + 1) * out_len];
                    for c in 0..cin {
                        let kbase = (o * cin + c) * span;
                        for (t, &gv) in grow.iter().enumerate() {
                            let xbase = c * width + t * stride;
                            for s in 0..span {
                                gk[kbase + s] = gk[kbase + s] + gv * x.data()[xbase + s];
                                gx[xbase + s] = gx[xbase + s] + gv * k.data()[kbase + s];
                            }
                        }
                    }
                }
                let f = self.fault_factor(FaultSite::Conv1dKernel);
                if f != T::one() {
                    gk.iter_mut().for_each(|v| *v = *v * f);
                }
                send(*input, Tensor::new([cin, width], gx)?);
                send(*kernel, Tensor::new(k.shape().to_vec(), gk)?);
            }
            Op::Conv2d { input, kernel, bias, geom } => {
                let (gin, mut gk) = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g.data(),
                    self.nodes[input.0].needs_grad,
                );
                let f = self.fault_factor(FaultSite::Conv2dKernel);
                if f != T::one() {
                    gk.iter_mut().for_each(|v| *v = *v * f);
                }
                if let Some(gin) = gin {
                    send(*input, Tensor::new(self.shape(*input).to_vec(), gin)?);
                }
                send(*kernel, Tensor::new(self.shape(*kernel).to_vec(), gk)?);
                if let Some(b) = bias {
                    let plane = geom.out_h * geom.out_w;
                    let mut gb = vec![T::zero(); geom.out_channels];
                    for n in 0..geom.batch {
                        for (o, acc) in gb.iter_mut().enumerate() {
                            let s: T = g.data()[(n * geom.out_channels + o) * plane..][..plane]
                                .iter()
                                .copied()
                                .sum();
                            *acc = *acc + s;
                        }
                    }
                    send(*b, Tensor::new([geom.out_channels], gb)?);
                }
            }
            Op::GlobalAvgPool { input } => {
                let shape = self.shape(*input).to_vec();
                let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let inv = T::one() / T::cast(plane as f64);
                let mut gx = vec![T::zero(); n * c * plane];
                for img in 0..n {
                    for ch in 0..c {
                        let v = g.data()[ch * n + img] * inv;
                        gx[(img * c + ch) * plane..][..plane].iter_mut().for_each(|o| *o = v);
                    }
                }
                send(*input, Tensor::new(shape, gx)?);
            }
            Op::AddBias { x, bias } => {
                let (d, n) = g.dims2("add_bias")?;
                let gb: Vec<T> = (0..d)
                    .map(|r| g.data()[r * n..(r + 1) * n].iter().copied().sum())
                    .collect();
                send(*x, g.clone());
                send(*bias, Tensor::new([d], gb)?);
            }
            Op::Softmax(x) => {
                let dot: T = g.data().iter().zip(out.data()).map(|(&a, &b)| a * b).sum();
                let gx = out.zip_map(g, "softmax", |y, gv| y * (gv - dot))?;
                send(*x, gx);
            }
            Op::Relu(x) => {
                let gx = self
                    .value(*x)
                    .zip_map(g, "relu", |v, gv| if v > T::zero() { gv } else { T::zero() })?;
                send(*x, gx);
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
                mode,
            } => {
                let (d, n) = g.dims2("batch_norm")?;
                let sc = self.value(*scale).data();
                let nn = T::cast(n as f64);
                let mut gx = vec![T::zero(); d * n];
                let mut gscale = vec![T::zero(); d];
                let mut gshift = vec![T::zero(); d];
                for r in 0..d {
                    let grow = &g.data()[r * n..(r + 1) * n];
                    let xhat = &normalized.data()[r * n..(r + 1) * n];
                    let sum_g: T = grow.iter().copied().sum();
                    let sum_gx: T = grow.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
                    gscale[r] = sum_gx;
                    gshift[r] = sum_g;
                    let k = sc[r] * inv_std[r];
                    for j in 0..n {
                        gx[r * n + j] = match mode {
                            BatchNormMode::Train => {
                                k / nn * (nn * grow[j] - sum_g - xhat[j] * sum_gx)
                            }
                            BatchNormMode::Eval => k * grow[j],
                        };
                    }
                }
                let f = self.fault_factor(FaultSite::BatchNormShift);
                if f != T::one() {
                    gshift.iter_mut().for_each(|v| *v = *v * f);
                }
                send(*x, Tensor::new([d, n], gx)?);
                send(*scale, Tensor::new([d], gscale)?);
                send(*shift, Tensor::new([d], gshift)?);
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, ext, inner) = split_axis(&shape, *axis);
                let inv = T::one() / T::cast(ext as f64);
                let mut gx = vec![T::zero(); outer * ext * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for a in 0..ext {
                        for (d, &s) in gx[(o * ext + a) * inner..][..inner].iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                send(*x, Tensor::new(shape, gx)?);
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(self.value(*b), "mul", |x, y| x * y)?);
                send(*b, g.zip_map(self.value(*a), "mul", |x, y| x * y)?);
            }
            Op::Scale(x, c) => {
                let c = *c;
                send(*x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::Reshape(x) => send(*x, g.clone().reshape(self.shape(*x))?),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let pshape = self.shape(p).to_vec();
                    let ext = pshape[*axis];
                    let mut gp = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        gp.extend_from_slice(
                            &g.data()[(o * total + offset) * inner..(o * total + offset + ext) * inner],
                        );
                    }
                    offset += ext;
                    send(p, Tensor::new(pshape, gp)?);
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x).to_vec();
                let (outer, ext, inner) = split_axis(&shape, *axis);
                let len = out.shape()[*axis];
                let mut gx = vec![T::zero(); outer * ext * inner];
                for o in 0..outer {
                    gx[(o * ext + start) * inner..(o * ext + start + len) * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, Tensor::new(shape, gx)?);
            }
            Op::ScaleColumns { x, weights } => {
                let xv = self.value(*x);
                let (d, l) = xv.dims2("scale_columns")?;
                let w = self.value(*weights);
                let mut gx = g.clone();
                let mut gw = vec![T::zero(); l];
                for r in 0..d {
                    for i in 0..l {
                        let gv = g.data()[r * l + i];
                        gx.data_mut()[r * l + i] = gv * w.data()[i];
                        gw[i] = gw[i] + gv * xv.data()[r * l + i];
                    }
                }
                send(*x, gx);
                send(*weights, Tensor::new(w.shape().to_vec(), gw)?);
            }
            Op::Log(x) => send(*x, g.zip_map(self.value(*x), "log", |gv, v| gv / v)?),
            Op::Exp(x) => send(*x, g.zip_map(out, "exp", |gv, y| gv * y)?),
            Op::Sum(x) => {
                let gv = g.item();
                send(*x, Tensor::full(self.shape(*x).to_vec(), gv));
            }
            Op::EuclideanDistance(a, b) => {
                let d = out.item();
                let gv = g.item();
                if d > T::zero() {
                    let diff = self.value(*a).zip_map(self.value(*b), "euclidean_distance", |x, y| {
                        (x - y) * gv / d
                    })?;
                    send(*b, diff.map(|v| -v));
                    send(*a, diff);
                } else {
                    send(*a, Tensor::zeros(self.shape(*a).to_vec()));
                    send(*b, Tensor::zeros(self.shape(*b).to_vec()));
                }
            }
            Op::L2Norm(x) => {
                let n = out.item();
                let gv = g.item();
                let gx = if n > T::zero() {
                    self.value(*x).map(|v| v * gv / n)
                } else {
                    Tensor::zeros(self.shape(*x).to_vec())
                };
                send(*x, gx);
            }
            Op::CosineSimilarity(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (_, na, nb) = cosine_parts(av.data(), bv.data());
                let gv = g.item();
                if na > T::zero() && nb > T::zero() {
                    let c = out.item();
                    let ga = av.zip_map(bv, "cosine_similarity", |x, y| {
                        gv * (y / (na * nb) - c * x / (na * na))
                    })?;
                    let gb = bv.zip_map(av, "cosine_similarity", |y, x| {
                        gv * (x / (na * nb) - c * y / (nb * nb))
                    })?;
                    send(*a, ga);
                    send(*b, gb);
                } else {
                    send(*a, Tensor::zeros(av.shape().to_vec()));
                    send(*b, Tensor::zeros(bv.shape().to_vec()));
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (c, b) = probs.dims2("cross_entropy")?;
                let mut gl = probs.clone();
                for j in 0..b {
                    let gv = g.data()[j];
                    for i in 0..c {
                        let onehot = if labels[j] == i { T::one() } else { T::zero() };
                        let v = &mut gl.data_mut()[i * b + j];
                        *v = (*v - onehot) * gv;
                    }
                }
                send(*logits, gl);
            }
        }
        Ok(())
    }
}

fn cosine_parts<T: Element>(a: &[T], b: &[T]) -> (T, T, T) {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    (dot, na, nb)
}
