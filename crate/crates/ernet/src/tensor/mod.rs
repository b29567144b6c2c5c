//! Dense n-dimensional arrays with tape-based reverse-mode differentiation.
//!
//! Every value that participates in differentiation lives on a [`Tape`]: a
//! flat arena of [`DiffTensor`]s plus an ordered record of the primitive
//! operations that produced them. The graph is rebuilt from scratch for each
//! optimization step; [`Tape::backward`] replays the record in reverse and
//! leaves gradients on every reachable tensor that requires them.
//!
//! Double precision throughout. Ops execute sequentially, so identical
//! inputs give bitwise-identical values and gradients across runs.

mod adam;
mod checkpoint;
mod ops;

pub use adam::{adam_step, standard_normal, AdamConfig, AdamState, Param};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointDtype, NamedTensor};

use crate::error::{Error, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(u32);

impl TensorId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

/// A tensor participating in differentiation: immutable values plus an
/// optional gradient of identical shape, populated by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct DiffTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl DiffTensor {
    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Elementwise binary kinds. The product kind is the overlay primitive;
/// the rest are ordinary arithmetic plumbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwKind {
    Add,
    Sub,
    Mul,
    Max,
}

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    LeakyRelu(f64),
    SteepSigmoid(f64),
    Heaviside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Backward callback for externally defined primitives (warping, losses).
/// Receives read access to all tensors, the output gradient, and a sink for
/// input-gradient contributions.
pub type CustomBackward = Box<dyn Fn(&ValueView<'_>, &[f64], &mut GradSink<'_>)>;

enum OpRecord {
    Binary {
        kind: EwKind,
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    BinaryScalar {
        kind: EwKind,
        a: TensorId,
        scalar: f64,
        out: TensorId,
    },
    Unary {
        kind: UnaryKind,
        x: TensorId,
        out: TensorId,
    },
    Conv3d {
        x: TensorId,
        kernel: TensorId,
        bias: TensorId,
        stride: usize,
        padding: usize,
        out: TensorId,
    },
    Upsample2x {
        x: TensorId,
        out: TensorId,
    },
    Reduce {
        kind: ReduceKind,
        x: TensorId,
        out: TensorId,
    },
    Dense {
        x: TensorId,
        weight: TensorId,
        bias: TensorId,
        out: TensorId,
    },
    ConcatChannels {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    GlobalAvgPool {
        x: TensorId,
        out: TensorId,
    },
    Reshape {
        x: TensorId,
        out: TensorId,
    },
    Custom {
        inputs: Vec<TensorId>,
        out: TensorId,
        backward: CustomBackward,
    },
}

impl OpRecord {
    fn out(&self) -> TensorId {
        match self {
            OpRecord::Binary { out, .. }
            | OpRecord::BinaryScalar { out, .. }
            | OpRecord::Unary { out, .. }
            | OpRecord::Conv3d { out, .. }
            | OpRecord::Upsample2x { out, .. }
            | OpRecord::Reduce { out, .. }
            | OpRecord::Dense { out, .. }
            | OpRecord::ConcatChannels { out, .. }
            | OpRecord::GlobalAvgPool { out, .. }
            | OpRecord::Reshape { out, .. }
            | OpRecord::Custom { out, .. } => *out,
        }
    }
}

/// Read-only view of the tensors on a tape, handed to custom backwards.
pub struct ValueView<'a> {
    tensors: &'a [DiffTensor],
}

impl ValueView<'_> {
    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.index()].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.index()].shape
    }
}

/// Accumulator for gradient contributions during the backward pass.
/// Contributions to tensors that do not require gradients are dropped.
pub struct GradSink<'a> {
    tensors: &'a [DiffTensor],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    pub fn wants(&self, id: TensorId) -> bool {
        self.tensors[id.index()].requires_grad
    }

    /// Direct mutable access to the (zero-initialized) gradient buffer, or
    /// `None` when the tensor does not require gradients. Scatter-style
    /// backwards write through this.
    pub fn entry(&mut self, id: TensorId) -> Option<&mut [f64]> {
        if !self.tensors[id.index()].requires_grad {
            return None;
        }
        let numel = self.tensors[id.index()].numel();
        Some(
            self.grads[id.index()]
                .get_or_insert_with(|| vec![0.0; numel])
                .as_mut_slice(),
        )
    }

    pub fn accumulate(&mut self, id: TensorId, contribution: &[f64]) {
        if let Some(buf) = self.entry(id) {
            debug_assert_eq!(buf.len(), contribution.len());
            for (g, c) in buf.iter_mut().zip(contribution) {
                *g += c;
            }
        }
    }
}

/// Ordered record of primitive operations over an arena of tensors.
#[derive(Default)]
pub struct Tape {
    tensors: Vec<DiffTensor>,
    ops: Vec<OpRecord>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Clear all recorded tensors and operations. Equivalent to starting a
    /// fresh tape; called between optimization steps when reusing one.
    pub fn clear(&mut self) {
        self.tensors.clear();
        self.ops.clear();
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> TensorId {
        debug_assert_eq!(numel_of(&shape), values.len());
        let id = TensorId(self.tensors.len() as u32);
        self.tensors.push(DiffTensor {
            shape,
            values,
            requires_grad,
            grad: None,
        });
        id
    }

    /// Add a leaf tensor. Parameters are snapshotted here: the tape owns a
    /// copy, so later mutation of the source cannot affect this pass.
    pub fn leaf(&mut self, values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if numel_of(shape) != values.len() {
            return Err(Error::invalid(format!(
                "leaf: shape {:?} implies {} elements, got {}",
                shape,
                numel_of(shape),
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values, requires_grad))
    }

    pub fn constant(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(values, shape, false)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.push(Vec::new(), vec![value], false)
    }

    /// Register a parameter as a differentiable leaf (snapshot of its values).
    pub fn param(&mut self, param: &Param) -> TensorId {
        self.push(param.shape.clone(), param.values.clone(), true)
    }

    pub fn tensor(&self, id: TensorId) -> &DiffTensor {
        &self.tensors[id.index()]
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.index()].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.index()].shape
    }

    /// Scalar value of a zero-dim or single-element tensor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.tensors[id.index()].numel(), 1);
        self.tensors[id.index()].values[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.index()].grad.as_deref()
    }

    pub fn take_grad(&mut self, id: TensorId) -> Option<Vec<f64>> {
        self.tensors[id.index()].grad.take()
    }

    fn any_requires_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.tensors[id.index()].requires_grad)
    }

    // ---- elementwise -------------------------------------------------

    fn check_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// Elementwise op over equal shapes; a scalar (zero-dim) second operand
    /// broadcasts over the first.
    pub fn elementwise(&mut self, kind: EwKind, a: TensorId, b: TensorId) -> Result<TensorId> {
        let broadcast_b = self.shape(b).is_empty() && !self.shape(a).is_empty();
        if !broadcast_b {
            self.check_same_shape("elementwise", a, b)?;
        }
        let out_values = if broadcast_b {
            let s = self.scalar_value(b);
            ops::ew_scalar_forward(kind, self.values(a), s)
        } else {
            ops::ew_forward(kind, self.values(a), self.values(b))
        };
        let requires = self.any_requires_grad(&[a, b]);
        let out = self.push(self.shape(a).to_vec(), out_values, requires);
        self.ops.push(OpRecord::Binary { kind, a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(EwKind::Add, a, b)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(EwKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(EwKind::Mul, a, b)
    }

    pub fn max(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(EwKind::Max, a, b)
    }

    /// Elementwise op against a literal scalar second operand.
    pub fn elementwise_scalar(&mut self, kind: EwKind, a: TensorId, scalar: f64) -> TensorId {
        let values = ops::ew_scalar_forward(kind, self.values(a), scalar);
        let requires = self.tensors[a.index()].requires_grad;
        let out = self.push(self.shape(a).to_vec(), values, requires);
        self.ops.push(OpRecord::BinaryScalar {
            kind,
            a,
            scalar,
            out,
        });
        out
    }

    pub fn mul_scalar(&mut self, a: TensorId, scalar: f64) -> TensorId {
        self.elementwise_scalar(EwKind::Mul, a, scalar)
    }

    pub fn add_scalar(&mut self, a: TensorId, scalar: f64) -> TensorId {
        self.elementwise_scalar(EwKind::Add, a, scalar)
    }

    // ---- network layers ----------------------------------------------

    /// 3D convolution: input `[cin, w, h, d]`, kernel `[cout, cin, k, k, k]`,
    /// bias `[cout]`. Odd kernel, stride 1 or 2; `padding = (k-1)/2` keeps
    /// spatial extents at stride 1.
    pub fn conv3d(
        &mut self,
        x: TensorId,
        kernel: TensorId,
        bias: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let xs = self.shape(x);
        let ks = self.shape(kernel);
        if xs.len() != 4 || ks.len() != 5 {
            return Err(Error::invalid(format!(
                "conv3d: input must be [cin,w,h,d] and kernel [cout,cin,k,k,k], got {:?} and {:?}",
                xs, ks
            )));
        }
        if ks[2] % 2 == 0 || ks[2] != ks[3] || ks[2] != ks[4] {
            return Err(Error::invalid(format!(
                "conv3d: kernel must be cubic with odd extent, got {:?}",
                &ks[2..]
            )));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::invalid(format!("conv3d: stride must be 1 or 2, got {stride}")));
        }
        if ks[1] != xs[0] {
            return Err(Error::ChannelMismatch {
                op: "conv3d",
                expected: ks[1],
                got: xs[0],
            });
        }
        if self.shape(bias) != [ks[0]] {
            return Err(Error::ChannelMismatch {
                op: "conv3d bias",
                expected: ks[0],
                got: numel_of(self.shape(bias)),
            });
        }
        let k = ks[2];
        let mut out_spatial = [0usize; 3];
        for (o, &n) in out_spatial.iter_mut().zip(&xs[1..]) {
            let span = n as isize + 2 * padding as isize - k as isize;
            if span < 0 {
                return Err(Error::invalid(format!(
                    "conv3d: kernel {k} exceeds padded extent of input {:?}",
                    &xs[1..]
                )));
            }
            *o = span as usize / stride + 1;
        }
        let out_shape = vec![ks[0], out_spatial[0], out_spatial[1], out_spatial[2]];
        let mut values = vec![0.0; numel_of(&out_shape)];
        ops::conv3d_forward(
            self.values(x),
            [xs[0], xs[1], xs[2], xs[3]],
            self.values(kernel),
            [ks[0], ks[1], ks[2], ks[3], ks[4]],
            self.values(bias),
            stride,
            padding,
            &mut values,
            [out_shape[0], out_shape[1], out_shape[2], out_shape[3]],
        );
        let requires = self.any_requires_grad(&[x, kernel, bias]);
        let out = self.push(out_shape, values, requires);
        self.ops.push(OpRecord::Conv3d {
            x,
            kernel,
            bias,
            stride,
            padding,
            out,
        });
        Ok(out)
    }

    /// Nearest-neighbor 2x upsampling of `[c, w, h, d]`; each output voxel
    /// copies its source voxel, so the gradient sums 8 contributions.
    pub fn upsample_nearest2x(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::invalid(format!(
                "upsample_nearest2x: expected [c,w,h,d], got {:?}",
                xs
            )));
        }
        let out_shape = vec![xs[0], xs[1] * 2, xs[2] * 2, xs[3] * 2];
        let mut values = vec![0.0; numel_of(&out_shape)];
        ops::upsample2x_forward(self.values(x), [xs[0], xs[1], xs[2], xs[3]], &mut values);
        let requires = self.tensors[x.index()].requires_grad;
        let out = self.push(out_shape, values, requires);
        self.ops.push(OpRecord::Upsample2x { x, out });
        Ok(out)
    }

    /// Sigmoid with slope `gamma`: `1 / (1 + exp(-gamma * x))`. The steep
    /// variant stands in for the hard threshold while training.
    pub fn steep_sigmoid(&mut self, x: TensorId, gamma: f64) -> Result<TensorId> {
        if gamma <= 0.0 {
            return Err(Error::invalid(format!(
                "steep_sigmoid: slope must be positive, got {gamma}"
            )));
        }
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .map(|&v| 1.0 / (1.0 + (-gamma * v).exp()))
            .collect();
        let requires = self.tensors[x.index()].requires_grad;
        let out = self.push(self.shape(x).to_vec(), values, requires);
        self.ops.push(OpRecord::Unary {
            kind: UnaryKind::SteepSigmoid(gamma),
            x,
            out,
        });
        Ok(out)
    }

    /// Hard threshold: 1 where x > 0, else 0. Inference only; contributes no
    /// gradient.
    pub fn heaviside(&mut self, x: TensorId) -> TensorId {
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let out = self.push(self.shape(x).to_vec(), values, false);
        self.ops.push(OpRecord::Unary {
            kind: UnaryKind::Heaviside,
            x,
            out,
        });
        out
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> TensorId {
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let requires = self.tensors[x.index()].requires_grad;
        let out = self.push(self.shape(x).to_vec(), values, requires);
        self.ops.push(OpRecord::Unary {
            kind: UnaryKind::LeakyRelu(slope),
            x,
            out,
        });
        out
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: TensorId) -> TensorId {
        let sum: f64 = self.values(x).iter().sum();
        let value = match kind {
            ReduceKind::Sum => sum,
            ReduceKind::Mean => sum / self.tensors[x.index()].numel() as f64,
        };
        let requires = self.tensors[x.index()].requires_grad;
        let out = self.push(Vec::new(), vec![value], requires);
        self.ops.push(OpRecord::Reduce { kind, x, out });
        out
    }

    pub fn reduce_sum(&mut self, x: TensorId) -> TensorId {
        self.reduce(ReduceKind::Sum, x)
    }

    pub fn reduce_mean(&mut self, x: TensorId) -> TensorId {
        self.reduce(ReduceKind::Mean, x)
    }

    /// Affine map: `out = weight · x + bias` with `x: [n]`, `weight: [m, n]`,
    /// `bias: [m]`.
    pub fn dense(&mut self, x: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: ws.to_vec(),
                rhs: xs.to_vec(),
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let mut values = vec![0.0; m];
        ops::dense_forward(self.values(x), self.values(weight), self.values(bias), m, n, &mut values);
        let requires = self.any_requires_grad(&[x, weight, bias]);
        let out = self.push(vec![m], values, requires);
        self.ops.push(OpRecord::Dense { x, weight, bias, out });
        Ok(out)
    }

    /// Concatenate along the leading (channel) axis; all trailing dims equal.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut out_shape = sa.to_vec();
        out_shape[0] = sa[0] + sb[0];
        let mut values = Vec::with_capacity(numel_of(&out_shape));
        values.extend_from_slice(self.values(a));
        values.extend_from_slice(self.values(b));
        let requires = self.any_requires_grad(&[a, b]);
        let out = self.push(out_shape, values, requires);
        self.ops.push(OpRecord::ConcatChannels { a, b, out });
        Ok(out)
    }

    /// Mean over the spatial extent of each channel: `[c, w, h, d] -> [c]`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::invalid(format!(
                "global_avg_pool: expected [c,w,h,d], got {:?}",
                xs
            )));
        }
        let (c, spatial) = (xs[0], xs[1] * xs[2] * xs[3]);
        let mut values = vec![0.0; c];
        for (ci, out) in values.iter_mut().enumerate() {
            let chunk = &self.values(x)[ci * spatial..(ci + 1) * spatial];
            *out = chunk.iter().sum::<f64>() / spatial as f64;
        }
        let requires = self.tensors[x.index()].requires_grad;
        let out = self.push(vec![c], values, requires);
        self.ops.push(OpRecord::GlobalAvgPool { x, out });
        Ok(out)
    }

    /// Reinterpret the value grid under a new shape of equal element count.
    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId> {
        if numel_of(new_shape) != self.tensors[x.index()].numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: new_shape.to_vec(),
            });
        }
        let values = self.values(x).to_vec();
        let requires = self.tensors[x.index()].requires_grad;
        let out = self.push(new_shape.to_vec(), values, requires);
        self.ops.push(OpRecord::Reshape { x, out });
        Ok(out)
    }

    /// Record an externally computed primitive with its backward callback.
    pub fn custom(
        &mut self,
        inputs: &[TensorId],
        values: Vec<f64>,
        shape: &[usize],
        backward: CustomBackward,
    ) -> Result<TensorId> {
        if numel_of(shape) != values.len() {
            return Err(Error::invalid(format!(
                "custom: shape {:?} implies {} elements, got {}",
                shape,
                numel_of(shape),
                values.len()
            )));
        }
        let requires = self.any_requires_grad(inputs);
        let out = self.push(shape.to_vec(), values, requires);
        self.ops.push(OpRecord::Custom {
            inputs: inputs.to_vec(),
            out,
            backward,
        });
        Ok(out)
    }

    // ---- backward ------------------------------------------------------

    /// Reverse replay from a scalar root. Gradients land on every reachable
    /// tensor with `requires_grad`; previous gradients are discarded.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.tensors[root.index()].numel() != 1 {
            return Err(Error::invalid(format!(
                "backward: root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        for t in &mut self.tensors {
            t.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.tensors.len()];
        grads[root.index()] = Some(vec![1.0]);

        let tensors = &self.tensors;
        for op in self.ops.iter().rev() {
            let out = op.out();
            let Some(gout) = grads[out.index()].clone() else {
                continue;
            };
            let mut sink = GradSink {
                tensors,
                grads: &mut grads,
            };
            match op {
                OpRecord::Binary { kind, a, b, out } => {
                    ops::ew_backward(*kind, tensors, *a, *b, *out, &gout, &mut sink);
                }
                OpRecord::BinaryScalar { kind, a, scalar, .. } => {
                    ops::ew_scalar_backward(*kind, tensors, *a, *scalar, &gout, &mut sink);
                }
                OpRecord::Unary { kind, x, out } => match kind {
                    UnaryKind::LeakyRelu(slope) => {
                        if let Some(gx) = sink.entry(*x) {
                            for (g, (xv, go)) in gx
                                .iter_mut()
                                .zip(tensors[x.index()].values.iter().zip(&gout))
                            {
                                *g += go * if *xv > 0.0 { 1.0 } else { *slope };
                            }
                        }
                    }
                    UnaryKind::SteepSigmoid(gamma) => {
                        if let Some(gx) = sink.entry(*x) {
                            for (g, (yv, go)) in gx
                                .iter_mut()
                                .zip(tensors[out.index()].values.iter().zip(&gout))
                            {
                                *g += go * gamma * yv * (1.0 - yv);
                            }
                        }
                    }
                    UnaryKind::Heaviside => {}
                },
                OpRecord::Conv3d {
                    x,
                    kernel,
                    bias,
                    stride,
                    padding,
                    out,
                } => {
                    ops::conv3d_backward(
                        tensors, *x, *kernel, *bias, *stride, *padding, *out, &gout, &mut sink,
                    );
                }
                OpRecord::Upsample2x { x, .. } => {
                    if let Some(gx) = sink.entry(*x) {
                        let xs = &tensors[x.index()].shape;
                        ops::upsample2x_backward(&gout, [xs[0], xs[1], xs[2], xs[3]], gx);
                    }
                }
                OpRecord::Reduce { kind, x, .. } => {
                    if let Some(gx) = sink.entry(*x) {
                        let scale = match kind {
                            ReduceKind::Sum => gout[0],
                            ReduceKind::Mean => gout[0] / gx.len() as f64,
                        };
                        for g in gx.iter_mut() {
                            *g += scale;
                        }
                    }
                }
                OpRecord::Dense { x, weight, bias, .. } => {
                    ops::dense_backward(tensors, *x, *weight, *bias, &gout, &mut sink);
                }
                OpRecord::ConcatChannels { a, b, .. } => {
                    let na = tensors[a.index()].numel();
                    if let Some(ga) = sink.entry(*a) {
                        for (g, go) in ga.iter_mut().zip(&gout[..na]) {
                            *g += go;
                        }
                    }
                    if let Some(gb) = sink.entry(*b) {
                        for (g, go) in gb.iter_mut().zip(&gout[na..]) {
                            *g += go;
                        }
                    }
                }
                OpRecord::GlobalAvgPool { x, .. } => {
                    if let Some(gx) = sink.entry(*x) {
                        let spatial = gx.len() / gout.len();
                        for (ci, go) in gout.iter().enumerate() {
                            let scale = go / spatial as f64;
                            for g in &mut gx[ci * spatial..(ci + 1) * spatial] {
                                *g += scale;
                            }
                        }
                    }
                }
                OpRecord::Reshape { x, .. } => {
                    sink.accumulate(*x, &gout);
                }
                OpRecord::Custom { inputs, backward, .. } => {
                    if inputs.iter().any(|id| tensors[id.index()].requires_grad) {
                        let view = ValueView { tensors };
                        backward(&view, &gout, &mut sink);
                    }
                }
            }
        }

        for (tensor, grad) in self.tensors.iter_mut().zip(grads) {
            if tensor.requires_grad {
                tensor.grad = grad;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
