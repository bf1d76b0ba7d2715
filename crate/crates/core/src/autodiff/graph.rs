use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel running statistics maintained by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub enum BatchNormMode<'a, T> {
    /// Normalize with batch moments and fold them into `running` with `momentum`.
    Train {
        running: &'a mut RunningStats<T>,
        momentum: T,
    },
    /// Normalize with the stored running moments.
    Infer { running: &'a RunningStats<T> },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Abs {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Pad {
        input: Var,
        left: usize,
        right: usize,
    },
    Crop {
        input: Var,
        start: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Tape of executed operations. Nodes are appended in execution order, so every
/// node's inputs precede it and a reverse sweep is a valid topological order.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether a gradient is kept.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Hash of the branch taken at every piecewise-linear op (leaky ReLU and
    /// abs). Two evaluations with equal signatures lie on the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            let input = match node.op {
                Op::LeakyRelu { input, .. } | Op::Abs { input } => input,
                _ => continue,
            };
            for v in self.value(input).data() {
                (*v > T::zero(), *v < T::zero()).hash(&mut h);
            }
        }
        h.finish()
    }

    fn push_derived(&mut self, shape: &[usize], data: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        let track = inputs.iter().any(|v| self.value(*v).requires_grad());
        let value = Tensor::new(shape, data)
            .expect("op output shape")
            .with_requires_grad(track);
        self.push(value, op)
    }

    fn conv_geom(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        transposed: bool,
    ) -> Result<ConvGeom> {
        let (batch, cin, len_in) = self.value(input).dims3()?;
        let (w0, w1, kernel) = self.value(weight).dims3()?;
        if stride == 0 {
            return Err(Error::Usage("stride must be positive".into()));
        }
        let (wcin, cout) = if transposed { (w0, w1) } else { (w1, w0) };
        if wcin != cin {
            return Err(dim_err!("input has {cin} channels but weight expects {wcin}"));
        }
        if let Some(b) = bias {
            let n = self.value(b).dims1()?;
            if n != cout {
                return Err(dim_err!("bias has {n} entries for {cout} output channels"));
            }
        }
        let len_out = if transposed {
            let full = (len_in.saturating_sub(1)) * stride + kernel;
            if len_in == 0 || full <= 2 * padding {
                return Err(dim_err!("transposed conv output would be empty"));
            }
            full - 2 * padding
        } else {
            if len_in + 2 * padding < kernel {
                return Err(dim_err!(
                    "length {len_in} with padding {padding} shorter than kernel {kernel}"
                ));
            }
            (len_in + 2 * padding - kernel) / stride + 1
        };
        Ok(ConvGeom {
            batch,
            cin,
            cout,
            len_in,
            len_out,
            kernel,
            stride,
            padding,
        })
    }

    /// 1D cross-correlation. `weight` is `[Cout, Cin, K]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = self.conv_geom(input, weight, bias, stride, padding, false)?;
        let data = kernels::conv1d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let inputs: Vec<Var> = [Some(input), Some(weight), bias].into_iter().flatten().collect();
        Ok(self.push_derived(
            &[geom.batch, geom.cout, geom.len_out],
            data,
            &inputs,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Adjoint of [`Graph::conv1d`]. `weight` is `[Cin, Cout, K]`.
    pub fn conv_transpose1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = self.conv_geom(input, weight, bias, stride, padding, true)?;
        let data = kernels::conv_transpose1d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let inputs: Vec<Var> = [Some(input), Some(weight), bias].into_iter().flatten().collect();
        Ok(self.push_derived(
            &[geom.batch, geom.cout, geom.len_out],
            data,
            &inputs,
            Op::ConvTranspose1d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn batchnorm1d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        mode: BatchNormMode<'_, T>,
    ) -> Result<Var> {
        let (batch, channels, len) = self.value(input).dims3()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let n = self.value(v).dims1()?;
            if n != channels {
                return Err(dim_err!("{name} has {n} entries for {channels} channels"));
            }
        }
        let x = self.value(input).data();
        let count = T::from_usize_lossy(batch * len);
        let (mean, var, batch_stats) = match &mode {
            BatchNormMode::Train { .. } => {
                if batch * len == 0 {
                    return Err(dim_err!("batch norm over empty batch"));
                }
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut s = T::zero();
                    for b in 0..batch {
                        s += x[(b * channels + c) * len..][..len].iter().copied().sum::<T>();
                    }
                    let m = s / count;
                    let mut v = T::zero();
                    for b in 0..batch {
                        for &xv in &x[(b * channels + c) * len..][..len] {
                            v += (xv - m) * (xv - m);
                        }
                    }
                    mean[c] = m;
                    var[c] = v / count;
                }
                (mean, var, true)
            }
            BatchNormMode::Infer { running } => {
                if running.mean.len() != channels || running.var.len() != channels {
                    return Err(dim_err!("running stats do not match {channels} channels"));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * len;
                for i in off..off + len {
                    let xh = (x[i] - mean[c]) * inv_std[c];
                    normalized[i] = xh;
                    out[i] = g[c] * xh + bt[c];
                }
            }
        }
        if let BatchNormMode::Train { running, momentum } = mode {
            if running.mean.len() != channels || running.var.len() != channels {
                return Err(dim_err!("running stats do not match {channels} channels"));
            }
            let keep = T::one() - momentum;
            for c in 0..channels {
                running.mean[c] = keep * running.mean[c] + momentum * mean[c];
                running.var[c] = keep * running.var[c] + momentum * var[c];
            }
        }
        Ok(self.push_derived(
            &[batch, channels, len],
            out,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let t = self.value(input);
        let data = t
            .data()
            .iter()
            .map(|&x| if x >= T::zero() { x } else { slope * x })
            .collect();
        let shape = t.shape().to_vec();
        self.push_derived(&shape, data, &[input], Op::LeakyRelu { input, slope })
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, la) = self.value(a).dims3()?;
        let (bb, cb, lb) = self.value(b).dims3()?;
        if ba != bb || la != lb {
            return Err(dim_err!("cannot concat [{ba},{ca},{la}] with [{bb},{cb},{lb}]"));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(xa.len() + xb.len());
        for bi in 0..ba {
            data.extend_from_slice(&xa[bi * ca * la..(bi + 1) * ca * la]);
            data.extend_from_slice(&xb[bi * cb * lb..(bi + 1) * cb * lb]);
        }
        Ok(self.push_derived(&[ba, ca + cb, la], data, &[a, b], Op::Concat { a, b }))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(dim_err!("shape mismatch {:?} vs {:?}", sa, sb));
        }
        Ok(sa.to_vec())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b)?;
        let data = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push_derived(&shape, data, &[a, b], Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b)?;
        let data = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push_derived(&shape, data, &[a, b], Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b)?;
        let data = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push_derived(&shape, data, &[a, b], Op::Mul { a, b }))
    }

    /// Elementwise magnitude; the subgradient at zero is zero.
    pub fn abs(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|x| x.abs()).collect();
        let shape = t.shape().to_vec();
        self.push_derived(&shape, data, &[input], Op::Abs { input })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum::<T>();
        self.push_derived(&[], vec![s], &[input], Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.numel() == 0 {
            return Err(dim_err!("mean of empty tensor"));
        }
        let m = t.data().iter().copied().sum::<T>() / T::from_usize_lossy(t.numel());
        Ok(self.push_derived(&[], vec![m], &[input], Op::Mean { input }))
    }

    /// Zero-pads the length axis of a rank-3 tensor.
    pub fn pad_length(&mut self, input: Var, left: usize, right: usize) -> Result<Var> {
        let (b, c, l) = self.value(input).dims3()?;
        let lout = l + left + right;
        let x = self.value(input).data();
        let mut data = vec![T::zero(); b * c * lout];
        for row in 0..b * c {
            data[row * lout + left..row * lout + left + l].copy_from_slice(&x[row * l..(row + 1) * l]);
        }
        Ok(self.push_derived(&[b, c, lout], data, &[input], Op::Pad { input, left, right }))
    }

    /// Keeps `start..start + len` along the length axis of a rank-3 tensor.
    pub fn crop_length(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, l) = self.value(input).dims3()?;
        if start + len > l {
            return Err(dim_err!("crop {start}..{} exceeds length {l}", start + len));
        }
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(b * c * len);
        for row in 0..b * c {
            data.extend_from_slice(&x[row * l + start..row * l + start + len]);
        }
        Ok(self.push_derived(&[b, c, len], data, &[input], Op::Crop { input, start }))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added to whatever the
    /// tracked nodes already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.value(loss).requires_grad() {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.nodes[i].value.accumulate_grad(&gy);
            self.propagate(i, &gy, &mut grads);
        }
        Ok(())
    }

    fn tracks(&self, v: Var) -> bool {
        self.value(v).requires_grad()
    }

    fn propagate(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let add_into = |grads: &mut [Option<Vec<T>>], v: Var, f: &dyn Fn(&mut [T])| {
            if self.tracks(v) {
                let n = self.value(v).numel();
                f(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]));
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            }
            | Op::ConvTranspose1d {
                input,
                weight,
                bias,
                geom,
            } => {
                let transposed = matches!(self.nodes[i].op, Op::ConvTranspose1d { .. });
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let backward = if transposed {
                    kernels::conv_transpose1d_backward::<T>
                } else {
                    kernels::conv1d_backward::<T>
                };
                add_into(grads, *input, &|gx| backward(geom, x, w, gy, Some(gx), None, None));
                add_into(grads, *weight, &|gw| backward(geom, x, w, gy, None, Some(gw), None));
                if let Some(b) = bias {
                    add_into(grads, *b, &|gb| backward(geom, x, w, gy, None, None, Some(gb)));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let (batch, channels, len) = self.value(*input).dims3().expect("rank 3");
                let g = self.value(*gamma).data();
                let count = T::from_usize_lossy(batch * len);
                let rows = |c: usize| (0..batch).map(move |b| (b * channels + c) * len);
                add_into(grads, *gamma, &|gg| {
                    for (c, acc) in gg.iter_mut().enumerate() {
                        for off in rows(c) {
                            for j in off..off + len {
                                *acc += gy[j] * normalized[j];
                            }
                        }
                    }
                });
                add_into(grads, *beta, &|gb| {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        for off in rows(c) {
                            *acc += gy[off..off + len].iter().copied().sum::<T>();
                        }
                    }
                });
                add_into(grads, *input, &|gx| {
                    for c in 0..channels {
                        let scale = g[c] * inv_std[c];
                        if *batch_stats {
                            let mut sum_g = T::zero();
                            let mut sum_gx = T::zero();
                            for off in rows(c) {
                                for j in off..off + len {
                                    sum_g += gy[j];
                                    sum_gx += gy[j] * normalized[j];
                                }
                            }
                            let mg = sum_g / count;
                            let mgx = sum_gx / count;
                            for off in rows(c) {
                                for j in off..off + len {
                                    gx[j] += scale * (gy[j] - mg - normalized[j] * mgx);
                                }
                            }
                        } else {
                            for off in rows(c) {
                                for j in off..off + len {
                                    gx[j] += scale * gy[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                add_into(grads, *input, &|gx| {
                    for ((acc, &xv), &g) in gx.iter_mut().zip(x).zip(gy) {
                        *acc += if xv >= T::zero() { g } else { *slope * g };
                    }
                });
            }
            Op::Concat { a, b } => {
                let (batch, ca, len) = self.value(*a).dims3().expect("rank 3");
                let cb = self.value(*b).dims3().expect("rank 3").1;
                let row = (ca + cb) * len;
                add_into(grads, *a, &|ga| {
                    for bi in 0..batch {
                        for (acc, g) in ga[bi * ca * len..(bi + 1) * ca * len]
                            .iter_mut()
                            .zip(&gy[bi * row..bi * row + ca * len])
                        {
                            *acc += *g;
                        }
                    }
                });
                add_into(grads, *b, &|gb| {
                    for bi in 0..batch {
                        for (acc, g) in gb[bi * cb * len..(bi + 1) * cb * len]
                            .iter_mut()
                            .zip(&gy[bi * row + ca * len..(bi + 1) * row])
                        {
                            *acc += *g;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                add_into(grads, *a, &|ga| axpy(ga, gy, T::one()));
                add_into(grads, *b, &|gb| axpy(gb, gy, T::one()));
            }
            Op::Sub { a, b } => {
                add_into(grads, *a, &|ga| axpy(ga, gy, T::one()));
                add_into(grads, *b, &|gb| axpy(gb, gy, -T::one()));
            }
            Op::Mul { a, b } => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                add_into(grads, *a, &|ga| {
                    for ((acc, &g), &y) in ga.iter_mut().zip(gy).zip(xb) {
                        *acc += g * y;
                    }
                });
                add_into(grads, *b, &|gb| {
                    for ((acc, &g), &x) in gb.iter_mut().zip(gy).zip(xa) {
                        *acc += g * x;
                    }
                });
            }
            Op::Abs { input } => {
                let x = self.value(*input).data();
                add_into(grads, *input, &|gx| {
                    for ((acc, &g), &xv) in gx.iter_mut().zip(gy).zip(x) {
                        if xv > T::zero() {
                            *acc += g;
                        } else if xv < T::zero() {
                            *acc -= g;
                        }
                    }
                });
            }
            Op::Sum { input } => {
                add_into(grads, *input, &|gx| gx.iter_mut().for_each(|v| *v += gy[0]));
            }
            Op::Mean { input } => {
                let n = T::from_usize_lossy(self.value(*input).numel());
                add_into(grads, *input, &|gx| gx.iter_mut().for_each(|v| *v += gy[0] / n));
            }
            Op::Pad { input, left, right } => {
                let (b, c, l) = self.value(*input).dims3().expect("rank 3");
                let lout = l + left + right;
                add_into(grads, *input, &|gx| {
                    for row in 0..b * c {
                        axpy(
                            &mut gx[row * l..(row + 1) * l],
                            &gy[row * lout + left..row * lout + left + l],
                            T::one(),
                        );
                    }
                });
            }
            Op::Crop { input, start } => {
                let (b, c, l) = self.value(*input).dims3().expect("rank 3");
                let len = self.nodes[i].value.shape()[2];
                add_into(grads, *input, &|gx| {
                    for row in 0..b * c {
                        axpy(
                            &mut gx[row * l + start..row * l + start + len],
                            &gy[row * len..(row + 1) * len],
                            T::one(),
                        );
                    }
                });
            }
        }
    }
}

fn axpy<T: Scalar>(acc: &mut [T], x: &[T], alpha: T) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * *v;
    }
}
