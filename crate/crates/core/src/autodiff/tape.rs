//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the
//! information its backward rule needs. Nodes only ever reference earlier
//! nodes, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.

use super::tensor::{ncl, with_ncl, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of a train-mode batch norm, for running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: Var,
    },
    SliceTime {
        input: Var,
        start: usize,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid {
        input: Var,
    },
    Tanh {
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        input: Var,
        factor: f64,
    },
    ChannelScale {
        input: Var,
        weights: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        // Train mode differentiates through the batch statistics.
        batch_stats: bool,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    TimeStep {
        input: Var,
        t: usize,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv1d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Linear {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::ChannelScale { input, weights } => vec![*input, *weights],
            Op::MaxPool1d { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::SliceTime { input, .. }
            | Op::LeakyRelu { input, .. }
            | Op::Sigmoid { input }
            | Op::Tanh { input }
            | Op::Scale { input, .. }
            | Op::TimeStep { input, .. }
            | Op::Sum { input }
            | Op::Mean { input } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass. Rebuilt for every pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Output positions `to` in `[lo, hi)` whose tap `j` reads inside the input.
fn valid_range(
    t_in: usize,
    t_out: usize,
    stride: usize,
    padding: usize,
    j: usize,
) -> (usize, usize) {
    let lo = if padding > j {
        (padding - j).div_ceil(stride)
    } else {
        0
    };
    let hi = if t_in + padding > j {
        ((t_in - 1 + padding - j) / stride + 1).min(t_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], len: usize, var: Var) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// 1-D convolution over `[C_in, T]` or `[N, C_in, T]` with zero padding.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv1d stride must be at least 1".into(),
            ));
        }
        let x = self.value(input);
        let w = self.value(weight);
        let (n, c_in, t_in) = ncl("conv1d", x.shape())?;
        let &[c_out, w_in, k] = w.shape() else {
            return Err(Error::InvalidShape {
                shape: w.shape().to_vec(),
                reason: "conv1d weight must be [C_out, C_in, k]".into(),
            });
        };
        if w_in != c_in {
            return Err(Error::ChannelMismatch {
                op: "conv1d",
                expected: w_in,
                got: c_in,
            });
        }
        if let Some(b) = bias {
            let b = self.value(b);
            if b.numel() != c_out {
                return Err(Error::ShapeMismatch {
                    op: "conv1d bias",
                    expected: vec![c_out],
                    got: b.shape().to_vec(),
                });
            }
        }
        if t_in + 2 * padding < k {
            return Err(Error::InputTooShort {
                op: "conv1d",
                len: t_in,
            });
        }
        let t_out = (t_in + 2 * padding - k) / stride + 1;

        let xd = x.data();
        let wd = w.data();
        let mut out = vec![0.0; n * c_out * t_out];
        for b in 0..n {
            for co in 0..c_out {
                let row = &mut out[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                if let Some(bv) = bias {
                    row.fill(self.nodes[bv.0].value.data()[co]);
                }
                for ci in 0..c_in {
                    let xr = &xd[(b * c_in + ci) * t_in..(b * c_in + ci + 1) * t_in];
                    for j in 0..k {
                        let wv = wd[(co * c_in + ci) * k + j];
                        if wv == 0.0 {
                            continue;
                        }
                        let (lo, hi) = valid_range(t_in, t_out, stride, padding, j);
                        if lo >= hi {
                            continue;
                        }
                        let start = lo * stride + j - padding;
                        if stride == 1 {
                            let src = &xr[start..start + (hi - lo)];
                            for (o, &xv) in row[lo..hi].iter_mut().zip(src) {
                                *o += wv * xv;
                            }
                        } else {
                            for (o, &xv) in row[lo..hi]
                                .iter_mut()
                                .zip(xr[start..].iter().step_by(stride))
                            {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        let shape = with_ncl(x.shape(), n, c_out, t_out);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Non-overlapping max pooling along time; a trailing partial window is dropped.
    pub fn max_pool1d(&mut self, input: Var, window: usize) -> Result<Var> {
        if window == 0 {
            return Err(Error::InvalidArgument(
                "max_pool1d window must be at least 1".into(),
            ));
        }
        let x = self.value(input);
        let (n, c, t) = ncl("max_pool1d", x.shape())?;
        if t < window {
            return Err(Error::InputTooShort {
                op: "max_pool1d",
                len: t,
            });
        }
        let t_out = t / window;
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * t_out);
        let mut argmax = Vec::with_capacity(n * c * t_out);
        for row in 0..n * c {
            let base = row * t;
            for o in 0..t_out {
                let start = base + o * window;
                let mut best = start;
                for i in start + 1..start + window {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let shape = with_ncl(x.shape(), n, c, t_out);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool1d { input, argmax }))
    }

    /// Mean over time: `[.., C, T] -> [.., C, 1]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, t) = ncl("global_avg_pool", x.shape())?;
        let out: Vec<f64> = x
            .data()
            .chunks_exact(t)
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        let shape = with_ncl(x.shape(), n, c, 1);
        Ok(self.push(Tensor::new(shape, out)?, Op::GlobalAvgPool { input }))
    }

    /// Frames `start .. start + len` of every channel.
    pub fn slice_time(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, t) = ncl("slice_time", x.shape())?;
        if len == 0 || start + len > t {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} outside {t} frames",
                start + len
            )));
        }
        let out: Vec<f64> = x
            .data()
            .chunks_exact(t)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let shape = with_ncl(x.shape(), n, c, len);
        Ok(self.push(Tensor::new(shape, out)?, Op::SliceTime { input, start }))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let out = self
            .value(input)
            .map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu { input, slope })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(sigmoid);
        self.push(out, Op::Sigmoid { input })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let out = self.value(input).map(f64::tanh);
        self.push(out, Op::Tanh { input })
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(out, Op::Scale { input, factor })
    }

    /// `out[.., c, t] = f[.., c, t] * w[.., c]` with `w` shaped `[.., C, 1]`.
    pub fn channel_scale(&mut self, input: Var, weights: Var) -> Result<Var> {
        let f = self.value(input);
        let w = self.value(weights);
        let (n, c, t) = ncl("channel_scale", f.shape())?;
        let expected = with_ncl(f.shape(), n, c, 1);
        if w.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "channel_scale",
                expected,
                got: w.shape().to_vec(),
            });
        }
        let out: Vec<f64> = f
            .data()
            .chunks_exact(t)
            .zip(w.data())
            .flat_map(|(row, &wv)| row.iter().map(move |&v| v * wv))
            .collect();
        Ok(self.push(
            Tensor::new(f.shape().to_vec(), out)?,
            Op::ChannelScale { input, weights },
        ))
    }

    /// Batch normalization with statistics over batch and time.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let x = self.value(input);
        let (n, c, t) = ncl("batch_norm", x.shape())?;
        self.check_affine(gamma, beta, c)?;
        let count = n * t;
        if count < 2 {
            return Err(Error::DegenerateBatch { count });
        }
        let xd = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                mean[ch] += xd[(b * c + ch) * t..(b * c + ch + 1) * t]
                    .iter()
                    .sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..n {
            for ch in 0..c {
                var[ch] += xd[(b * c + ch) * t..(b * c + ch + 1) * t]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let var_out = self.normalize(input, gamma, beta, &mean, inv_std, true)?;
        Ok((var_out, BatchStats { mean, var, count }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, c, _) = ncl("batch_norm", self.shape(input))?;
        self.check_affine(gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::ChannelMismatch {
                op: "batch_norm running stats",
                expected: c,
                got: mean.len(),
            });
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.normalize(input, gamma, beta, mean, inv_std, false)
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        for v in [gamma, beta] {
            if self.value(v).numel() != c {
                return Err(Error::ChannelMismatch {
                    op: "batch_norm affine",
                    expected: c,
                    got: self.value(v).numel(),
                });
            }
        }
        Ok(())
    }

    fn normalize(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let x = self.value(input);
        let (_, c, t) = ncl("batch_norm", x.shape())?;
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = Vec::with_capacity(x.numel());
        let mut out = Vec::with_capacity(x.numel());
        for (r, row) in x.data().chunks_exact(t).enumerate() {
            let ch = r % c;
            for &v in row {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + be[ch]);
            }
        }
        let shape = x.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Fully connected map `[N, in] -> [N, out]` with weight `[out, in]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let &[n, d_in] = x.shape() else {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "linear input must be [N, in]".into(),
            });
        };
        let &[d_out, w_in] = w.shape() else {
            return Err(Error::InvalidShape {
                shape: w.shape().to_vec(),
                reason: "linear weight must be [out, in]".into(),
            });
        };
        if w_in != d_in {
            return Err(Error::ChannelMismatch {
                op: "linear",
                expected: w_in,
                got: d_in,
            });
        }
        let bias_data = match bias {
            Some(b) => {
                let b = self.value(b);
                if b.numel() != d_out {
                    return Err(Error::ShapeMismatch {
                        op: "linear bias",
                        expected: vec![d_out],
                        got: b.shape().to_vec(),
                    });
                }
                Some(b.data())
            }
            None => None,
        };
        let mut out = vec![0.0; n * d_out];
        for (xr, orow) in x.data().chunks_exact(d_in).zip(out.chunks_exact_mut(d_out)) {
            for (o, (slot, wr)) in orow.iter_mut().zip(w.data().chunks_exact(d_in)).enumerate() {
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                *slot = dot + bias_data.map_or(0.0, |b| b[o]);
            }
        }
        Ok(self.push(
            Tensor::new(vec![n, d_out], out)?,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Frame `t` of a feature map: `[.., C, T] -> [N, C]`.
    pub fn time_step(&mut self, input: Var, t: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, len) = ncl("time_step", x.shape())?;
        if t >= len {
            return Err(Error::InvalidArgument(format!(
                "time step {t} outside {len} frames"
            )));
        }
        let out: Vec<f64> = x.data().chunks_exact(len).map(|row| row[t]).collect();
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::TimeStep { input, t }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean { input })
    }

    /// Mean categorical cross-entropy of `[N, K]` logits, stabilized by max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let &[n, k] = z.shape() else {
            return Err(Error::InvalidShape {
                shape: z.shape().to_vec(),
                reason: "logits must be [N, K]".into(),
            });
        };
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (row, &label) in z.data().chunks_exact(k).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            loss += log_norm - row[label];
            probs.extend(row.iter().map(|v| (v - log_norm).exp()));
        }
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::TapeSpent);
        }
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss {
                shape: shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let numel = |v: &Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let x = &self.nodes[input.0].value;
                let w = &self.nodes[weight.0].value;
                let (n, c_in, t_in) = ncl("conv1d", x.shape()).expect("validated in forward");
                let (c_out, k) = (w.shape()[0], w.shape()[2]);
                let t_out = node.value.shape()[node.value.rank() - 1];
                let (stride, padding) = (*stride, *padding);
                if let Some(b) = bias.filter(needs) {
                    let gb = accumulate(grads, c_out, b);
                    for (r, row) in g.chunks_exact(t_out).enumerate() {
                        gb[r % c_out] += row.iter().sum::<f64>();
                    }
                }
                if needs(weight) {
                    let xd = x.data();
                    let gw = accumulate(grads, w.numel(), *weight);
                    for b in 0..n {
                        for co in 0..c_out {
                            let gr = &g[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                            for ci in 0..c_in {
                                let xr = &xd[(b * c_in + ci) * t_in..(b * c_in + ci + 1) * t_in];
                                for j in 0..k {
                                    let (lo, hi) = valid_range(t_in, t_out, stride, padding, j);
                                    if lo >= hi {
                                        continue;
                                    }
                                    let start = lo * stride + j - padding;
                                    let acc: f64 = gr[lo..hi]
                                        .iter()
                                        .zip(xr[start..].iter().step_by(stride))
                                        .map(|(a, b)| a * b)
                                        .sum();
                                    gw[(co * c_in + ci) * k + j] += acc;
                                }
                            }
                        }
                    }
                }
                if needs(input) {
                    let wd = w.data();
                    let gx = accumulate(grads, x.numel(), *input);
                    for b in 0..n {
                        for co in 0..c_out {
                            let gr = &g[(b * c_out + co) * t_out..(b * c_out + co + 1) * t_out];
                            for ci in 0..c_in {
                                let gxr =
                                    &mut gx[(b * c_in + ci) * t_in..(b * c_in + ci + 1) * t_in];
                                for j in 0..k {
                                    let wv = wd[(co * c_in + ci) * k + j];
                                    let (lo, hi) = valid_range(t_in, t_out, stride, padding, j);
                                    if lo >= hi || wv == 0.0 {
                                        continue;
                                    }
                                    let start = lo * stride + j - padding;
                                    if stride == 1 {
                                        for (o, &gv) in gxr[start..start + (hi - lo)]
                                            .iter_mut()
                                            .zip(&gr[lo..hi])
                                        {
                                            *o += wv * gv;
                                        }
                                    } else {
                                        for (o, &gv) in
                                            gxr[start..].iter_mut().step_by(stride).zip(&gr[lo..hi])
                                        {
                                            *o += wv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool1d { input, argmax } => {
                let gx = accumulate(grads, numel(input), *input);
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
            }
            Op::GlobalAvgPool { input } => {
                let x = &self.nodes[input.0].value;
                let t = x.shape()[x.rank() - 1];
                let gx = accumulate(grads, x.numel(), *input);
                for (row, &gv) in gx.chunks_exact_mut(t).zip(g) {
                    let share = gv / t as f64;
                    row.iter_mut().for_each(|v| *v += share);
                }
            }
            Op::SliceTime { input, start } => {
                let x = &self.nodes[input.0].value;
                let t = x.shape()[x.rank() - 1];
                let len = node.value.shape()[node.value.rank() - 1];
                let gx = accumulate(grads, x.numel(), *input);
                for (row, grow) in gx.chunks_exact_mut(t).zip(g.chunks_exact(len)) {
                    for (o, &gv) in row[*start..start + len].iter_mut().zip(grow) {
                        *o += gv;
                    }
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.nodes[input.0].value.data();
                let gx = accumulate(grads, x.len(), *input);
                for ((o, &xv), &gv) in gx.iter_mut().zip(x).zip(g) {
                    *o += if xv > 0.0 { gv } else { slope * gv };
                }
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let gx = accumulate(grads, y.len(), *input);
                for ((o, &yv), &gv) in gx.iter_mut().zip(y).zip(g) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh { input } => {
                let y = node.value.data();
                let gx = accumulate(grads, y.len(), *input);
                for ((o, &yv), &gv) in gx.iter_mut().zip(y).zip(g) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if needs(a) {
                    let ga = accumulate(grads, g.len(), *a);
                    ga.iter_mut().zip(g).for_each(|(o, &gv)| *o += gv);
                }
                if needs(b) {
                    let gb = accumulate(grads, g.len(), *b);
                    gb.iter_mut().zip(g).for_each(|(o, &gv)| *o += sign * gv);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                if needs(a) {
                    let ga = accumulate(grads, g.len(), *a);
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if needs(b) {
                    let gb = accumulate(grads, g.len(), *b);
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale { input, factor } => {
                let gx = accumulate(grads, g.len(), *input);
                gx.iter_mut().zip(g).for_each(|(o, &gv)| *o += factor * gv);
            }
            Op::ChannelScale { input, weights } => {
                let f = &self.nodes[input.0].value;
                let w = self.nodes[weights.0].value.data();
                let t = f.shape()[f.rank() - 1];
                if needs(input) {
                    let gf = accumulate(grads, g.len(), *input);
                    for ((row, grow), &wv) in gf.chunks_exact_mut(t).zip(g.chunks_exact(t)).zip(w) {
                        row.iter_mut().zip(grow).for_each(|(o, &gv)| *o += gv * wv);
                    }
                }
                if needs(weights) {
                    let gw = accumulate(grads, w.len(), *weights);
                    for ((o, frow), grow) in gw
                        .iter_mut()
                        .zip(f.data().chunks_exact(t))
                        .zip(g.chunks_exact(t))
                    {
                        *o += frow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, t) =
                    ncl("batch_norm", node.value.shape()).expect("validated in forward");
                let count = (n * t) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (r, (grow, hrow)) in g.chunks_exact(t).zip(xhat.chunks_exact(t)).enumerate() {
                    sum_g[r % c] += grow.iter().sum::<f64>();
                    sum_gx[r % c] += grow.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>();
                }
                if needs(gamma) {
                    let gg = accumulate(grads, c, *gamma);
                    gg.iter_mut().zip(&sum_gx).for_each(|(o, v)| *o += v);
                }
                if needs(beta) {
                    let gb = accumulate(grads, c, *beta);
                    gb.iter_mut().zip(&sum_g).for_each(|(o, v)| *o += v);
                }
                if needs(input) {
                    let gam = self.nodes[gamma.0].value.data();
                    let gx = accumulate(grads, g.len(), *input);
                    let rows = gx
                        .chunks_exact_mut(t)
                        .zip(g.chunks_exact(t))
                        .zip(xhat.chunks_exact(t));
                    for (r, ((orow, grow), hrow)) in rows.enumerate() {
                        let ch = r % c;
                        let scale = gam[ch] * inv_std[ch];
                        if *batch_stats {
                            let (mg, mgx) = (sum_g[ch] / count, sum_gx[ch] / count);
                            for ((o, &gv), &h) in orow.iter_mut().zip(grow).zip(hrow) {
                                *o += scale * (gv - mg - h * mgx);
                            }
                        } else {
                            orow.iter_mut()
                                .zip(grow)
                                .for_each(|(o, &gv)| *o += scale * gv);
                        }
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = &self.nodes[input.0].value;
                let w = &self.nodes[weight.0].value;
                let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
                if let Some(b) = bias.filter(needs) {
                    let gb = accumulate(grads, d_out, b);
                    for grow in g.chunks_exact(d_out) {
                        gb.iter_mut().zip(grow).for_each(|(o, v)| *o += v);
                    }
                }
                if needs(weight) {
                    let gw = accumulate(grads, w.numel(), *weight);
                    for (grow, xrow) in g.chunks_exact(d_out).zip(x.data().chunks_exact(d_in)) {
                        for (wrow, &gv) in gw.chunks_exact_mut(d_in).zip(grow) {
                            if gv != 0.0 {
                                wrow.iter_mut().zip(xrow).for_each(|(o, &xv)| *o += gv * xv);
                            }
                        }
                    }
                }
                if needs(input) {
                    let gx = accumulate(grads, x.numel(), *input);
                    for (grow, gxrow) in g.chunks_exact(d_out).zip(gx.chunks_exact_mut(d_in)) {
                        for (wrow, &gv) in w.data().chunks_exact(d_in).zip(grow) {
                            if gv != 0.0 {
                                gxrow
                                    .iter_mut()
                                    .zip(wrow)
                                    .for_each(|(o, &wv)| *o += gv * wv);
                            }
                        }
                    }
                }
            }
            Op::TimeStep { input, t } => {
                let x = &self.nodes[input.0].value;
                let len = x.shape()[x.rank() - 1];
                let gx = accumulate(grads, x.numel(), *input);
                for (row, &gv) in gx.chunks_exact_mut(len).zip(g) {
                    row[*t] += gv;
                }
            }
            Op::Sum { input } => {
                let gx = accumulate(grads, numel(input), *input);
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Mean { input } => {
                let len = numel(input);
                let gx = accumulate(grads, len, *input);
                let share = g[0] / len as f64;
                gx.iter_mut().for_each(|o| *o += share);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.nodes[logits.0].value.shape()[1];
                let n = labels.len() as f64;
                let gz = accumulate(grads, probs.len(), *logits);
                for ((row, prow), &label) in gz
                    .chunks_exact_mut(k)
                    .zip(probs.chunks_exact(k))
                    .zip(labels)
                {
                    for (j, (o, &p)) in row.iter_mut().zip(prow).enumerate() {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        *o += g[0] * (p - onehot) / n;
                    }
                }
            }
        }
    }

    /// Gradient of the last backward's loss with respect to `var`.
    ///
    /// Values the loss does not depend on get an all-zero gradient.
    pub fn grad(&self, var: Var) -> Result<Tensor> {
        let grads = self.grads.as_ref().ok_or(Error::NoGradients)?;
        let shape = self.shape(var).to_vec();
        match &grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(&shape)),
        }
    }

    /// Branch taken by every non-smooth op recorded so far: the sign of each
    /// LeakyReLU input and the argmax of each max-pool window. Two forward
    /// passes with equal patterns lie on the same smooth piece of the graph.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::MaxPool1d { argmax, .. } => pattern.extend_from_slice(argmax),
                Op::LeakyRelu { input, .. } => pattern.extend(
                    self.value(*input)
                        .data()
                        .iter()
                        .map(|&v| usize::from(v >= 0.0)),
                ),
                _ => {}
            }
        }
        pattern
    }

    pub fn is_spent(&self) -> bool {
        self.grads.is_some()
    }
}
