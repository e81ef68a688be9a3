use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Forward-pass mode. Train mode consumes RNG for dropout and uses batch
/// statistics in batch norm; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Exponential-moving-average statistics owned by a batch-norm layer.
#[derive(Clone, Debug)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        pad: usize,
    },
    MaxPool2 {
        input: usize,
        argmax: Vec<u32>,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        // Train mode differentiates through the batch statistics.
        batch_stats: bool,
    },
    Relu {
        input: usize,
    },
    Dropout {
        input: usize,
        // 0 for dropped elements, 1/(1-p) for survivors.
        mask: Vec<f64>,
    },
    GlobalAvgPool {
        input: usize,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: usize,
    },
    WeightedCrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        sample_weights: Vec<f64>,
        softmax: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode differentiation tape. One tape records one forward pass;
/// `backward` walks it in reverse and accumulates gradients into every
/// node that requires them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(id)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(
                "operation produced a non-finite value".into(),
            ));
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(id))
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// 3x3 cross-correlation with stride 1. `pad=1` preserves spatial size,
    /// `pad=0` shrinks it by two.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, pad: usize) -> Result<Var> {
        if pad > 1 {
            return Err(Error::Config(format!("conv2d pad must be 0 or 1, got {pad}")));
        }
        let (n, c, h, w) = self.value(input).dims4()?;
        let kshape = self.value(kernel).shape().to_vec();
        let (f, kc, kh, kw) = match kshape.as_slice() {
            &[f, kc, kh, kw] => (f, kc, kh, kw),
            other => {
                return Err(Error::Shape(format!(
                    "conv2d kernel must be 4-D, got {other:?}"
                )))
            }
        };
        if kh != 3 || kw != 3 {
            return Err(Error::Shape(format!(
                "conv2d kernel spatial size must be 3x3, got {kh}x{kw}"
            )));
        }
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {c}, kernel expects {kc}"
            )));
        }
        if self.value(bias).shape() != [f] {
            return Err(Error::Shape(format!(
                "conv2d bias must be [{f}], got {:?}",
                self.value(bias).shape()
            )));
        }
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        if oh < 3 || ow < 3 {
            return Err(Error::Shape(format!(
                "conv2d input {h}x{w} too small for a 3x3 kernel with pad {pad}"
            )));
        }
        let (oh, ow) = (oh - 2, ow - 2);

        let mut out = vec![0.0; n * f * oh * ow];
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            let b = self.value(bias).data();
            for im in 0..n {
                for of in 0..f {
                    let obase = (im * f + of) * oh * ow;
                    out[obase..obase + oh * ow].fill(b[of]);
                    for ic in 0..c {
                        let ibase = (im * c + ic) * h * w;
                        let kbase = (of * c + ic) * 9;
                        for ky in 0..3 {
                            let sy = ky as isize - pad as isize;
                            let oy0 = (-sy).max(0) as usize;
                            let oy1 = (h as isize - sy).clamp(0, oh as isize) as usize;
                            for kx in 0..3 {
                                let wgt = k[kbase + ky * 3 + kx];
                                let sx = kx as isize - pad as isize;
                                let ox0 = (-sx).max(0) as usize;
                                let ox1 = (w as isize - sx).clamp(0, ow as isize) as usize;
                                if ox0 >= ox1 {
                                    continue;
                                }
                                for oy in oy0..oy1 {
                                    let iy = (oy as isize + sy) as usize;
                                    let irow = ibase + iy * w + (ox0 as isize + sx) as usize;
                                    let orow = obase + oy * ow + ox0;
                                    let len = ox1 - ox0;
                                    let src = &x[irow..irow + len];
                                    let dst = &mut out[orow..orow + len];
                                    for (d, s) in dst.iter_mut().zip(src) {
                                        *d += wgt * s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let requires = self.requires(input) || self.requires(kernel) || self.requires(bias);
        self.push(
            Tensor::new(vec![n, f, oh, ow], out)?,
            requires,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                pad,
            },
        )
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    /// Backward routes to the first maximal element of each window in
    /// row-major order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!(
                "maxpool2 needs at least 2x2 input, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        {
            let x = self.value(input).data();
            for plane in 0..n * c {
                let ibase = plane * h * w;
                let obase = plane * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let top = ibase + (2 * oy) * w + 2 * ox;
                        let candidates = [top, top + 1, top + w, top + w + 1];
                        let mut best = candidates[0];
                        for &cand in &candidates[1..] {
                            if x[cand] > x[best] {
                                best = cand;
                            }
                        }
                        out[obase + oy * ow + ox] = x[best];
                        argmax[obase + oy * ow + ox] = best as u32;
                    }
                }
            }
        }
        let requires = self.requires(input);
        self.push(
            Tensor::new(vec![n, c, oh, ow], out)?,
            requires,
            Op::MaxPool2 {
                input: input.0,
                argmax,
            },
        )
    }

    /// Per-channel batch normalization. Train mode normalizes by batch
    /// statistics (population variance) and folds them into `running` with
    /// EMA factor `momentum`; eval mode normalizes by `running`.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: Mode,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::Shape(format!(
                "batchnorm gamma/beta must be [{c}], got {:?}/{:?}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        if running.mean.len() != c {
            return Err(Error::Shape(format!(
                "batchnorm running stats have {} channels, input has {c}",
                running.mean.len()
            )));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::Config(
                "batchnorm in train mode needs a batch of at least 2".into(),
            ));
        }

        let plane = h * w;
        let m = (n * plane) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let x = self.value(input).data();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ic in 0..c {
                    let mut sum = 0.0;
                    for im in 0..n {
                        let base = (im * c + ic) * plane;
                        sum += x[base..base + plane].iter().sum::<f64>();
                    }
                    let mu = sum / m;
                    let mut sq = 0.0;
                    for im in 0..n {
                        let base = (im * c + ic) * plane;
                        sq += x[base..base + plane]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ic] = mu;
                    var[ic] = sq / m;
                }
                for ic in 0..c {
                    running.mean[ic] = (1.0 - momentum) * running.mean[ic] + momentum * mean[ic];
                    running.var[ic] = (1.0 - momentum) * running.var[ic] + momentum * var[ic];
                }
                (mean, var)
            }
            Mode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut out = vec![0.0; n * c * plane];
        {
            let x = self.value(input).data();
            let g = self.value(gamma).data();
            let b = self.value(beta).data();
            for im in 0..n {
                for ic in 0..c {
                    let base = (im * c + ic) * plane;
                    let scale = g[ic] * inv_std[ic];
                    let shift = b[ic] - mean[ic] * scale;
                    for (o, v) in out[base..base + plane].iter_mut().zip(&x[base..base + plane]) {
                        *o = v * scale + shift;
                    }
                }
            }
        }
        let requires = self.requires(input) || self.requires(gamma) || self.requires(beta);
        self.push(
            Tensor::new(vec![n, c, h, w], out)?,
            requires,
            Op::BatchNorm {
                input: input.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(input).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(input);
        self.push(Tensor::new(shape, out)?, requires, Op::Relu { input: input.0 })
    }

    /// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the
    /// identity. Eval mode (and p = 0) consumes no RNG and adds no node.
    pub fn dropout<R: Rng>(
        &mut self,
        input: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0,1), got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(input).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let out: Vec<f64> = self
            .value(input)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(input);
        self.push(
            Tensor::new(shape, out)?,
            requires,
            Op::Dropout {
                input: input.0,
                mask,
            },
        )
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let plane = h * w;
        let mut out = vec![0.0; n * c];
        {
            let x = self.value(input).data();
            for (i, o) in out.iter_mut().enumerate() {
                let base = i * plane;
                *o = x[base..base + plane].iter().sum::<f64>() / plane as f64;
            }
        }
        let requires = self.requires(input);
        self.push(
            Tensor::new(vec![n, c], out)?,
            requires,
            Op::GlobalAvgPool { input: input.0 },
        )
    }

    /// Fully connected layer: `y = x W^T + b` with `x [N,D]`, `W [O,D]`,
    /// `b [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.value(input).dims2()?;
        let (o, wd) = self.value(weight).dims2()?;
        if wd != d {
            return Err(Error::Shape(format!(
                "linear expects weight [O,{d}], got [{o},{wd}]"
            )));
        }
        if self.value(bias).shape() != [o] {
            return Err(Error::Shape(format!(
                "linear bias must be [{o}], got {:?}",
                self.value(bias).shape()
            )));
        }
        let mut out = vec![0.0; n * o];
        {
            let x = self.value(input).data();
            let w = self.value(weight).data();
            let b = self.value(bias).data();
            for im in 0..n {
                let xrow = &x[im * d..(im + 1) * d];
                for io in 0..o {
                    let wrow = &w[io * d..(io + 1) * d];
                    let mut acc = b[io];
                    for (xv, wv) in xrow.iter().zip(wrow) {
                        acc += xv * wv;
                    }
                    out[im * o + io] = acc;
                }
            }
        }
        let requires = self.requires(input) || self.requires(weight) || self.requires(bias);
        self.push(
            Tensor::new(vec![n, o], out)?,
            requires,
            Op::Linear {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
            },
        )
    }

    /// Class-weighted cross entropy over logits `[N,C]`, reduced as a
    /// weighted mean: `sum_i w_{y_i} * nll_i / sum_i w_{y_i}`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: &[f64],
    ) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(Error::Usage(format!(
                "{} targets for a batch of {n}",
                targets.len()
            )));
        }
        if class_weights.len() != c {
            return Err(Error::Usage(format!(
                "{} class weights for {c} classes",
                class_weights.len()
            )));
        }
        if class_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config(
                "class weights must be strictly positive".into(),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Usage(format!("target class {t} out of range 0..{c}")));
        }
        if !self.value(logits).all_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }

        let mut softmax = vec![0.0; n * c];
        let mut loss_num = 0.0;
        let mut weight_sum = 0.0;
        let mut sample_weights = vec![0.0; n];
        {
            let z = self.value(logits).data();
            for im in 0..n {
                let row = &z[im * c..(im + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum_exp = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    softmax[im * c + j] = e;
                    sum_exp += e;
                }
                for j in 0..c {
                    softmax[im * c + j] /= sum_exp;
                }
                let log_p = row[targets[im]] - max - sum_exp.ln();
                let w = class_weights[targets[im]];
                sample_weights[im] = w;
                loss_num += w * (-log_p);
                weight_sum += w;
            }
        }
        let loss = loss_num / weight_sum;
        let requires = self.requires(logits);
        self.push(
            Tensor::scalar(loss),
            requires,
            Op::WeightedCrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                sample_weights,
                softmax,
            },
        )
    }

    fn add_grad(&mut self, node: usize, delta: &[f64]) {
        if !self.nodes[node].requires_grad {
            return;
        }
        let numel = self.nodes[node].value.numel();
        let grad = self.nodes[node].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn take_grad_buffer(&mut self, node: usize) -> Vec<f64> {
        let numel = self.nodes[node].value.numel();
        if self.nodes[node].requires_grad && self.nodes[node].grad.is_none() {
            self.nodes[node].grad = Some(vec![0.0; numel]);
        }
        self.nodes[node].grad.take().unwrap_or_else(|| vec![0.0; numel])
    }

    /// Accumulates `d loss / d node` into every node that requires a
    /// gradient. `loss` must be a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage("backward requires a scalar loss".into()));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Reverse pass seeded with an explicit cotangent on `out`, i.e. a
    /// vector-Jacobian product.
    pub fn backward_from(&mut self, out: Var, cotangent: &[f64]) -> Result<()> {
        if cotangent.len() != self.nodes[out.0].value.numel() {
            return Err(Error::Shape(format!(
                "cotangent has {} elements, output has {}",
                cotangent.len(),
                self.nodes[out.0].value.numel()
            )));
        }
        self.nodes[out.0].grad = Some(cotangent.to_vec());

        for id in (0..=out.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[id].grad.take() else {
                continue;
            };
            match std::mem::replace(&mut self.nodes[id].op, Op::Leaf) {
                Op::Leaf => {
                    self.nodes[id].grad = Some(grad);
                    continue;
                }
                op => {
                    self.backward_op(&op, id, &grad)?;
                    self.nodes[id].op = op;
                    self.nodes[id].grad = Some(grad);
                }
            }
        }

        for node in &self.nodes {
            if let Some(g) = &node.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite gradient".into()));
                }
            }
        }
        Ok(())
    }

    fn backward_op(&mut self, op: &Op, id: usize, grad: &[f64]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                pad,
            } => self.backward_conv2d(*input, *kernel, *bias, *pad, id, grad),
            Op::MaxPool2 { input, argmax } => {
                if self.nodes[*input].requires_grad {
                    let mut din = self.take_grad_buffer(*input);
                    for (g, &a) in grad.iter().zip(argmax) {
                        din[a as usize] += g;
                    }
                    self.nodes[*input].grad = Some(din);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => self.backward_batchnorm(*input, *gamma, *beta, mean, inv_std, *batch_stats, grad),
            Op::Relu { input } => {
                if self.nodes[*input].requires_grad {
                    let din: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[*input].value.data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.add_grad(*input, &din);
                }
            }
            Op::Dropout { input, mask } => {
                if self.nodes[*input].requires_grad {
                    let din: Vec<f64> = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
                    self.add_grad(*input, &din);
                }
            }
            Op::GlobalAvgPool { input } => {
                if self.nodes[*input].requires_grad {
                    let (_, _, h, w) = self.nodes[*input].value.dims4()?;
                    let plane = h * w;
                    let mut din = self.take_grad_buffer(*input);
                    for (i, g) in grad.iter().enumerate() {
                        let share = g / plane as f64;
                        for v in &mut din[i * plane..(i + 1) * plane] {
                            *v += share;
                        }
                    }
                    self.nodes[*input].grad = Some(din);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => self.backward_linear(*input, *weight, *bias, grad)?,
            Op::WeightedCrossEntropy {
                logits,
                targets,
                sample_weights,
                softmax,
            } => {
                if self.nodes[*logits].requires_grad {
                    let c = self.nodes[*logits].value.shape()[1];
                    let total: f64 = sample_weights.iter().sum();
                    let upstream = grad[0];
                    let mut din = vec![0.0; softmax.len()];
                    for (im, (&target, &w)) in targets.iter().zip(sample_weights).enumerate() {
                        let scale = upstream * w / total;
                        for j in 0..c {
                            let indicator = if j == target { 1.0 } else { 0.0 };
                            din[im * c + j] = scale * (softmax[im * c + j] - indicator);
                        }
                    }
                    self.add_grad(*logits, &din);
                }
            }
        }
        Ok(())
    }

    fn backward_conv2d(
        &mut self,
        input: usize,
        kernel: usize,
        bias: usize,
        pad: usize,
        out_id: usize,
        grad: &[f64],
    ) {
        let (n, c, h, w) = self.nodes[input].value.dims4().expect("checked in forward");
        let f = self.nodes[kernel].value.shape()[0];
        let (oh, ow) = (h + 2 * pad - 2, w + 2 * pad - 2);
        debug_assert_eq!(self.nodes[out_id].value.shape(), [n, f, oh, ow]);

        if self.nodes[bias].requires_grad {
            let mut db = self.take_grad_buffer(bias);
            for im in 0..n {
                for of in 0..f {
                    let obase = (im * f + of) * oh * ow;
                    db[of] += grad[obase..obase + oh * ow].iter().sum::<f64>();
                }
            }
            self.nodes[bias].grad = Some(db);
        }

        if self.nodes[kernel].requires_grad {
            let mut dk = self.take_grad_buffer(kernel);
            let x = self.nodes[input].value.data();
            for im in 0..n {
                for of in 0..f {
                    let obase = (im * f + of) * oh * ow;
                    for ic in 0..c {
                        let ibase = (im * c + ic) * h * w;
                        let kbase = (of * c + ic) * 9;
                        for ky in 0..3 {
                            let sy = ky as isize - pad as isize;
                            let oy0 = (-sy).max(0) as usize;
                            let oy1 = (h as isize - sy).clamp(0, oh as isize) as usize;
                            for kx in 0..3 {
                                let sx = kx as isize - pad as isize;
                                let ox0 = (-sx).max(0) as usize;
                                let ox1 = (w as isize - sx).clamp(0, ow as isize) as usize;
                                if ox0 >= ox1 {
                                    continue;
                                }
                                let mut acc = 0.0;
                                for oy in oy0..oy1 {
                                    let iy = (oy as isize + sy) as usize;
                                    let irow = ibase + iy * w + (ox0 as isize + sx) as usize;
                                    let orow = obase + oy * ow + ox0;
                                    let len = ox1 - ox0;
                                    for (xv, gv) in
                                        x[irow..irow + len].iter().zip(&grad[orow..orow + len])
                                    {
                                        acc += xv * gv;
                                    }
                                }
                                dk[kbase + ky * 3 + kx] += acc;
                            }
                        }
                    }
                }
            }
            self.nodes[kernel].grad = Some(dk);
        }

        if self.nodes[input].requires_grad {
            let mut din = self.take_grad_buffer(input);
            let k = self.nodes[kernel].value.data();
            for im in 0..n {
                for of in 0..f {
                    let obase = (im * f + of) * oh * ow;
                    for ic in 0..c {
                        let ibase = (im * c + ic) * h * w;
                        let kbase = (of * c + ic) * 9;
                        for ky in 0..3 {
                            let sy = ky as isize - pad as isize;
                            let oy0 = (-sy).max(0) as usize;
                            let oy1 = (h as isize - sy).clamp(0, oh as isize) as usize;
                            for kx in 0..3 {
                                let wgt = k[kbase + ky * 3 + kx];
                                let sx = kx as isize - pad as isize;
                                let ox0 = (-sx).max(0) as usize;
                                let ox1 = (w as isize - sx).clamp(0, ow as isize) as usize;
                                if ox0 >= ox1 {
                                    continue;
                                }
                                for oy in oy0..oy1 {
                                    let iy = (oy as isize + sy) as usize;
                                    let irow = ibase + iy * w + (ox0 as isize + sx) as usize;
                                    let orow = obase + oy * ow + ox0;
                                    let len = ox1 - ox0;
                                    for (dv, gv) in din[irow..irow + len]
                                        .iter_mut()
                                        .zip(&grad[orow..orow + len])
                                    {
                                        *dv += wgt * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.nodes[input].grad = Some(din);
        }
    }

    fn backward_batchnorm(
        &mut self,
        input: usize,
        gamma: usize,
        beta: usize,
        mean: &[f64],
        inv_std: &[f64],
        batch_stats: bool,
        grad: &[f64],
    ) {
        let (n, c, h, w) = self.nodes[input].value.dims4().expect("checked in forward");
        let plane = h * w;
        let m = (n * plane) as f64;
        let gamma_vals = self.nodes[gamma].value.data().to_vec();

        // Per-channel reductions shared by all three gradients.
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        {
            let x = self.nodes[input].value.data();
            for im in 0..n {
                for ic in 0..c {
                    let base = (im * c + ic) * plane;
                    let mut s = 0.0;
                    let mut sx = 0.0;
                    for (dy, xv) in grad[base..base + plane].iter().zip(&x[base..base + plane]) {
                        s += dy;
                        sx += dy * (xv - mean[ic]) * inv_std[ic];
                    }
                    sum_dy[ic] += s;
                    sum_dy_xhat[ic] += sx;
                }
            }
        }

        if self.nodes[beta].requires_grad {
            let mut db = self.take_grad_buffer(beta);
            for ic in 0..c {
                db[ic] += sum_dy[ic];
            }
            self.nodes[beta].grad = Some(db);
        }
        if self.nodes[gamma].requires_grad {
            let mut dg = self.take_grad_buffer(gamma);
            for ic in 0..c {
                dg[ic] += sum_dy_xhat[ic];
            }
            self.nodes[gamma].grad = Some(dg);
        }
        if self.nodes[input].requires_grad {
            let mut din = self.take_grad_buffer(input);
            let x = self.nodes[input].value.data();
            for im in 0..n {
                for ic in 0..c {
                    let base = (im * c + ic) * plane;
                    let scale = gamma_vals[ic] * inv_std[ic];
                    if batch_stats {
                        for j in base..base + plane {
                            let xhat = (x[j] - mean[ic]) * inv_std[ic];
                            din[j] += scale
                                * (grad[j] - sum_dy[ic] / m - xhat * sum_dy_xhat[ic] / m);
                        }
                    } else {
                        for j in base..base + plane {
                            din[j] += scale * grad[j];
                        }
                    }
                }
            }
            self.nodes[input].grad = Some(din);
        }
    }

    fn backward_linear(
        &mut self,
        input: usize,
        weight: usize,
        bias: usize,
        grad: &[f64],
    ) -> Result<()> {
        let (n, d) = self.nodes[input].value.dims2()?;
        let o = self.nodes[weight].value.shape()[0];

        if self.nodes[bias].requires_grad {
            let mut db = self.take_grad_buffer(bias);
            for im in 0..n {
                for io in 0..o {
                    db[io] += grad[im * o + io];
                }
            }
            self.nodes[bias].grad = Some(db);
        }
        if self.nodes[weight].requires_grad {
            let mut dw = self.take_grad_buffer(weight);
            let x = self.nodes[input].value.data();
            for im in 0..n {
                let xrow = &x[im * d..(im + 1) * d];
                for io in 0..o {
                    let gv = grad[im * o + io];
                    for (dwv, xv) in dw[io * d..(io + 1) * d].iter_mut().zip(xrow) {
                        *dwv += gv * xv;
                    }
                }
            }
            self.nodes[weight].grad = Some(dw);
        }
        if self.nodes[input].requires_grad {
            let mut din = self.take_grad_buffer(input);
            let w = self.nodes[weight].value.data();
            for im in 0..n {
                for io in 0..o {
                    let gv = grad[im * o + io];
                    for (dv, wv) in din[im * d..(im + 1) * d]
                        .iter_mut()
                        .zip(&w[io * d..(io + 1) * d])
                    {
                        *dv += gv * wv;
                    }
                }
            }
            self.nodes[input].grad = Some(din);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Central finite differences of a scalar function.
    fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + step;
            let fp = f(&probe);
            probe[i] = x[i] - step;
            let fm = f(&probe);
            probe[i] = x[i];
            grad[i] = (fp - fm) / (2.0 * step);
        }
        grad
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_zero_input_gives_zero_output() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 3, 3]), false);
        let k = tape.leaf(
            Tensor::new(vec![1, 1, 3, 3], random_vec(&mut rng(1), 9)).unwrap(),
            false,
        );
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        let y = tape.conv2d(x, k, b, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let mut tape = Tape::new();
        let data = random_vec(&mut rng(2), 2 * 1 * 5 * 4);
        let x = tape.leaf(Tensor::new(vec![2, 1, 5, 4], data.clone()).unwrap(), false);
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0; // center tap
        let k = tape.leaf(Tensor::new(vec![1, 1, 3, 3], kernel).unwrap(), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        let y = tape.conv2d(x, k, b, 1).unwrap();
        assert_eq!(tape.value(y).shape(), [2, 1, 5, 4]);
        for (a, b) in tape.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_all_ones_sums_nine_taps() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0), false);
        let k = tape.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        let y = tape.conv2d(x, k, b, 0).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 1, 1, 1]);
        assert!((tape.value(y).data()[0] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 4, 4]), false);
        let k = tape.leaf(Tensor::zeros(vec![1, 3, 3, 3]), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        assert!(matches!(tape.conv2d(x, k, b, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..3u64 {
            let mut r = rng(100 + seed);
            let (n, c, f, h, w) = (2, 2, 3, 5, 4);
            let x0 = random_vec(&mut r, n * c * h * w);
            let k0 = random_vec(&mut r, f * c * 9);
            let b0 = random_vec(&mut r, f);
            for pad in [0usize, 1] {
                let oh = h + 2 * pad - 2;
                let ow = w + 2 * pad - 2;
                let cot = random_vec(&mut r, n * f * oh * ow);

                let fwd = |xv: &[f64], kv: &[f64], bv: &[f64]| -> f64 {
                    let mut t = Tape::new();
                    let x = t.leaf(Tensor::new(vec![n, c, h, w], xv.to_vec()).unwrap(), false);
                    let k = t.leaf(Tensor::new(vec![f, c, 3, 3], kv.to_vec()).unwrap(), false);
                    let b = t.leaf(Tensor::new(vec![f], bv.to_vec()).unwrap(), false);
                    let y = t.conv2d(x, k, b, pad).unwrap();
                    t.value(y).data().iter().zip(&cot).map(|(a, b)| a * b).sum()
                };

                let mut t = Tape::new();
                let x = t.leaf(Tensor::new(vec![n, c, h, w], x0.clone()).unwrap(), true);
                let k = t.leaf(Tensor::new(vec![f, c, 3, 3], k0.clone()).unwrap(), true);
                let b = t.leaf(Tensor::new(vec![f], b0.clone()).unwrap(), true);
                let y = t.conv2d(x, k, b, pad).unwrap();
                t.backward_from(y, &cot).unwrap();

                let gx = numeric_grad(|p| fwd(p, &k0, &b0), &x0, 1e-5);
                let gk = numeric_grad(|p| fwd(&x0, p, &b0), &k0, 1e-5);
                let gb = numeric_grad(|p| fwd(&x0, &k0, p), &b0, 1e-5);
                assert!(max_rel_err(t.grad(x).unwrap(), &gx) < 1e-4, "dinput pad={pad}");
                assert!(max_rel_err(t.grad(k).unwrap(), &gk) < 1e-4, "dkernel pad={pad}");
                assert!(max_rel_err(t.grad(b).unwrap(), &gb) < 1e-4, "dbias pad={pad}");
            }
        }
    }

    #[test]
    fn maxpool_takes_window_max() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_tie_routes_gradient_to_first_element() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![1, 1, 4, 4], 7.0), true);
        let y = tape.maxpool2(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 7.0));
        tape.backward_from(y, &[1.0; 4]).unwrap();
        let g = tape.grad(x).unwrap();
        // First element of each 2x2 window in row-major order.
        let mut expected = vec![0.0; 16];
        for (oy, ox) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            expected[(2 * oy) * 4 + 2 * ox] = 1.0;
        }
        assert_eq!(g, expected.as_slice());
    }

    #[test]
    fn maxpool_drops_odd_trailing_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 75, 75]), false);
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 1, 37, 37]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 1, 4]), false);
        assert!(matches!(tape.maxpool2(x), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut r = rng(200);
        let (n, c, h, w) = (2, 2, 5, 6);
        let x0 = random_vec(&mut r, n * c * h * w);
        let cot = random_vec(&mut r, n * c * (h / 2) * (w / 2));
        let fwd = |xv: &[f64]| -> f64 {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![n, c, h, w], xv.to_vec()).unwrap(), false);
            let y = t.maxpool2(x).unwrap();
            t.value(y).data().iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![n, c, h, w], x0.clone()).unwrap(), true);
        let y = t.maxpool2(x).unwrap();
        t.backward_from(y, &cot).unwrap();
        let gx = numeric_grad(fwd, &x0, 1e-5);
        assert!(max_rel_err(t.grad(x).unwrap(), &gx) < 1e-4);
    }

    #[test]
    fn batchnorm_identity_on_normalized_batch() {
        // Construct a batch that is exactly zero-mean unit-variance per channel.
        let data = vec![1.0, -1.0, 1.0, -1.0];
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4, 1, 1, 1], data.clone()).unwrap(), false);
        let g = tape.leaf(Tensor::full(vec![1], 1.0), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        let mut running = RunningStats::new(1);
        let y = tape
            .batchnorm(x, g, b, &mut running, Mode::Train, 1e-5, 0.1)
            .unwrap();
        for (out, orig) in tape.value(y).data().iter().zip(&data) {
            assert!((out - orig).abs() < 1e-4, "{out} vs {orig}");
        }
    }

    #[test]
    fn batchnorm_gamma_zero_collapses_to_beta() {
        let mut r = rng(300);
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(vec![2, 2, 3, 3], random_vec(&mut r, 36)).unwrap(),
            false,
        );
        let g = tape.leaf(Tensor::zeros(vec![2]), false);
        let b = tape.leaf(Tensor::new(vec![2], vec![0.3, -0.7]).unwrap(), false);
        let mut running = RunningStats::new(2);
        let y = tape
            .batchnorm(x, g, b, &mut running, Mode::Train, 1e-5, 0.1)
            .unwrap();
        let out = tape.value(y).data();
        for im in 0..2 {
            for ic in 0..2 {
                for j in 0..9 {
                    let expected = if ic == 0 { 0.3 } else { -0.7 };
                    assert!((out[(im * 2 + ic) * 9 + j] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_output_moments_match_two_pass_oracle() {
        let mut r = rng(301);
        let (n, c, h, w) = (4, 3, 5, 5);
        let data = random_vec(&mut r, n * c * h * w);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n, c, h, w], data).unwrap(), false);
        let g = tape.leaf(Tensor::full(vec![c], 1.0), false);
        let b = tape.leaf(Tensor::zeros(vec![c]), false);
        let mut running = RunningStats::new(c);
        let y = tape
            .batchnorm(x, g, b, &mut running, Mode::Train, 1e-5, 0.1)
            .unwrap();
        let out = tape.value(y).data();
        // Independent two-pass moments per channel.
        let plane = h * w;
        for ic in 0..c {
            let mut vals = Vec::new();
            for im in 0..n {
                let base = (im * c + ic) * plane;
                vals.extend_from_slice(&out[base..base + plane]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10, "channel {ic} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ic} var {var}");
        }
    }

    #[test]
    fn batchnorm_rejects_batch_of_one_in_train_mode() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 3, 3]), false);
        let g = tape.leaf(Tensor::full(vec![2], 1.0), false);
        let b = tape.leaf(Tensor::zeros(vec![2]), false);
        let mut running = RunningStats::new(2);
        let err = tape.batchnorm(x, g, b, &mut running, Mode::Train, 1e-5, 0.1);
        assert!(matches!(err, Err(Error::Config(_))));
        // Eval mode accepts single samples.
        let ok = tape.batchnorm(x, g, b, &mut running, Mode::Eval, 1e-5, 0.1);
        assert!(ok.is_ok());
    }

    #[test]
    fn batchnorm_updates_running_stats_by_ema() {
        let mut tape = Tape::new();
        let data = vec![2.0, 2.0, 6.0, 6.0]; // mean 4, var 4
        let x = tape.leaf(Tensor::new(vec![4, 1, 1, 1], data).unwrap(), false);
        let g = tape.leaf(Tensor::full(vec![1], 1.0), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        let mut running = RunningStats::new(1);
        tape.batchnorm(x, g, b, &mut running, Mode::Train, 1e-5, 0.1)
            .unwrap();
        assert!((running.mean[0] - 0.4).abs() < 1e-12); // 0.9*0 + 0.1*4
        assert!((running.var[0] - 1.3).abs() < 1e-12); // 0.9*1 + 0.1*4
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        for (mode, seed) in [(Mode::Train, 400u64), (Mode::Eval, 401)] {
            let mut r = rng(seed);
            let (n, c, h, w) = (3, 2, 2, 3);
            let x0 = random_vec(&mut r, n * c * h * w);
            let g0: Vec<f64> = (0..c).map(|_| r.gen_range(0.5..1.5)).collect();
            let b0 = random_vec(&mut r, c);
            let cot = random_vec(&mut r, n * c * h * w);
            let base_running = RunningStats {
                mean: random_vec(&mut r, c),
                var: (0..c).map(|_| r.gen_range(0.5..2.0)).collect(),
            };

            let fwd = |xv: &[f64], gv: &[f64], bv: &[f64]| -> f64 {
                let mut t = Tape::new();
                let x = t.leaf(Tensor::new(vec![n, c, h, w], xv.to_vec()).unwrap(), false);
                let g = t.leaf(Tensor::new(vec![c], gv.to_vec()).unwrap(), false);
                let b = t.leaf(Tensor::new(vec![c], bv.to_vec()).unwrap(), false);
                let mut running = base_running.clone();
                let y = t.batchnorm(x, g, b, &mut running, mode, 1e-5, 0.1).unwrap();
                t.value(y).data().iter().zip(&cot).map(|(a, b)| a * b).sum()
            };

            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![n, c, h, w], x0.clone()).unwrap(), true);
            let g = t.leaf(Tensor::new(vec![c], g0.clone()).unwrap(), true);
            let b = t.leaf(Tensor::new(vec![c], b0.clone()).unwrap(), true);
            let mut running = base_running.clone();
            let y = t.batchnorm(x, g, b, &mut running, mode, 1e-5, 0.1).unwrap();
            t.backward_from(y, &cot).unwrap();

            let gx = numeric_grad(|p| fwd(p, &g0, &b0), &x0, 1e-5);
            let gg = numeric_grad(|p| fwd(&x0, p, &b0), &g0, 1e-5);
            let gb = numeric_grad(|p| fwd(&x0, &g0, p), &b0, 1e-5);
            assert!(max_rel_err(t.grad(x).unwrap(), &gx) < 1e-4, "dinput {mode:?}");
            assert!(max_rel_err(t.grad(g).unwrap(), &gg) < 1e-4, "dgamma {mode:?}");
            assert!(max_rel_err(t.grad(b).unwrap(), &gb) < 1e-4, "dbeta {mode:?}");
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        tape.backward_from(y, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dropout_p_zero_is_identity_and_consumes_no_rng() {
        let mut r1 = rng(500);
        let mut r2 = rng(500);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let y = tape.dropout(x, 0.0, Mode::Train, &mut r1).unwrap();
        assert_eq!(y, x);
        let z = tape.dropout(x, 0.4, Mode::Eval, &mut r1).unwrap();
        assert_eq!(z, x);
        // RNG untouched by both calls.
        assert_eq!(r1.gen::<u64>(), r2.gen::<u64>());
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let mut r = rng(501);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![4]), false);
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut r).is_err());
        assert!(tape.dropout(x, -0.1, Mode::Train, &mut r).is_err());
    }

    #[test]
    fn dropout_train_expectation_matches_eval_output() {
        // Inverted scaling: E[train output] == input == eval output.
        let p = 0.4;
        let values = [0.5, -1.5, 2.0];
        let trials = 20_000usize;
        let mut r = rng(502);
        let mut sums = [0.0f64; 3];
        for _ in 0..trials {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![3], values.to_vec()).unwrap(), false);
            let y = tape.dropout(x, p, Mode::Train, &mut r).unwrap();
            for (s, v) in sums.iter_mut().zip(tape.value(y).data()) {
                *s += v;
            }
        }
        for (s, v) in sums.iter().zip(&values) {
            let mean = s / trials as f64;
            // Per-element variance of the Bernoulli mask estimator.
            let se = (v.abs() / (1.0 - p)) * (p * (1.0 - p)).sqrt() / (trials as f64).sqrt();
            assert!(
                (mean - v).abs() < 3.0 * se + 1e-9,
                "mean {mean} vs {v} (se {se})"
            );
        }
    }

    #[test]
    fn global_avg_pool_on_constant_channels() {
        let mut data = vec![4.0; 9];
        data.extend(vec![-2.0; 9]);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 3, 3], data).unwrap(), true);
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 2]);
        assert_eq!(tape.value(y).data(), &[4.0, -2.0]);
        tape.backward_from(y, &[1.0, 2.0]).unwrap();
        let g = tape.grad(x).unwrap();
        for &v in &g[..9] {
            assert!((v - 1.0 / 9.0).abs() < 1e-12);
        }
        for &v in &g[9..] {
            assert!((v - 2.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut r = rng(600);
        let (n, d, o) = (3, 5, 4);
        let x0 = random_vec(&mut r, n * d);
        let w0 = random_vec(&mut r, o * d);
        let b0 = random_vec(&mut r, o);
        let cot = random_vec(&mut r, n * o);
        let fwd = |xv: &[f64], wv: &[f64], bv: &[f64]| -> f64 {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![n, d], xv.to_vec()).unwrap(), false);
            let w = t.leaf(Tensor::new(vec![o, d], wv.to_vec()).unwrap(), false);
            let b = t.leaf(Tensor::new(vec![o], bv.to_vec()).unwrap(), false);
            let y = t.linear(x, w, b).unwrap();
            t.value(y).data().iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![n, d], x0.clone()).unwrap(), true);
        let w = t.leaf(Tensor::new(vec![o, d], w0.clone()).unwrap(), true);
        let b = t.leaf(Tensor::new(vec![o], b0.clone()).unwrap(), true);
        let y = t.linear(x, w, b).unwrap();
        t.backward_from(y, &cot).unwrap();
        assert!(max_rel_err(t.grad(x).unwrap(), &numeric_grad(|p| fwd(p, &w0, &b0), &x0, 1e-5)) < 1e-4);
        assert!(max_rel_err(t.grad(w).unwrap(), &numeric_grad(|p| fwd(&x0, p, &b0), &w0, 1e-5)) < 1e-4);
        assert!(max_rel_err(t.grad(b).unwrap(), &numeric_grad(|p| fwd(&x0, &w0, p), &b0, 1e-5)) < 1e-4);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln3() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(vec![1, 3]), false);
        let loss = tape.weighted_cross_entropy(z, &[1], &[1.0, 1.0, 1.0]).unwrap();
        assert!((tape.value(loss).data()[0] - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_correct_is_near_zero() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::new(vec![1, 3], vec![100.0, 0.0, 0.0]).unwrap(), false);
        let loss = tape.weighted_cross_entropy(z, &[0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-10);
    }

    #[test]
    fn cross_entropy_weighted_mean_matches_hand_combination() {
        // Two samples with weights 1.0 and 2.0; per-sample losses computed
        // independently, then combined as a weighted mean by hand.
        let logits = vec![0.2, -0.4, 0.9, 1.5, 0.3, -0.2];
        let targets = [2usize, 0];
        let weights = [0.5, 1.0, 2.0]; // class weights; samples hit classes 2 and 0

        let per_sample = |row: &[f64], target: usize| -> f64 {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            lse - row[target]
        };
        let l0 = per_sample(&logits[..3], 2);
        let l1 = per_sample(&logits[3..], 0);
        let expected = (2.0 * l0 + 0.5 * l1) / 2.5;

        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::new(vec![2, 3], logits).unwrap(), false);
        let loss = tape.weighted_cross_entropy(z, &targets, &weights).unwrap();
        assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_non_finite_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(
            Tensor::new(vec![1, 3], vec![f64::NAN, 0.0, 0.0]).unwrap_or_else(|_| unreachable!()),
            false,
        );
        assert!(matches!(
            tape.weighted_cross_entropy(z, &[0], &[1.0, 1.0, 1.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut r = rng(700);
        let (n, c) = (4, 3);
        let z0 = random_vec(&mut r, n * c);
        let targets = [0usize, 2, 1, 2];
        let weights = [0.01, 1.0, 0.75];
        let fwd = |zv: &[f64]| -> f64 {
            let mut t = Tape::new();
            let z = t.leaf(Tensor::new(vec![n, c], zv.to_vec()).unwrap(), false);
            let loss = t.weighted_cross_entropy(z, &targets, &weights).unwrap();
            t.value(loss).data()[0]
        };
        let mut t = Tape::new();
        let z = t.leaf(Tensor::new(vec![n, c], z0.clone()).unwrap(), true);
        let loss = t.weighted_cross_entropy(z, &targets, &weights).unwrap();
        t.backward(loss).unwrap();
        let gz = numeric_grad(fwd, &z0, 1e-6);
        assert!(max_rel_err(t.grad(z).unwrap(), &gz) < 1e-4);
    }

    #[test]
    fn forward_backward_is_deterministic() {
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut r = rng(800);
            let x0 = random_vec(&mut r, 2 * 1 * 6 * 6);
            let k0 = random_vec(&mut r, 2 * 9);
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![2, 1, 6, 6], x0).unwrap(), false);
            let k = t.leaf(Tensor::new(vec![2, 1, 3, 3], k0).unwrap(), true);
            let b = t.leaf(Tensor::zeros(vec![2]), true);
            let y = t.conv2d(x, k, b, 1).unwrap();
            let y = t.relu(y).unwrap();
            let y = t.maxpool2(y).unwrap();
            let y = t.global_avg_pool(y).unwrap();
            let loss = t.weighted_cross_entropy(y, &[0, 1], &[1.0, 0.5]).unwrap();
            t.backward(loss).unwrap();
            (t.value(loss).data().to_vec(), t.grad(k).unwrap().to_vec())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }
}
