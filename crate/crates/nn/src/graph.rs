//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use crate::{NnError, ParamId, ParamSet, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

/// Inference statistics of one batch-normalization layer. The affine
/// `gamma`/`beta` pair lives in the owning [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential moving average towards one batch's statistics. The
    /// variance is Bessel-corrected before blending.
    pub fn update(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let correction = if stats.count > 1 {
            stats.count as f64 / (stats.count as f64 - 1.0)
        } else {
            1.0
        };
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * stats.mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * stats.var[c] * correction;
        }
    }
}

/// Per-channel batch mean and biased variance observed in a training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    MaskedMae {
        pred: Var,
        target: Tensor,
        mask: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A forward computation recorded for differentiation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    kink_tracking: bool,
    kink_signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            kink_tracking: false,
            kink_signature: FNV_OFFSET,
        }
    }

    /// A graph that fingerprints the side of every non-differentiable point
    /// (relu inputs, absolute-error residuals) it passes. Two evaluations
    /// with equal signatures sit on the same smooth piece.
    pub fn with_kink_tracking() -> Self {
        Graph {
            kink_tracking: true,
            ..Graph::new()
        }
    }

    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    fn mix_kink(&mut self, side: u8) {
        self.kink_signature = (self.kink_signature ^ side as u64).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf whose gradient is kept (used for input-sensitivity checks).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id), true)
    }

    /// Same-padding, stride-1 2-D convolution followed by `act`.
    ///
    /// `x` is `(N, C_in, H, W)`, `w` is `(C_out, C_in, KH, KW)` with odd
    /// kernel sides, `b` is `(C_out)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
        let (n, ci, h, wd) = self.value(x).dims4()?;
        let (co, wci, kh, kw) = self.value(w).dims4()?;
        if wci != ci {
            return Err(NnError::shape(format!(
                "conv2d: input {:?} has {} channels but kernel {:?} expects {}",
                self.value(x).shape(),
                ci,
                self.value(w).shape(),
                wci
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(NnError::shape(format!(
                "conv2d: kernel {:?} must have odd spatial sides",
                self.value(w).shape()
            )));
        }
        if self.value(b).shape() != [co] {
            return Err(NnError::shape(format!(
                "conv2d: bias {:?} does not match {} output channels",
                self.value(b).shape(),
                co
            )));
        }
        let geom = ConvGeom {
            n,
            ci,
            co,
            h,
            w: wd,
            kh,
            kw,
        };
        let out = conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let y = self.push(
            Tensor::new(vec![n, co, h, wd], out)?,
            Op::Conv2d { x, w, b },
            needs,
        );
        Ok(self.activate(y, act))
    }

    pub fn activate(&mut self, x: Var, act: Activation) -> Var {
        match act {
            Activation::Linear => x,
            Activation::Relu => self.relu(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let data: Vec<f64> = input.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = input.shape().to_vec();
        if self.kink_tracking {
            let sides: Vec<u8> = self.value(x).data().iter().map(|&v| side(v)).collect();
            for s in sides {
                self.mix_kink(s);
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, data).expect("same shape"),
            Op::Relu { x },
            needs,
        )
    }

    /// Training-mode batch normalization over `(batch, H, W)` per channel.
    /// Returns the normalized output and the batch statistics used.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        self.check_affine(gamma, beta, c)?;
        let plane = h * w;
        let count = n * plane;
        let xs = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bi in 0..n {
                for &v in &xs[(bi * c + ch) * plane..][..plane] {
                    s += v;
                }
            }
            let m = s / count as f64;
            let mut sq = 0.0;
            for bi in 0..n {
                for &v in &xs[(bi * c + ch) * plane..][..plane] {
                    sq += (v - m) * (v - m);
                }
            }
            mean[ch] = m;
            var[ch] = sq / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let stats = BatchStats { mean, var, count };
        let y = self.normalize(x, gamma, beta, &stats.mean, inv_std, true)?;
        Ok((y, stats))
    }

    /// Inference-mode batch normalization using running statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState,
    ) -> Result<Var> {
        let (_, c, _, _) = self.value(x).dims4()?;
        if state.channels() != c {
            return Err(NnError::shape(format!(
                "batch_norm: state has {} channels, input {:?}",
                state.channels(),
                self.value(x).shape()
            )));
        }
        self.check_affine(gamma, beta, c)?;
        let inv_std: Vec<f64> = state
            .running_var
            .iter()
            .map(|v| 1.0 / (v + state.eps).sqrt())
            .collect();
        let mean = state.running_mean.clone();
        self.normalize(x, gamma, beta, &mean, inv_std, false)
    }

    /// Batch normalization in either mode; training mode also folds the
    /// batch statistics into `state`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        match mode {
            Mode::Train => {
                let (y, stats) = self.batch_norm_train(x, gamma, beta, state.eps)?;
                if state.channels() != stats.mean.len() {
                    return Err(NnError::shape(format!(
                        "batch_norm: state has {} channels, input has {}",
                        state.channels(),
                        stats.mean.len()
                    )));
                }
                state.update(&stats);
                Ok(y)
            }
            Mode::Infer => self.batch_norm_infer(x, gamma, beta, state),
        }
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(NnError::shape(format!(
                "batch_norm: gamma {:?} / beta {:?} must both be [{}]",
                self.value(gamma).shape(),
                self.value(beta).shape(),
                c
            )));
        }
        Ok(())
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for bi in 0..n {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                for i in base..base + plane {
                    let z = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = z;
                    out[i] = g[ch] * z + bt[ch];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::new(vec![n, c, h, w], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            needs,
        ))
    }

    /// `y = x Wᵀ + b` on a `(batch, in)` input with `W` shaped `(out, in)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
        let (n, din) = match self.value(x).shape() {
            &[n, d] => (n, d),
            s => {
                return Err(NnError::shape(format!(
                    "dense: input must be (batch, features), got {:?}",
                    s
                )))
            }
        };
        let (dout, win) = match self.value(w).shape() {
            &[o, i] => (o, i),
            s => {
                return Err(NnError::shape(format!(
                    "dense: weight must be (out, in), got {:?}",
                    s
                )))
            }
        };
        if win != din {
            return Err(NnError::shape(format!(
                "dense: input {:?} does not match weight {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            )));
        }
        if self.value(b).shape() != [dout] {
            return Err(NnError::shape(format!(
                "dense: bias {:?} does not match {} outputs",
                self.value(b).shape(),
                dout
            )));
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let mut out = vec![0.0; n * dout];
        for bi in 0..n {
            let row = &xs[bi * din..(bi + 1) * din];
            for o in 0..dout {
                let wr = &ws[o * din..(o + 1) * din];
                let mut s = bs[o];
                for i in 0..din {
                    s += wr[i] * row[i];
                }
                out[bi * dout + o] = s;
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let y = self.push(
            Tensor::new(vec![n, dout], out)?,
            Op::Dense { x, w, b },
            needs,
        );
        Ok(self.activate(y, act))
    }

    /// Concatenates 4-axis grids along the channel axis in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| NnError::shape("concat_channels: no inputs"))?;
        if xs.len() == 1 {
            return Ok(first);
        }
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total_c = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(NnError::shape(format!(
                    "concat_channels: {:?} does not match {:?} outside the channel axis",
                    self.value(v).shape(),
                    self.value(first).shape()
                )));
            }
            total_c += vc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for bi in 0..n {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(vec![n, total_c, h, w], out)?,
            Op::Concat { xs: xs.to_vec() },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, needs))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::shape(format!(
                "{}: {:?} vs {:?}",
                op,
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Mean absolute error restricted to `mask`, a list of offsets into each
    /// sample's flattened `(C, H, W)` block. Cells outside the mask neither
    /// contribute to the loss nor receive gradient.
    pub fn masked_mae(&mut self, pred: Var, target: &Tensor, mask: &[usize]) -> Result<Var> {
        if mask.is_empty() {
            return Err(NnError::EmptyMask);
        }
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(NnError::shape(format!(
                "masked_mae: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let n = p.shape().first().copied().unwrap_or(0);
        if n == 0 {
            return Err(NnError::shape("masked_mae: empty batch"));
        }
        let per = p.len() / n;
        if let Some(&bad) = mask.iter().find(|&&i| i >= per) {
            return Err(NnError::shape(format!(
                "masked_mae: mask offset {} outside a {}-element sample",
                bad, per
            )));
        }
        let mut total = 0.0;
        let mut sides = Vec::new();
        for bi in 0..n {
            for &i in mask {
                let r = p.data()[bi * per + i] - target.data()[bi * per + i];
                total += r.abs();
                if self.kink_tracking {
                    sides.push(side(r));
                }
            }
        }
        for s in sides {
            self.mix_kink(s);
        }
        let loss = total / (n * mask.len()) as f64;
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMae {
                pred,
                target: target.clone(),
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NnError::shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b } => {
                let (n, ci, h, wd) = self.value(*x).dims4().expect("checked");
                let (co, _, kh, kw) = self.value(*w).dims4().expect("checked");
                let geom = ConvGeom {
                    n,
                    ci,
                    co,
                    h,
                    w: wd,
                    kh,
                    kw,
                };
                let (dx, dw) = conv_backward(
                    g.data(),
                    self.value(*x).data(),
                    self.value(*w).data(),
                    &geom,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, self.value(*x).shape(), dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, self.value(*w).shape(), dw);
                }
                if self.needs(*b) {
                    let plane = h * wd;
                    let mut db = vec![0.0; co];
                    for bi in 0..n {
                        for (o, acc) in db.iter_mut().enumerate() {
                            for &v in &g.data()[(bi * co + o) * plane..][..plane] {
                                *acc += v;
                            }
                        }
                    }
                    accumulate(grads, *b, &[co], db);
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(grads, *x, self.value(*x).shape(), dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = self.value(*x).dims4().expect("checked");
                let plane = h * w;
                let count = (n * plane) as f64;
                let gd = g.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..n {
                    for ch in 0..c {
                        let base = (bi * c + ch) * plane;
                        for k in base..base + plane {
                            sum_g[ch] += gd[k];
                            sum_gx[ch] += gd[k] * xhat[k];
                        }
                    }
                }
                if self.needs(*x) {
                    let gam = self.value(*gamma).data();
                    let mut dx = vec![0.0; gd.len()];
                    for bi in 0..n {
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            if *batch_stats {
                                let scale = gam[ch] * inv_std[ch] / count;
                                for k in base..base + plane {
                                    dx[k] = scale
                                        * (count * gd[k] - sum_g[ch] - xhat[k] * sum_gx[ch]);
                                }
                            } else {
                                let scale = gam[ch] * inv_std[ch];
                                for k in base..base + plane {
                                    dx[k] = scale * gd[k];
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, self.value(*x).shape(), dx);
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, &[c], sum_gx);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, &[c], sum_g);
                }
            }
            Op::Dense { x, w, b } => {
                let xs = self.value(*x);
                let ws = self.value(*w);
                let (n, din) = (xs.shape()[0], xs.shape()[1]);
                let dout = ws.shape()[0];
                let gd = g.data();
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * din];
                    for bi in 0..n {
                        let row = &mut dx[bi * din..(bi + 1) * din];
                        for o in 0..dout {
                            let gv = gd[bi * dout + o];
                            let wr = &ws.data()[o * din..(o + 1) * din];
                            for k in 0..din {
                                row[k] += gv * wr[k];
                            }
                        }
                    }
                    accumulate(grads, *x, xs.shape(), dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; dout * din];
                    for o in 0..dout {
                        let wr = &mut dw[o * din..(o + 1) * din];
                        for bi in 0..n {
                            let gv = gd[bi * dout + o];
                            let row = &xs.data()[bi * din..(bi + 1) * din];
                            for k in 0..din {
                                wr[k] += gv * row[k];
                            }
                        }
                    }
                    accumulate(grads, *w, ws.shape(), dw);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; dout];
                    for bi in 0..n {
                        for o in 0..dout {
                            db[o] += gd[bi * dout + o];
                        }
                    }
                    accumulate(grads, *b, &[dout], db);
                }
            }
            Op::Concat { xs } => {
                let (n, total_c, h, w) = node.value.dims4().expect("checked");
                let plane = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).shape()[1];
                    if self.needs(v) {
                        let mut dv = Vec::with_capacity(n * c * plane);
                        for bi in 0..n {
                            let start = (bi * total_c + offset) * plane;
                            dv.extend_from_slice(&g.data()[start..start + c * plane]);
                        }
                        accumulate(grads, v, self.value(v).shape(), dv);
                    }
                    offset += c;
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, v, g.shape(), g.data().to_vec());
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(grads, *a, g.shape(), da);
                }
                if self.needs(*b) {
                    let db = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(grads, *b, g.shape(), db);
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape();
                    accumulate(grads, *x, shape, vec![g.data()[0]; self.value(*x).len()]);
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    accumulate(grads, *x, self.value(*x).shape(), g.data().to_vec());
                }
            }
            Op::MaskedMae { pred, target, mask } => {
                if self.needs(*pred) {
                    let p = self.value(*pred);
                    let n = p.shape()[0];
                    let per = p.len() / n;
                    let scale = g.data()[0] / (n * mask.len()) as f64;
                    let mut dp = vec![0.0; p.len()];
                    for bi in 0..n {
                        for &k in mask {
                            let r = p.data()[bi * per + k] - target.data()[bi * per + k];
                            dp[bi * per + k] = if r > 0.0 {
                                scale
                            } else if r < 0.0 {
                                -scale
                            } else {
                                0.0
                            };
                        }
                    }
                    accumulate(grads, *pred, p.shape(), dp);
                }
            }
        }
    }
}

fn side(v: f64) -> u8 {
    if v > 0.0 {
        2
    } else if v < 0.0 {
        0
    } else {
        1
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    let t = Tensor::new(shape.to_vec(), data).expect("gradient shape");
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradient of every parameter leaf of `graph` into the
    /// matching accumulator of `params`.
    pub fn accumulate_into(&self, graph: &Graph, params: &mut ParamSet) {
        for (i, node) in graph.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &self.grads[i] {
                    params.get_mut(id).grad.add_assign(g);
                }
            }
        }
    }
}

struct ConvGeom {
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    /// Output rows/cols `[lo, hi)` for which `out + d` stays inside the input.
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi.max(lo))
    }
}

/// Unfolds one sample into a `(C_in·KH·KW, H·W)` patch matrix. Border
/// positions are never written, so a zeroed buffer can be reused across samples.
fn im2col_into(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let plane = g.h * g.w;
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    for c in 0..g.ci {
        let in_p = &x[c * plane..][..plane];
        for ky in 0..g.kh {
            let dy = ky as isize - ph;
            let (y0, y1) = ConvGeom::span(g.h, dy);
            for kx in 0..g.kw {
                let dx = kx as isize - pw;
                let (x0, x1) = ConvGeom::span(g.w, dx);
                let row = &mut cols[((c * g.kh + ky) * g.kw + kx) * plane..][..plane];
                for y in y0..y1 {
                    let src = (y as isize + dy) as usize * g.w;
                    let sx = (x0 as isize + dx) as usize;
                    row[y * g.w + x0..y * g.w + x1].copy_from_slice(&in_p[src + sx..src + sx + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adds a patch-matrix gradient back onto one sample's input gradient.
fn col2im_add(cols: &[f64], dx_s: &mut [f64], g: &ConvGeom) {
    let plane = g.h * g.w;
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    for c in 0..g.ci {
        let dx_p = &mut dx_s[c * plane..][..plane];
        for ky in 0..g.kh {
            let dy = ky as isize - ph;
            let (y0, y1) = ConvGeom::span(g.h, dy);
            for kx in 0..g.kw {
                let ddx = kx as isize - pw;
                let (x0, x1) = ConvGeom::span(g.w, ddx);
                let row = &cols[((c * g.kh + ky) * g.kw + kx) * plane..][..plane];
                for y in y0..y1 {
                    let dst = (y as isize + dy) as usize * g.w;
                    let sx = (x0 as isize + ddx) as usize;
                    for (d, &v) in dx_p[dst + sx..dst + sx + (x1 - x0)].iter_mut().zip(&row[y * g.w + x0..y * g.w + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

const LANES: usize = 8;

/// `Σ_j a[j]·b[j]` with eight interleaved partial sums combined pairwise.
/// The order is fixed, so the result does not depend on the target's vector width.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        let (x, y) = (&a[i * LANES..][..LANES], &b[i * LANES..][..LANES]);
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    for j in chunks * LANES..a.len() {
        acc[j % LANES] += a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

const TILE: usize = 24;

/// `out[j] = init + Σ_p coef(p)·rows[p][j]` over a plane, accumulating each
/// tile in registers with `p` ascending.
fn gemv_rows(out: &mut [f64], init: f64, rows: &[f64], plane: usize, coef: impl Fn(usize) -> f64, k: usize) {
    let mut start = 0;
    while start < plane {
        let len = TILE.min(plane - start);
        if len == TILE {
            let mut acc = [init; TILE];
            for p in 0..k {
                let c = coef(p);
                let r = &rows[p * plane + start..][..TILE];
                for j in 0..TILE {
                    acc[j] += c * r[j];
                }
            }
            out[start..start + TILE].copy_from_slice(&acc);
        } else {
            let o = &mut out[start..start + len];
            o.fill(init);
            for p in 0..k {
                let c = coef(p);
                for (o, &v) in o.iter_mut().zip(&rows[p * plane + start..][..len]) {
                    *o += c * v;
                }
            }
        }
        start += len;
    }
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane = g.h * g.w;
    let k = g.ci * g.kh * g.kw;
    let mut out = vec![0.0; g.n * g.co * plane];
    let mut cols = vec![0.0; k * plane];
    for bi in 0..g.n {
        im2col_into(&x[bi * g.ci * plane..][..g.ci * plane], g, &mut cols);
        for o in 0..g.co {
            let out_p = &mut out[(bi * g.co + o) * plane..][..plane];
            let wo = &w[o * k..(o + 1) * k];
            gemv_rows(out_p, b[o], &cols, plane, |p| wo[p], k);
        }
    }
    out
}

/// Input and kernel gradients of a convolution, each only when requested.
fn conv_backward(gout: &[f64], x: &[f64], w: &[f64], g: &ConvGeom, want_dx: bool, want_dw: bool) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.h * g.w;
    let k = g.ci * g.kh * g.kw;
    let mut dx = want_dx.then(|| vec![0.0; g.n * g.ci * plane]);
    let mut dw = want_dw.then(|| vec![0.0; g.co * k]);
    let mut cols = vec![0.0; if want_dw { k * plane } else { 0 }];
    let mut dcols = vec![0.0; if want_dx { k * plane } else { 0 }];
    for bi in 0..g.n {
        let g_s = &gout[bi * g.co * plane..][..g.co * plane];
        if let Some(dx) = dx.as_mut() {
            for p in 0..k {
                gemv_rows(&mut dcols[p * plane..][..plane], 0.0, g_s, plane, |o| w[o * k + p], g.co);
            }
            col2im_add(&dcols, &mut dx[bi * g.ci * plane..][..g.ci * plane], g);
        }
        if let Some(dw) = dw.as_mut() {
            im2col_into(&x[bi * g.ci * plane..][..g.ci * plane], g, &mut cols);
            for o in 0..g.co {
                let g_p = &g_s[o * plane..][..plane];
                for (p, acc) in dw[o * k..(o + 1) * k].iter_mut().enumerate() {
                    *acc += dot(g_p, &cols[p * plane..][..plane]);
                }
            }
        }
    }
    (dx, dw)
}
