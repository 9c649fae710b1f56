//! Recurrent and convolutional sequence classifiers with hand-written
//! backpropagation.
//!
//! Inputs are flattened `T x F` rows (step-major). Every architecture ends in
//! an affine head producing a logit; training minimizes binary cross-entropy
//! with Adam, global-norm gradient clipping and early stopping on validation
//! AUROC. All parameters live in one flat vector whose layout is derived from
//! the network dimensions.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SequenceParams;
use crate::eval::{auroc, stratified_split};
use crate::math::{sigmoid, softplus, sqrt, tanh};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, shuffle, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeqArch {
    Cnn,
    Rnn,
    Lstm,
    Gru,
    Tcn,
}

impl SeqArch {
    pub const ALL: [SeqArch; 5] = [SeqArch::Cnn, SeqArch::Rnn, SeqArch::Lstm, SeqArch::Gru, SeqArch::Tcn];

    fn gates(self) -> usize {
        match self {
            SeqArch::Rnn => 1,
            SeqArch::Gru => 3,
            SeqArch::Lstm => 4,
            SeqArch::Cnn | SeqArch::Tcn => 0,
        }
    }
}

/// Number of TCN residual blocks: the fewest whose receptive field
/// `1 + 2 (2^B - 1)` (two kernel-2 convolutions per block) covers `steps`.
pub fn tcn_blocks(steps: usize) -> usize {
    let mut b = 1;
    while 1 + 2 * ((1usize << b) - 1) < steps {
        b += 1;
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_auroc: Option<f64>,
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceNet {
    pub arch: SeqArch,
    pub steps: usize,
    pub channels: usize,
    pub hidden: usize,
    /// Stacked layers (recurrent, CNN) or residual blocks (TCN).
    pub layers: usize,
    pub params: Vec<f64>,
    pub trace: Option<TrainingTrace>,
}

#[derive(Clone, Copy)]
struct RecLayer {
    w: usize,
    u: usize,
    b: usize,
    d: usize,
}

#[derive(Clone, Copy)]
struct ConvLayer {
    w: usize,
    b: usize,
    c_in: usize,
}

#[derive(Clone, Copy)]
struct TcnBlock {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    /// 1x1 projection (weights, bias) when the input width differs.
    proj: Option<(usize, usize)>,
    c_in: usize,
    dilation: usize,
}

enum Body {
    Rec(Vec<RecLayer>),
    Conv(Vec<ConvLayer>),
    Tcn(Vec<TcnBlock>),
}

struct Layout {
    body: Body,
    head_w: usize,
    head_b: usize,
    total: usize,
}

/// Parameter segments in layout order, for initialization.
enum Seg {
    Weight { len: usize, fan_in: usize, fan_out: usize },
    /// Zeros except for `ones`, which start at 1.
    Bias { len: usize, ones: core::ops::Range<usize> },
}

impl SequenceNet {
    fn layout(&self) -> (Layout, Vec<Seg>) {
        let (h, f) = (self.hidden, self.channels);
        let mut off = 0;
        let mut segs = Vec::new();
        let mut take = |len: usize, seg: Seg, segs: &mut Vec<Seg>| {
            let o = off;
            off += len;
            segs.push(seg);
            o
        };
        let body = match self.arch {
            SeqArch::Rnn | SeqArch::Lstm | SeqArch::Gru => {
                let g = self.arch.gates();
                let mut v = Vec::new();
                for l in 0..self.layers {
                    let d = if l == 0 { f } else { h };
                    let w = take(g * h * d, Seg::Weight { len: g * h * d, fan_in: d, fan_out: h }, &mut segs);
                    let u = take(g * h * h, Seg::Weight { len: g * h * h, fan_in: h, fan_out: h }, &mut segs);
                    // LSTM forget-gate bias starts at 1.
                    let bias = if self.arch == SeqArch::Lstm {
                        Seg::Bias { len: g * h, ones: h..2 * h }
                    } else {
                        Seg::Bias { len: g * h, ones: 0..0 }
                    };
                    let b = take(g * h, bias, &mut segs);
                    v.push(RecLayer { w, u, b, d });
                }
                Body::Rec(v)
            }
            SeqArch::Cnn => {
                let mut v = Vec::new();
                for l in 0..self.layers {
                    let c_in = if l == 0 { f } else { h };
                    let w = take(h * 3 * c_in, Seg::Weight { len: h * 3 * c_in, fan_in: 3 * c_in, fan_out: 3 * h }, &mut segs);
                    let b = take(h, Seg::Bias { len: h, ones: 0..0 }, &mut segs);
                    v.push(ConvLayer { w, b, c_in });
                }
                Body::Conv(v)
            }
            SeqArch::Tcn => {
                let mut v = Vec::new();
                for blk in 0..self.layers {
                    let c_in = if blk == 0 { f } else { h };
                    let w1 = take(h * 2 * c_in, Seg::Weight { len: h * 2 * c_in, fan_in: 2 * c_in, fan_out: 2 * h }, &mut segs);
                    let b1 = take(h, Seg::Bias { len: h, ones: 0..0 }, &mut segs);
                    let w2 = take(h * 2 * h, Seg::Weight { len: h * 2 * h, fan_in: 2 * h, fan_out: 2 * h }, &mut segs);
                    let b2 = take(h, Seg::Bias { len: h, ones: 0..0 }, &mut segs);
                    let proj = (c_in != h).then(|| {
                        let r = take(h * c_in, Seg::Weight { len: h * c_in, fan_in: c_in, fan_out: h }, &mut segs);
                        let rb = take(h, Seg::Bias { len: h, ones: 0..0 }, &mut segs);
                        (r, rb)
                    });
                    v.push(TcnBlock { w1, b1, w2, b2, proj, c_in, dilation: 1 << blk });
                }
                Body::Tcn(v)
            }
        };
        let head_w = take(h, Seg::Weight { len: h, fan_in: h, fan_out: 1 }, &mut segs);
        let head_b = take(1, Seg::Bias { len: 1, ones: 0..0 }, &mut segs);
        (Layout { body, head_w, head_b, total: off }, segs)
    }

    /// A freshly initialized network (Glorot-uniform weights, zero biases).
    pub fn new(arch: SeqArch, steps: usize, channels: usize, hidden: usize, layers: usize, seed: u64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Shape(format!("sequence models need at least 2 steps, got {steps}")));
        }
        if channels == 0 || hidden == 0 || layers == 0 {
            return Err(Error::InvalidConfig("channels, hidden size and layers must be positive".into()));
        }
        let layers = if arch == SeqArch::Tcn { tcn_blocks(steps) } else { layers };
        let mut net = Self { arch, steps, channels, hidden, layers, params: Vec::new(), trace: None };
        let (lay, segs) = net.layout();
        let mut rng = stream(derive_seed(seed, &[0x1417]), 0);
        let mut p = Vec::with_capacity(lay.total);
        for s in segs {
            match s {
                Seg::Weight { len, fan_in, fan_out } => {
                    let a = sqrt(6.0 / (fan_in + fan_out) as f64);
                    p.extend((0..len).map(|_| rng.random_range(-a..a)));
                }
                Seg::Bias { len, ones } => {
                    p.extend((0..len).map(|i| if ones.contains(&i) { 1.0 } else { 0.0 }));
                }
            }
        }
        debug_assert_eq!(p.len(), lay.total);
        net.params = p;
        Ok(net)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.steps * self.channels {
            return Err(Error::Shape(format!(
                "expected {} x {} = {} inputs, got {}",
                self.steps,
                self.channels,
                self.steps * self.channels,
                x.len()
            )));
        }
        Ok(())
    }

    /// Pre-sigmoid score.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let (lay, _) = self.layout();
        Ok(forward(self, &lay, &self.params, x).0)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }
}

// out[r] += sum_c w[r, c] x[c]
#[inline]
fn gemv(out: &mut [f64], w: &[f64], x: &[f64]) {
    let c = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * c..(r + 1) * c];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// out[c] += sum_r w[r, c] d[r]
#[inline]
fn gemv_t(out: &mut [f64], w: &[f64], d: &[f64]) {
    let c = out.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * c..(r + 1) * c];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * dr;
        }
    }
}

// dw[r, c] += d[r] x[c]
#[inline]
fn ger(dw: &mut [f64], d: &[f64], x: &[f64]) {
    let c = x.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (g, v) in dw[r * c..(r + 1) * c].iter_mut().zip(x) {
            *g += dr * v;
        }
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Saved activations. Layer `l` outputs live in `outs[l]` (`T x H`).
struct Tape {
    outs: Vec<Vec<f64>>,
    /// Recurrent: post-activation gates per step. TCN: first conv output.
    aux: Vec<Vec<f64>>,
    /// LSTM cell states; TCN second conv output.
    aux2: Vec<Vec<f64>>,
    /// CNN max-pool argmax per channel.
    argmax: Vec<usize>,
}

fn forward(net: &SequenceNet, lay: &Layout, p: &[f64], x: &[f64]) -> (f64, Tape) {
    let (t_len, h) = (net.steps, net.hidden);
    let mut tape = Tape { outs: Vec::new(), aux: Vec::new(), aux2: Vec::new(), argmax: Vec::new() };
    let feat: Vec<f64> = match &lay.body {
        Body::Rec(layers) => {
            let g = net.arch.gates();
            for (l, rl) in layers.iter().enumerate() {
                let inp: &[f64] = if l == 0 { x } else { &tape.outs[l - 1] };
                let d = rl.d;
                let w = &p[rl.w..rl.w + g * h * d];
                let u = &p[rl.u..rl.u + g * h * h];
                let b = &p[rl.b..rl.b + g * h];
                let mut out = alloc::vec![0.0; t_len * h];
                let mut gates = alloc::vec![0.0; t_len * g * h];
                let mut cells = if net.arch == SeqArch::Lstm { alloc::vec![0.0; t_len * h] } else { Vec::new() };
                let zero = alloc::vec![0.0; h];
                for t in 0..t_len {
                    let xt = &inp[t * d..(t + 1) * d];
                    let prev: Vec<f64> = if t == 0 { zero.clone() } else { out[(t - 1) * h..t * h].to_vec() };
                    let gt = &mut gates[t * g * h..(t + 1) * g * h];
                    match net.arch {
                        SeqArch::Rnn => {
                            gt.copy_from_slice(b);
                            gemv(gt, w, xt);
                            gemv(gt, u, &prev);
                            for k in 0..h {
                                gt[k] = tanh(gt[k]);
                                out[t * h + k] = gt[k];
                            }
                        }
                        SeqArch::Lstm => {
                            gt.copy_from_slice(b);
                            gemv(gt, w, xt);
                            gemv(gt, u, &prev);
                            let c_prev: Vec<f64> = if t == 0 { zero.clone() } else { cells[(t - 1) * h..t * h].to_vec() };
                            for k in 0..h {
                                let i = sigmoid(gt[k]);
                                let f = sigmoid(gt[h + k]);
                                let gg = tanh(gt[2 * h + k]);
                                let o = sigmoid(gt[3 * h + k]);
                                gt[k] = i;
                                gt[h + k] = f;
                                gt[2 * h + k] = gg;
                                gt[3 * h + k] = o;
                                let c = f * c_prev[k] + i * gg;
                                cells[t * h + k] = c;
                                out[t * h + k] = o * tanh(c);
                            }
                        }
                        SeqArch::Gru => {
                            gt.copy_from_slice(b);
                            gemv(&mut gt[..2 * h], &w[..2 * h * d], xt);
                            gemv(&mut gt[..2 * h], &u[..2 * h * h], &prev);
                            for k in 0..2 * h {
                                gt[k] = sigmoid(gt[k]);
                            }
                            let rh: Vec<f64> = (0..h).map(|k| gt[h + k] * prev[k]).collect();
                            gemv(&mut gt[2 * h..], &w[2 * h * d..], xt);
                            gemv(&mut gt[2 * h..], &u[2 * h * h..], &rh);
                            for k in 0..h {
                                let c = tanh(gt[2 * h + k]);
                                gt[2 * h + k] = c;
                                let z = gt[k];
                                out[t * h + k] = z * prev[k] + (1.0 - z) * c;
                            }
                        }
                        SeqArch::Cnn | SeqArch::Tcn => unreachable!(),
                    }
                }
                tape.outs.push(out);
                tape.aux.push(gates);
                tape.aux2.push(cells);
            }
            tape.outs.last().map(|o| o[(t_len - 1) * h..].to_vec()).unwrap_or_default()
        }
        Body::Conv(layers) => {
            for (l, cl) in layers.iter().enumerate() {
                let inp: &[f64] = if l == 0 { x } else { &tape.outs[l - 1] };
                let c_in = cl.c_in;
                let w = &p[cl.w..cl.w + h * 3 * c_in];
                let b = &p[cl.b..cl.b + h];
                let mut out = alloc::vec![0.0; t_len * h];
                for t in 0..t_len {
                    for o in 0..h {
                        let mut s = b[o];
                        for k in 0..3 {
                            let src = t as isize + k as isize - 1;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let xs = &inp[src as usize * c_in..(src as usize + 1) * c_in];
                            let wr = &w[(o * 3 + k) * c_in..(o * 3 + k + 1) * c_in];
                            s += wr.iter().zip(xs).map(|(a, v)| a * v).sum::<f64>();
                        }
                        out[t * h + o] = relu(s);
                    }
                }
                tape.outs.push(out);
            }
            let last = tape.outs.last().unwrap();
            let mut pooled = alloc::vec![f64::NEG_INFINITY; h];
            tape.argmax = alloc::vec![0; h];
            for t in 0..t_len {
                for o in 0..h {
                    if last[t * h + o] > pooled[o] {
                        pooled[o] = last[t * h + o];
                        tape.argmax[o] = t;
                    }
                }
            }
            pooled
        }
        Body::Tcn(blocks) => {
            for (bi, blk) in blocks.iter().enumerate() {
                let inp: Vec<f64> = if bi == 0 { x.to_vec() } else { tape.outs[bi - 1].clone() };
                let h1 = causal_conv(p, blk.w1, blk.b1, &inp, blk.c_in, h, t_len, blk.dilation);
                let h2 = causal_conv(p, blk.w2, blk.b2, &h1, h, h, t_len, blk.dilation);
                let mut out = alloc::vec![0.0; t_len * h];
                for t in 0..t_len {
                    let xt = &inp[t * blk.c_in..(t + 1) * blk.c_in];
                    let mut res = alloc::vec![0.0; h];
                    match blk.proj {
                        Some((r, rb)) => {
                            res.copy_from_slice(&p[rb..rb + h]);
                            gemv(&mut res, &p[r..r + h * blk.c_in], xt);
                        }
                        None => res.copy_from_slice(xt),
                    }
                    for o in 0..h {
                        out[t * h + o] = relu(h2[t * h + o] + res[o]);
                    }
                }
                tape.aux.push(h1);
                tape.aux2.push(h2);
                tape.outs.push(out);
            }
            tape.outs.last().map(|o| o[(t_len - 1) * h..].to_vec()).unwrap_or_default()
        }
    };
    let z = p[lay.head_b] + p[lay.head_w..lay.head_w + h].iter().zip(&feat).map(|(a, v)| a * v).sum::<f64>();
    (z, tape)
}

/// ReLU of a kernel-2 causal convolution with taps at `t - dilation` and `t`.
#[allow(clippy::too_many_arguments)]
fn causal_conv(p: &[f64], w: usize, b: usize, inp: &[f64], c_in: usize, h: usize, t_len: usize, dil: usize) -> Vec<f64> {
    let w = &p[w..w + h * 2 * c_in];
    let b = &p[b..b + h];
    let mut out = alloc::vec![0.0; t_len * h];
    for t in 0..t_len {
        for o in 0..h {
            let mut s = b[o];
            if t >= dil {
                let xs = &inp[(t - dil) * c_in..(t - dil + 1) * c_in];
                s += w[o * 2 * c_in..o * 2 * c_in + c_in].iter().zip(xs).map(|(a, v)| a * v).sum::<f64>();
            }
            let xs = &inp[t * c_in..(t + 1) * c_in];
            s += w[o * 2 * c_in + c_in..(o + 1) * 2 * c_in].iter().zip(xs).map(|(a, v)| a * v).sum::<f64>();
            out[t * h + o] = relu(s);
        }
    }
    out
}

/// Backward pass of `causal_conv` given the gradient on its (post-ReLU)
/// output. Accumulates parameter gradients and the input gradient.
#[allow(clippy::too_many_arguments)]
fn causal_conv_backward(
    p: &[f64],
    grad: &mut [f64],
    w: usize,
    b: usize,
    inp: &[f64],
    out: &[f64],
    d_out: &[f64],
    d_in: &mut [f64],
    c_in: usize,
    h: usize,
    t_len: usize,
    dil: usize,
) {
    for t in 0..t_len {
        for o in 0..h {
            if out[t * h + o] <= 0.0 {
                continue;
            }
            let dp = d_out[t * h + o];
            if dp == 0.0 {
                continue;
            }
            grad[b + o] += dp;
            let row0 = w + o * 2 * c_in;
            if t >= dil {
                let s = t - dil;
                for c in 0..c_in {
                    grad[row0 + c] += dp * inp[s * c_in + c];
                    d_in[s * c_in + c] += dp * p[row0 + c];
                }
            }
            for c in 0..c_in {
                grad[row0 + c_in + c] += dp * inp[t * c_in + c];
                d_in[t * c_in + c] += dp * p[row0 + c_in + c];
            }
        }
    }
}

/// Accumulates `dz * d logit / d params` into `grad`.
fn backward(net: &SequenceNet, lay: &Layout, p: &[f64], x: &[f64], tape: &Tape, dz: f64, grad: &mut [f64]) {
    let (t_len, h) = (net.steps, net.hidden);
    grad[lay.head_b] += dz;
    let head = &p[lay.head_w..lay.head_w + h];
    match &lay.body {
        Body::Rec(layers) => {
            let g = net.arch.gates();
            let top = tape.outs.last().unwrap();
            for k in 0..h {
                grad[lay.head_w + k] += dz * top[(t_len - 1) * h + k];
            }
            let mut d_out = alloc::vec![0.0; t_len * h];
            for k in 0..h {
                d_out[(t_len - 1) * h + k] = dz * head[k];
            }
            for (l, rl) in layers.iter().enumerate().rev() {
                let inp: &[f64] = if l == 0 { x } else { &tape.outs[l - 1] };
                let d = rl.d;
                let out = &tape.outs[l];
                let gates = &tape.aux[l];
                let cells = &tape.aux2[l];
                let mut d_in = alloc::vec![0.0; t_len * d];
                let mut dh_next = alloc::vec![0.0; h];
                let mut dc_next = alloc::vec![0.0; h];
                let mut da = alloc::vec![0.0; g * h];
                let zero = alloc::vec![0.0; h];
                for t in (0..t_len).rev() {
                    let xt = &inp[t * d..(t + 1) * d];
                    let prev: &[f64] = if t == 0 { &zero } else { &out[(t - 1) * h..t * h] };
                    let gt = &gates[t * g * h..(t + 1) * g * h];
                    let dh: Vec<f64> = (0..h).map(|k| d_out[t * h + k] + dh_next[k]).collect();
                    let mut dprev = alloc::vec![0.0; h];
                    match net.arch {
                        SeqArch::Rnn => {
                            for k in 0..h {
                                da[k] = dh[k] * (1.0 - gt[k] * gt[k]);
                            }
                            ger(&mut grad[rl.u..rl.u + h * h], &da, prev);
                            gemv_t(&mut dprev, &p[rl.u..rl.u + h * h], &da);
                        }
                        SeqArch::Lstm => {
                            let c_prev: &[f64] = if t == 0 { &zero } else { &cells[(t - 1) * h..t * h] };
                            for k in 0..h {
                                let (i, f, gg, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                                let tc = tanh(cells[t * h + k]);
                                let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                                da[k] = dc * gg * i * (1.0 - i);
                                da[h + k] = dc * c_prev[k] * f * (1.0 - f);
                                da[2 * h + k] = dc * i * (1.0 - gg * gg);
                                da[3 * h + k] = dh[k] * tc * o * (1.0 - o);
                                dc_next[k] = dc * f;
                            }
                            ger(&mut grad[rl.u..rl.u + g * h * h], &da, prev);
                            gemv_t(&mut dprev, &p[rl.u..rl.u + g * h * h], &da);
                        }
                        SeqArch::Gru => {
                            let mut d_rh = alloc::vec![0.0; h];
                            for k in 0..h {
                                let (z, c) = (gt[k], gt[2 * h + k]);
                                let dzg = dh[k] * (prev[k] - c);
                                let dc = dh[k] * (1.0 - z);
                                dprev[k] += dh[k] * z;
                                da[2 * h + k] = dc * (1.0 - c * c);
                                da[k] = dzg * z * (1.0 - z);
                            }
                            let uh = rl.u + 2 * h * h;
                            let rh: Vec<f64> = (0..h).map(|k| gt[h + k] * prev[k]).collect();
                            ger(&mut grad[uh..uh + h * h], &da[2 * h..], &rh);
                            gemv_t(&mut d_rh, &p[uh..uh + h * h], &da[2 * h..]);
                            for k in 0..h {
                                let r = gt[h + k];
                                da[h + k] = d_rh[k] * prev[k] * r * (1.0 - r);
                                dprev[k] += d_rh[k] * r;
                            }
                            ger(&mut grad[rl.u..rl.u + 2 * h * h], &da[..2 * h], prev);
                            gemv_t(&mut dprev, &p[rl.u..rl.u + 2 * h * h], &da[..2 * h]);
                        }
                        SeqArch::Cnn | SeqArch::Tcn => unreachable!(),
                    }
                    for (gb, v) in grad[rl.b..rl.b + g * h].iter_mut().zip(&da) {
                        *gb += v;
                    }
                    ger(&mut grad[rl.w..rl.w + g * h * d], &da, xt);
                    gemv_t(&mut d_in[t * d..(t + 1) * d], &p[rl.w..rl.w + g * h * d], &da);
                    dh_next = dprev;
                }
                d_out = d_in;
            }
        }
        Body::Conv(layers) => {
            let mut d_out = alloc::vec![0.0; t_len * h];
            let last = tape.outs.last().unwrap();
            for o in 0..h {
                let t = tape.argmax[o];
                grad[lay.head_w + o] += dz * last[t * h + o];
                d_out[t * h + o] = dz * head[o];
            }
            for (l, cl) in layers.iter().enumerate().rev() {
                let inp: &[f64] = if l == 0 { x } else { &tape.outs[l - 1] };
                let out = &tape.outs[l];
                let c_in = cl.c_in;
                let mut d_in = alloc::vec![0.0; t_len * c_in];
                for t in 0..t_len {
                    for o in 0..h {
                        if out[t * h + o] <= 0.0 || d_out[t * h + o] == 0.0 {
                            continue;
                        }
                        let dp = d_out[t * h + o];
                        grad[cl.b + o] += dp;
                        for k in 0..3 {
                            let src = t as isize + k as isize - 1;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let s = src as usize;
                            let row = cl.w + (o * 3 + k) * c_in;
                            for c in 0..c_in {
                                grad[row + c] += dp * inp[s * c_in + c];
                                d_in[s * c_in + c] += dp * p[row + c];
                            }
                        }
                    }
                }
                d_out = d_in;
            }
        }
        Body::Tcn(blocks) => {
            let top = tape.outs.last().unwrap();
            for k in 0..h {
                grad[lay.head_w + k] += dz * top[(t_len - 1) * h + k];
            }
            let mut d_out = alloc::vec![0.0; t_len * h];
            for k in 0..h {
                d_out[(t_len - 1) * h + k] = dz * head[k];
            }
            for (bi, blk) in blocks.iter().enumerate().rev() {
                let inp: &[f64] = if bi == 0 { x } else { &tape.outs[bi - 1] };
                let out = &tape.outs[bi];
                let (h1, h2) = (&tape.aux[bi], &tape.aux2[bi]);
                // Through the output ReLU; the sum splits into both branches.
                let d_sum: Vec<f64> = d_out.iter().zip(out).map(|(d, o)| if *o > 0.0 { *d } else { 0.0 }).collect();
                let mut d_in = alloc::vec![0.0; t_len * blk.c_in];
                match blk.proj {
                    Some((r, rb)) => {
                        for t in 0..t_len {
                            let ds = &d_sum[t * h..(t + 1) * h];
                            for (gb, v) in grad[rb..rb + h].iter_mut().zip(ds) {
                                *gb += v;
                            }
                            ger(&mut grad[r..r + h * blk.c_in], ds, &inp[t * blk.c_in..(t + 1) * blk.c_in]);
                            gemv_t(&mut d_in[t * blk.c_in..(t + 1) * blk.c_in], &p[r..r + h * blk.c_in], ds);
                        }
                    }
                    None => {
                        for (a, b) in d_in.iter_mut().zip(&d_sum) {
                            *a += b;
                        }
                    }
                }
                let mut d_h1 = alloc::vec![0.0; t_len * h];
                causal_conv_backward(p, grad, blk.w2, blk.b2, h1, h2, &d_sum, &mut d_h1, h, h, t_len, blk.dilation);
                causal_conv_backward(p, grad, blk.w1, blk.b1, inp, h1, &d_h1, &mut d_in, blk.c_in, h, t_len, blk.dilation);
                d_out = d_in;
            }
        }
    }
}

/// Binary cross-entropy over `rows` and its gradient with respect to every
/// parameter, evaluated at `params`.
pub fn loss_and_gradient(net: &SequenceNet, params: &[f64], x: &Matrix, y: &[bool], rows: &[usize]) -> (f64, Vec<f64>) {
    let (lay, _) = net.layout();
    let mut grad = alloc::vec![0.0; params.len()];
    let mut loss = 0.0;
    for &i in rows {
        let (z, tape) = forward(net, &lay, params, x.row(i));
        loss += if y[i] { softplus(-z) } else { softplus(z) };
        let dz = sigmoid(z) - if y[i] { 1.0 } else { 0.0 };
        backward(net, &lay, params, x.row(i), &tape, dz, &mut grad);
    }
    (loss, grad)
}

/// Largest relative error between the analytic gradient and central finite
/// differences (step `h`) over all parameters. The denominator is floored
/// at 1e-6 so parameters with vanishing gradients do not amplify rounding.
pub fn gradient_check(net: &SequenceNet, x: &Matrix, y: &[bool], h: f64) -> f64 {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let (_, analytic) = loss_and_gradient(net, &net.params, x, y, &rows);
    let mut p = net.params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let (lp, _) = loss_and_gradient(net, &p, x, y, &rows);
        p[k] = orig - h;
        let (lm, _) = loss_and_gradient(net, &p, x, y, &rows);
        p[k] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    worst
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - crate::math::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - crate::math::pow(Self::B2, self.t as f64);
        for k in 0..params.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * grad[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / (sqrt(self.v[k] / c2) + Self::EPS);
        }
    }
}

/// Trains a network on flattened sequences `x` (`n x steps*channels`).
pub fn train_sequence(arch: SeqArch, x: &Matrix, steps: usize, y: &[bool], hp: &SequenceParams, seed: u64) -> Result<SequenceNet> {
    super::check_training_data(x, y)?;
    if steps < 2 {
        return Err(Error::Shape(format!("sequence models need at least 2 steps, got {steps}")));
    }
    if x.cols() % steps != 0 {
        return Err(Error::Shape(format!("{} columns is not a multiple of {steps} steps", x.cols())));
    }
    hp.validate()?;
    let channels = x.cols() / steps;
    let mut net = SequenceNet::new(arch, steps, channels, hp.hidden, hp.layers, seed)?;
    let (lay, _) = net.layout();

    let n_pos = y.iter().filter(|&&v| v).count();
    let can_validate = hp.validation_fraction > 0.0 && n_pos >= 2 && y.len() - n_pos >= 2;
    let (train_idx, val_idx) = if can_validate {
        stratified_split(y, 1.0 - hp.validation_fraction, derive_seed(seed, &[0x7A11]))?
    } else {
        ((0..y.len()).collect(), Vec::new())
    };
    let val_y: Vec<bool> = val_idx.iter().map(|&i| y[i]).collect();

    let mut adam = Adam { m: alloc::vec![0.0; net.n_params()], v: alloc::vec![0.0; net.n_params()], t: 0, lr: hp.learning_rate };
    let mut params = core::mem::take(&mut net.params);
    let mut best = params.clone();
    let mut best_auc: Option<f64> = None;
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut order = train_idx.clone();
    let mut losses = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..hp.epochs {
        epochs_run = epoch + 1;
        order.copy_from_slice(&train_idx);
        shuffle(&mut order, &mut stream(derive_seed(seed, &[0xE90C, epoch as u64]), 0));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let (loss, mut grad) = loss_and_gradient(&net, &params, x, y, batch);
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let norm = sqrt(grad.iter().map(|g| g * g).sum::<f64>());
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("{arch:?} gradient became non-finite in epoch {epoch}")));
            }
            if norm > hp.clip_norm {
                let c = hp.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= c);
            }
            adam.step(&mut params, &grad);
        }
        losses.push(epoch_loss / order.len() as f64);
        if val_idx.is_empty() {
            continue;
        }
        let scores: Vec<f64> = val_idx.iter().map(|&i| forward(&net, &lay, &params, x.row(i)).0).collect();
        let auc = auroc(&scores, &val_y)?;
        if best_auc.is_none_or(|b| auc > b) {
            best_auc = Some(auc);
            best.copy_from_slice(&params);
            best_epoch = epoch + 1;
            wait = 0;
        } else {
            wait += 1;
            if wait >= hp.patience {
                break;
            }
        }
    }
    net.params = if best_auc.is_some() { best } else { params };
    net.trace = Some(TrainingTrace { epochs_run, best_epoch, best_val_auroc: best_auc, train_loss: losses });
    Ok(net)
}
