//! Actor-critic MLP: two shared hidden layers feeding a 4-way action head and
//! a scalar value head. Parameters live in one flat buffer so gradients,
//! Adam moments and gradient-norm clipping work on plain slices.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};

pub const ACTIONS: usize = Action::COUNT;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
}

impl NetShape {
    pub fn new(input: usize) -> Self {
        NetShape {
            input,
            hidden: DEFAULT_HIDDEN,
        }
    }

    pub fn param_count(&self) -> usize {
        let (i, h) = (self.input, self.hidden);
        h * i + h + h * h + h + ACTIONS * h + ACTIONS + h + 1
    }

    fn offsets(&self) -> Offsets {
        let (i, h) = (self.input, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let wa = b2 + h;
        let ba = wa + ACTIONS * h;
        let wv = ba + ACTIONS;
        let bv = wv + h;
        Offsets { w1, b1, w2, b2, wa, ba, wv, bv }
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wa: usize,
    ba: usize,
    wv: usize,
    bv: usize,
}

/// Named tensor views, in storage order, for checkpoint headers.
pub const TENSOR_NAMES: [&str; 8] = ["w1", "b1", "w2", "b2", "w_act", "b_act", "w_val", "b_val"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: NetShape,
    pub activation: Activation,
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: NetShape, activation: Activation) -> Self {
        PolicyParams {
            shape,
            activation,
            data: vec![0.0; shape.param_count()],
        }
    }

    /// Orthogonal initialization: gain √2 on the trunk, 0.01 on the action
    /// head, 1.0 on the value head, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, activation: Activation, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape, activation);
        let o = shape.offsets();
        let (i, h) = (shape.input, shape.hidden);
        let sqrt2 = core::f64::consts::SQRT_2;
        p.data[o.w1..o.b1].copy_from_slice(&orthogonal(h, i, sqrt2, rng));
        p.data[o.w2..o.b2].copy_from_slice(&orthogonal(h, h, sqrt2, rng));
        p.data[o.wa..o.ba].copy_from_slice(&orthogonal(ACTIONS, h, 0.01, rng));
        p.data[o.wv..o.bv].copy_from_slice(&orthogonal(1, h, 1.0, rng));
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(name, rows, cols, slice)` for every tensor in storage order.
    pub fn tensors(&self) -> [(&'static str, usize, usize, &[f64]); 8] {
        let o = self.shape.offsets();
        let (i, h) = (self.shape.input, self.shape.hidden);
        let d = &self.data;
        [
            (TENSOR_NAMES[0], h, i, &d[o.w1..o.b1]),
            (TENSOR_NAMES[1], h, 1, &d[o.b1..o.w2]),
            (TENSOR_NAMES[2], h, h, &d[o.w2..o.b2]),
            (TENSOR_NAMES[3], h, 1, &d[o.b2..o.wa]),
            (TENSOR_NAMES[4], ACTIONS, h, &d[o.wa..o.ba]),
            (TENSOR_NAMES[5], ACTIONS, 1, &d[o.ba..o.wv]),
            (TENSOR_NAMES[6], 1, h, &d[o.wv..o.bv]),
            (TENSOR_NAMES[7], 1, 1, &d[o.bv..]),
        ]
    }

    fn check_input(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.shape.input {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input,
                got: obs.len(),
            });
        }
        Ok(())
    }
}

fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let rmat = qr.r();
    for j in 0..c {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if tall { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forward {
    pub logits: [f64; ACTIONS],
    pub value: f64,
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

pub fn forward(params: &PolicyParams, obs: &[f64]) -> Result<Forward> {
    let mut act = Activations::default();
    forward_with(params, obs, &mut act)
}

pub fn forward_with(params: &PolicyParams, obs: &[f64], act: &mut Activations) -> Result<Forward> {
    params.check_input(obs)?;
    let o = params.shape.offsets();
    let (n_in, h) = (params.shape.input, params.shape.hidden);
    let d = &params.data;
    let f = params.activation;
    act.h1.resize(h, 0.0);
    act.h2.resize(h, 0.0);

    for j in 0..h {
        let row = &d[o.w1 + j * n_in..o.w1 + (j + 1) * n_in];
        let z = d[o.b1 + j] + dot(row, obs);
        act.h1[j] = f.apply(z);
    }
    for j in 0..h {
        let row = &d[o.w2 + j * h..o.w2 + (j + 1) * h];
        let z = d[o.b2 + j] + dot(row, &act.h1);
        act.h2[j] = f.apply(z);
    }
    let mut logits = [0.0; ACTIONS];
    for (k, l) in logits.iter_mut().enumerate() {
        *l = d[o.ba + k] + dot(&d[o.wa + k * h..o.wa + (k + 1) * h], &act.h2);
    }
    let value = d[o.bv] + dot(&d[o.wv..o.wv + h], &act.h2);
    Ok(Forward { logits, value })
}

/// Reverse pass for one sample: adds d(loss)/d(params) into `grad`, given
/// the loss gradient with respect to the logits and the value.
/// `act` must hold the activations of the matching forward pass.
pub fn backward(
    params: &PolicyParams,
    obs: &[f64],
    act: &mut Activations,
    dlogits: &[f64; ACTIONS],
    dvalue: f64,
    grad: &mut [f64],
) {
    let o = params.shape.offsets();
    let (n_in, h) = (params.shape.input, params.shape.hidden);
    let d = &params.data;
    let f = params.activation;
    act.d1.clear();
    act.d1.resize(h, 0.0);
    act.d2.clear();
    act.d2.resize(h, 0.0);

    // Heads.
    for k in 0..ACTIONS {
        let g = dlogits[k];
        if g == 0.0 {
            continue;
        }
        grad[o.ba + k] += g;
        let w = &d[o.wa + k * h..o.wa + (k + 1) * h];
        let gw = &mut grad[o.wa + k * h..o.wa + (k + 1) * h];
        for j in 0..h {
            gw[j] += g * act.h2[j];
            act.d2[j] += g * w[j];
        }
    }
    if dvalue != 0.0 {
        grad[o.bv] += dvalue;
        for j in 0..h {
            grad[o.wv + j] += dvalue * act.h2[j];
            act.d2[j] += dvalue * d[o.wv + j];
        }
    }

    // Second hidden layer.
    for j in 0..h {
        act.d2[j] *= f.derivative(act.h2[j]);
    }
    for j in 0..h {
        let g = act.d2[j];
        if g == 0.0 {
            continue;
        }
        grad[o.b2 + j] += g;
        let w = &d[o.w2 + j * h..o.w2 + (j + 1) * h];
        let gw = &mut grad[o.w2 + j * h..o.w2 + (j + 1) * h];
        for i in 0..h {
            gw[i] += g * act.h1[i];
            act.d1[i] += g * w[i];
        }
    }

    // First hidden layer.
    for j in 0..h {
        let g = act.d1[j] * f.derivative(act.h1[j]);
        if g == 0.0 {
            continue;
        }
        grad[o.b1 + j] += g;
        let gw = &mut grad[o.w1 + j * n_in..o.w1 + (j + 1) * n_in];
        for (gwi, xi) in gw.iter_mut().zip(obs) {
            *gwi += g * xi;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(logits: &[f64; ACTIONS]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(logits.iter().map(|l| libm::exp(l - m)).sum::<f64>())
}

pub fn log_softmax(logits: &[f64; ACTIONS]) -> [f64; ACTIONS] {
    let lse = log_sum_exp(logits);
    logits.map(|l| l - lse)
}

pub fn softmax(logits: &[f64; ACTIONS]) -> [f64; ACTIONS] {
    log_softmax(logits).map(libm::exp)
}

/// Log-probability of `action` and the entropy of the action distribution.
pub fn log_prob_entropy(logits: &[f64; ACTIONS], action: usize) -> (f64, f64) {
    let logp = log_softmax(logits);
    let entropy = -logp.iter().map(|lp| libm::exp(*lp) * lp).sum::<f64>();
    (logp[action], entropy)
}

pub fn sample_action<R: Rng + ?Sized>(logits: &[f64; ACTIONS], rng: &mut R) -> usize {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    // Rounding left `acc` a hair below 1.
    p.iter()
        .enumerate()
        .rev()
        .find(|(_, pk)| **pk > 0.0)
        .map_or(ACTIONS - 1, |(k, _)| k)
}

pub fn argmax(logits: &[f64; ACTIONS]) -> usize {
    let mut best = 0;
    for k in 1..ACTIONS {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn for_params(params: &PolicyParams) -> Self {
        Self::new(params.len(), AdamConfig::default())
    }
}

/// One Adam update of `params` in place. A non-finite gradient aborts the
/// update and leaves both parameters and moments untouched.
pub fn optimizer_step(params: &mut [f64], state: &mut OptimizerState, grad: &[f64], lr: f64) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(alloc::format!(
            "non-finite gradient at parameter {i}"
        )));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(beta1, t);
    let c2 = 1.0 - libm::pow(beta2, t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
    Ok(())
}

/// Rescales `grad` to at most `max_norm` in L2; returns the norm before
/// clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
