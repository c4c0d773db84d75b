//! Pair-classifier head: a per-face projection, concatenation, two hidden
//! layers and a two-way softmax. Index 0 of the output is "same photo".
//!
//! ```text
//! pa = relu(P xa + p)        pb = relu(P' xb + p')      (P' = P when shared)
//! h1 = relu(W1 [pa; pb] + b1)
//! h2 = relu(W2 (h1 * mask) + b2)
//! z  = W3 h2 + b3,  softmax(z)
//! ```

mod io;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use io::{format_params, load_params, parse_params, save_params, ScorerFile, FORMAT_TAG};
pub use train::{train, EpochLog, PairSample, StopReason, TrainLog};

fn default_input_dim() -> usize {
    crate::features::CUE_DIM
}
fn default_proj_dim() -> usize {
    512
}
fn default_hidden() -> (usize, usize) {
    (1024, 256)
}
fn default_dropout() -> f64 {
    0.1
}
fn default_lr0() -> f64 {
    0.1
}
fn default_lr_factor() -> f64 {
    0.5
}
fn default_lr_step() -> usize {
    5
}
fn default_max_epochs() -> usize {
    30
}
fn default_patience() -> usize {
    3
}
fn default_batch() -> usize {
    64
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: (usize, usize),
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_lr_factor")]
    pub lr_factor: f64,
    #[serde(default = "default_lr_step")]
    pub lr_epoch_step: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// One projection for both faces, or one per face.
    #[serde(default = "yes")]
    pub shared_projection: bool,
    /// Standardize inputs with statistics of the training vectors.
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            input_dim: default_input_dim(),
            proj_dim: default_proj_dim(),
            hidden_dims: default_hidden(),
            dropout_p: default_dropout(),
            lr0: default_lr0(),
            lr_factor: default_lr_factor(),
            lr_epoch_step: default_lr_step(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            batch_size: default_batch(),
            shared_projection: true,
            standardize: true,
            seed: 0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("proj_dim", self.proj_dim),
            ("hidden_dims.0", self.hidden_dims.0),
            ("hidden_dims.1", self.hidden_dims.1),
            ("lr_epoch_step", self.lr_epoch_step),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::validation(format!(
                "dropout_p {} must be in [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::validation(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::validation(format!(
                "lr_factor {} must be in (0, 1]",
                self.lr_factor
            )));
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch.
pub fn lr_at(epoch: usize, cfg: &ScorerConfig) -> f64 {
    let steps = (epoch / cfg.lr_epoch_step) as i32;
    cfg.lr0 * cfg.lr_factor.powi(steps)
}

/// Fully connected layer; `weight` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn uniform(out_dim: usize, in_dim: usize, rng: &mut rng::Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..out_dim * in_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Dense {
            weight,
            ..Dense::zeros(out_dim, in_dim)
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weight
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }

    /// Adds `delta ⊗ x` to the weight gradient and `delta` to the bias
    /// gradient, and returns `Wᵀ delta` when `want_input` is set.
    fn accumulate(&self, grad: &mut Dense, delta: &[f64], x: &[f64], want_input: bool) -> Vec<f64> {
        let mut dx = if want_input { vec![0.0; self.in_dim] } else { Vec::new() };
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            let row = o * self.in_dim..(o + 1) * self.in_dim;
            for (g, v) in grad.weight[row.clone()].iter_mut().zip(x) {
                *g += d * v;
            }
            if want_input {
                for (acc, w) in dx.iter_mut().zip(&self.weight[row]) {
                    *acc += d * w;
                }
            }
        }
        dx
    }

    /// Weights row-major, then biases.
    pub fn flat(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(&mut self.bias)
    }
}

/// Per-dimension affine map `(x - shift) * scale` applied before the
/// projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    /// Mean and inverse standard deviation per dimension. Constant
    /// dimensions are centered and left unscaled.
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for v in vectors {
            n += 1;
            for (i, x) in v.iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        let n = n.max(1) as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        InputNorm { shift, scale }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub input_norm: Option<InputNorm>,
    pub projection: Dense,
    /// Second-face projection when projections are not shared.
    pub projection_b: Option<Dense>,
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub output: Dense,
}

impl ScorerParams {
    /// Trainable layers in serialization order.
    pub fn layers(&self) -> Vec<&Dense> {
        let mut out = vec![&self.projection];
        out.extend(self.projection_b.as_ref());
        out.extend([&self.hidden1, &self.hidden2, &self.output]);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out = vec![&mut self.projection];
        out.extend(self.projection_b.as_mut());
        out.extend([&mut self.hidden1, &mut self.hidden2, &mut self.output]);
        out
    }

    pub fn input_dim(&self) -> usize {
        self.projection.in_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.out_dim, d.in_dim);
        ScorerParams {
            input_norm: None,
            projection: z(&self.projection),
            projection_b: self.projection_b.as_ref().map(z),
            hidden1: z(&self.hidden1),
            hidden2: z(&self.hidden2),
            output: z(&self.output),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.flat().all(|v| v.is_finite()))
    }
}

/// Uniform weights in ±1/√fan_in, zero biases.
pub fn init_params(cfg: &ScorerConfig) -> Result<ScorerParams> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, 0);
    let (h1, h2) = cfg.hidden_dims;
    let projection = Dense::uniform(cfg.proj_dim, cfg.input_dim, &mut r);
    let projection_b = (!cfg.shared_projection).then(|| Dense::uniform(cfg.proj_dim, cfg.input_dim, &mut r));
    Ok(ScorerParams {
        input_norm: None,
        projection,
        projection_b,
        hidden1: Dense::uniform(h1, 2 * cfg.proj_dim, &mut r),
        hidden2: Dense::uniform(h2, h1, &mut r),
        output: Dense::uniform(2, h2, &mut r),
    })
}

/// Gradient with one entry per trainable layer, in `ScorerParams::layers`
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros(params: &ScorerParams) -> Self {
        let z = params.zeros_like();
        Gradients {
            layers: z.layers().into_iter().cloned().collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.flat_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

struct Trace {
    xa: Vec<f64>,
    xb: Vec<f64>,
    pa: Vec<f64>,
    pb: Vec<f64>,
    h1: Vec<f64>,
    h1_dropped: Vec<f64>,
    h2: Vec<f64>,
    logits: [f64; 2],
}

fn check_dims(params: &ScorerParams, va: &[f64], vb: &[f64], mask: Option<&[f64]>) -> Result<()> {
    let d = params.input_dim();
    for v in [va, vb] {
        if v.len() != d {
            return Err(Error::Dim {
                expected: d,
                got: v.len(),
            });
        }
    }
    if let Some(m) = mask {
        if m.len() != params.hidden1.out_dim {
            return Err(Error::Dim {
                expected: params.hidden1.out_dim,
                got: m.len(),
            });
        }
    }
    Ok(())
}

fn trace(params: &ScorerParams, va: &[f64], vb: &[f64], mask: Option<&[f64]>) -> Result<Trace> {
    check_dims(params, va, vb, mask)?;
    let (xa, xb) = match &params.input_norm {
        Some(n) => (n.apply(va), n.apply(vb)),
        None => (va.to_vec(), vb.to_vec()),
    };
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    params.projection.apply(&xa, &mut pa);
    params
        .projection_b
        .as_ref()
        .unwrap_or(&params.projection)
        .apply(&xb, &mut pb);
    relu_in_place(&mut pa);
    relu_in_place(&mut pb);

    let mut concat = Vec::with_capacity(pa.len() + pb.len());
    concat.extend_from_slice(&pa);
    concat.extend_from_slice(&pb);
    let mut h1 = Vec::new();
    params.hidden1.apply(&concat, &mut h1);
    relu_in_place(&mut h1);

    let h1_dropped = match mask {
        Some(m) => h1.iter().zip(m).map(|(h, k)| h * k).collect(),
        None => h1.clone(),
    };
    let mut h2 = Vec::new();
    params.hidden2.apply(&h1_dropped, &mut h2);
    relu_in_place(&mut h2);

    let mut z = Vec::new();
    params.output.apply(&h2, &mut z);
    Ok(Trace {
        xa,
        xb,
        pa,
        pb,
        h1,
        h1_dropped,
        h2,
        logits: [z[0], z[1]],
    })
}

pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = logits.map(|z| (z - m).exp());
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Output logits `(same, different)`.
pub fn forward_logits(params: &ScorerParams, va: &[f64], vb: &[f64], mask: Option<&[f64]>) -> Result<[f64; 2]> {
    Ok(trace(params, va, vb, mask)?.logits)
}

/// Probabilities `(p_same, p_diff)`. `mask` multiplies the first hidden
/// layer's activations and already includes the inverted-dropout scale.
pub fn forward(params: &ScorerParams, va: &[f64], vb: &[f64], mask: Option<&[f64]>) -> Result<[f64; 2]> {
    Ok(softmax(forward_logits(params, va, vb, mask)?))
}

fn class_index(positive: bool) -> usize {
    if positive {
        0
    } else {
        1
    }
}

/// Cross-entropy of the logits against the label, via log-sum-exp.
pub fn loss(logits: [f64; 2], positive: bool) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[class_index(positive)]
}

/// Adds the gradient of the loss for one example to `grads` and returns the
/// loss.
pub fn backward_into(
    params: &ScorerParams,
    va: &[f64],
    vb: &[f64],
    positive: bool,
    mask: Option<&[f64]>,
    grads: &mut Gradients,
) -> Result<f64> {
    let t = trace(params, va, vb, mask)?;
    let shared = params.projection_b.is_none();
    let (g_proj, rest) = grads.layers.split_first_mut().expect("gradient layers");
    let (g_proj_b, rest) = if shared {
        (None, rest)
    } else {
        let (b, r) = rest.split_first_mut().expect("gradient layers");
        (Some(b), r)
    };
    let [g_h1, g_h2, g_out] = rest else {
        unreachable!("gradient layout mismatch");
    };

    let p = softmax(t.logits);
    let mut d_logits = p;
    d_logits[class_index(positive)] -= 1.0;

    let mut d_h2 = params.output.accumulate(g_out, &d_logits, &t.h2, true);
    gate(&mut d_h2, &t.h2);
    let mut d_h1 = params.hidden2.accumulate(g_h2, &d_h2, &t.h1_dropped, true);
    if let Some(m) = mask {
        d_h1.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
    }
    gate(&mut d_h1, &t.h1);

    let mut concat = Vec::with_capacity(t.pa.len() * 2);
    concat.extend_from_slice(&t.pa);
    concat.extend_from_slice(&t.pb);
    let d_concat = params.hidden1.accumulate(g_h1, &d_h1, &concat, true);
    let (d_pa, d_pb) = d_concat.split_at(t.pa.len());
    let mut d_pa = d_pa.to_vec();
    let mut d_pb = d_pb.to_vec();
    gate(&mut d_pa, &t.pa);
    gate(&mut d_pb, &t.pb);

    params.projection.accumulate(g_proj, &d_pa, &t.xa, false);
    match (g_proj_b, &params.projection_b) {
        (Some(g), Some(pb)) => pb.accumulate(g, &d_pb, &t.xb, false),
        _ => params.projection.accumulate(g_proj, &d_pb, &t.xb, false),
    };
    Ok(loss(t.logits, positive))
}

/// Zeroes upstream gradient where the ReLU output was not positive.
fn gate(d: &mut [f64], activation: &[f64]) {
    for (g, a) in d.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Gradient of the loss for one example.
pub fn backward(
    params: &ScorerParams,
    va: &[f64],
    vb: &[f64],
    positive: bool,
    mask: Option<&[f64]>,
) -> Result<(f64, Gradients)> {
    let mut g = Gradients::zeros(params);
    let l = backward_into(params, va, vb, positive, mask, &mut g)?;
    Ok((l, g))
}

/// `params -= lr * grads`.
pub fn sgd_step(params: &mut ScorerParams, grads: &Gradients, lr: f64) {
    for (layer, g) in params.layers_mut().into_iter().zip(&grads.layers) {
        for (w, d) in layer.flat_mut().zip(g.flat()) {
            *w -= lr * d;
        }
    }
}

/// `p_same` without dropout.
pub fn score_pair(params: &ScorerParams, va: &[f64], vb: &[f64]) -> Result<f64> {
    Ok(forward(params, va, vb, None)?[0])
}

/// Mean of `score_pair` over matching views of the two faces.
pub fn score_pair_tta(params: &ScorerParams, views_a: &[Vec<f64>], views_b: &[Vec<f64>]) -> Result<f64> {
    if views_a.len() != views_b.len() || views_a.is_empty() {
        return Err(Error::validation(format!(
            "test-time views must pair up: {} vs {}",
            views_a.len(),
            views_b.len()
        )));
    }
    let scores = views_a
        .iter()
        .zip(views_b)
        .map(|(a, b)| score_pair(params, a, b))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&scores))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
