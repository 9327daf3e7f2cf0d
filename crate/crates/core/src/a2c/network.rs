//! Small actor-critic MLP with hand-written backpropagation.
//!
//! A shared trunk of affine + activation layers feeds two linear heads: one
//! producing action logits and one producing the state value. Parameters
//! live in a single flat vector so optimizers, clipping, gradient checks and
//! serialization all work on one slice.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(input: usize, hidden: Vec<usize>, actions: usize, activation: Activation) -> Result<Self> {
        if input == 0 || actions == 0 || hidden.contains(&0) {
            return Err(invalid("network layer sizes must be positive"));
        }
        Ok(Self {
            input,
            hidden,
            actions,
            activation,
        })
    }

    fn trunk_out(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input)
    }

    /// `(in, out)` of every trunk layer.
    fn trunk_layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len());
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        let trunk: usize = self.trunk_layers().iter().map(|(i, o)| i * o + o).sum();
        let k = self.trunk_out();
        trunk + self.actions * k + self.actions + k + 1
    }
}

/// Fixed affine input transform `(x - offset) * scale`; not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Self {
            offset: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Maps pixel keypoints to roughly `[-1, 1]` and leaves the trailing
    /// `extra` entries untouched.
    pub fn for_keypoints(keypoints: usize, width: f64, height: f64, extra: usize) -> Self {
        let mut n = Self::identity(2 * keypoints + extra);
        for k in 0..keypoints {
            n.offset[2 * k] = width / 2.0;
            n.scale[2 * k] = 2.0 / width;
            n.offset[2 * k + 1] = height / 2.0;
            n.scale[2 * k + 1] = 2.0 / height;
        }
        n
    }

    /// Expresses each keypoint coordinate as its offset from the template in
    /// units of `scale_px` pixels; trailing `extra` entries pass through.
    pub fn around_template(template: &[f64], scale_px: f64, extra: usize) -> Self {
        let mut n = Self::identity(template.len() + extra);
        n.offset[..template.len()].copy_from_slice(template);
        n.scale[..template.len()].fill(1.0 / scale_px);
        n
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((v, o), s)| (v - o) * s)
            .collect()
    }
}

/// Weights of the policy/value network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub spec: NetSpec,
    pub normalizer: Normalizer,
    pub theta: Vec<f64>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to the trunk followed by every trunk layer's output.
    pub layers: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub value: f64,
}

impl PolicyParams {
    pub fn zeros(spec: NetSpec, normalizer: Normalizer) -> Result<Self> {
        if normalizer.offset.len() != spec.input || normalizer.scale.len() != spec.input {
            return Err(invalid("normalizer length does not match network input"));
        }
        let theta = vec![0.0; spec.param_count()];
        Ok(Self {
            spec,
            normalizer,
            theta,
        })
    }

    /// Uniform Glorot initialization for the trunk and value head, a 100x
    /// smaller policy head so the initial policy is near uniform, zero biases.
    pub fn init<R: Rng>(spec: NetSpec, normalizer: Normalizer, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec, normalizer)?;
        let mut offset = 0;
        let mut fill = |theta: &mut [f64], rows: usize, cols: usize, gain: f64, offset: &mut usize| {
            let a = gain * (6.0 / (rows + cols) as f64).sqrt();
            for w in &mut theta[*offset..*offset + rows * cols] {
                *w = rng.random_range(-a..a);
            }
            *offset += rows * cols + rows;
        };
        for (i, o) in p.spec.trunk_layers() {
            fill(&mut p.theta, o, i, 1.0, &mut offset);
        }
        let k = p.spec.trunk_out();
        fill(&mut p.theta, p.spec.actions, k, 0.01, &mut offset);
        fill(&mut p.theta, 1, k, 1.0, &mut offset);
        Ok(p)
    }

    pub fn input_len(&self) -> usize {
        self.spec.input
    }

    pub fn action_count(&self) -> usize {
        self.spec.actions
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let c = self.forward_cached(obs)?;
        Ok((c.logits, c.value))
    }

    pub fn forward_cached(&self, obs: &[f64]) -> Result<ForwardCache> {
        if obs.len() != self.spec.input {
            return Err(invalid(format!(
                "observation length {} does not match network input {}",
                obs.len(),
                self.spec.input
            )));
        }
        let mut layers = Vec::with_capacity(self.spec.hidden.len() + 1);
        layers.push(self.normalizer.apply(obs));
        let mut offset = 0;
        for (i, o) in self.spec.trunk_layers() {
            let x = layers.last().expect("input layer present");
            let w = &self.theta[offset..offset + o * i];
            let b = &self.theta[offset + o * i..offset + o * i + o];
            let out = (0..o)
                .map(|r| self.spec.activation.apply(dot(&w[r * i..(r + 1) * i], x) + b[r]))
                .collect();
            layers.push(out);
            offset += o * i + o;
        }
        let x = layers.last().expect("trunk output present");
        let k = x.len();
        let a = self.spec.actions;
        let wp = &self.theta[offset..offset + a * k];
        let bp = &self.theta[offset + a * k..offset + a * k + a];
        let logits = (0..a).map(|r| dot(&wp[r * k..(r + 1) * k], x) + bp[r]).collect();
        offset += a * k + a;
        let value = dot(&self.theta[offset..offset + k], x) + self.theta[offset + k];
        Ok(ForwardCache { layers, logits, value })
    }

    /// Accumulates into `grad` the parameter gradient for upstream
    /// gradients `d_logits` and `d_value` of one sample.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[f64], d_value: f64, grad: &mut [f64]) {
        let layers = self.spec.trunk_layers();
        let mut starts = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &(i, o) in &layers {
            starts.push(offset);
            offset += o * i + o;
        }
        let x = cache.layers.last().expect("trunk output present");
        let k = x.len();
        let a = self.spec.actions;

        let mut delta = vec![0.0; k];
        for r in 0..a {
            let g = d_logits[r];
            if g != 0.0 {
                let row = offset + r * k;
                for c in 0..k {
                    grad[row + c] += g * x[c];
                    delta[c] += g * self.theta[row + c];
                }
            }
            grad[offset + a * k + r] += g;
        }
        let v = offset + a * k + a;
        for c in 0..k {
            grad[v + c] += d_value * x[c];
            delta[c] += d_value * self.theta[v + c];
        }
        grad[v + k] += d_value;

        for (l, &(i, o)) in layers.iter().enumerate().rev() {
            let out = &cache.layers[l + 1];
            let input = &cache.layers[l];
            let start = starts[l];
            let dz: Vec<f64> = delta
                .iter()
                .zip(out)
                .map(|(d, y)| d * self.spec.activation.derivative_from_output(*y))
                .collect();
            let mut next = vec![0.0; i];
            for r in 0..o {
                let g = dz[r];
                if g == 0.0 {
                    continue;
                }
                let row = start + r * i;
                for c in 0..i {
                    grad[row + c] += g * input[c];
                    next[c] += g * self.theta[row + c];
                }
                grad[start + o * i + r] += g;
            }
            delta = next;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Shannon entropy (nats) of the softmax distribution.
pub fn entropy(logits: &[f64]) -> f64 {
    let logp = log_softmax(logits);
    -logp.iter().map(|l| l.exp() * l).sum::<f64>()
}

/// Draws an index from `softmax(logits)` by inverse-CDF sampling.
pub fn sample_action<R: Rng>(logits: &[f64], rng: &mut R) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the cumulative sum just below 1
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Argmax with ties resolved to the lowest index.
pub fn greedy_action(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}
