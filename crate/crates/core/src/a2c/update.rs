use serde::{Deserialize, Serialize};

use super::buffer::{compute_returns, RolloutBuffer};
use super::network::{log_softmax, softmax, PolicyParams};
use super::TrainConfig;
use crate::error::{invalid, Error, Result};

/// Which objective [`loss_and_grad`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSelector {
    /// Policy term + weighted value term - weighted entropy.
    Total,
    /// `-mean(A * log π(a|s))` with advantages held fixed.
    Policy,
    /// `mean((R - V)^2)`.
    Value,
    /// `mean(H(π(·|s)))`.
    Entropy,
    /// `mean(0.5 * (|logits|^2 + V^2))`, a smooth test objective.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// A minibatch with precomputed targets. Advantages are constants of the
/// objective, not functions of the parameters.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub observations: &'a [Vec<f64>],
    pub actions: &'a [usize],
    pub returns: &'a [f64],
    pub advantages: &'a [f64],
}

impl LossBatch<'_> {
    fn check(&self, params: &PolicyParams) -> Result<()> {
        let n = self.observations.len();
        if n == 0 {
            return Err(invalid("empty loss batch"));
        }
        if self.actions.len() != n || self.returns.len() != n || self.advantages.len() != n {
            return Err(invalid("loss batch columns differ in length"));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= params.action_count()) {
            return Err(invalid(format!("action {a} outside the policy head")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.total,
            self.grad_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Objective value and its analytic gradient with respect to `params.theta`.
pub fn loss_and_grad(
    params: &PolicyParams,
    batch: &LossBatch<'_>,
    weights: LossWeights,
    selector: LossSelector,
) -> Result<(LossReport, Vec<f64>)> {
    batch.check(params)?;
    let n = batch.observations.len() as f64;
    let mut grad = vec![0.0; params.theta.len()];
    let mut report = LossReport::default();
    let (w_pol, w_val, w_ent) = match selector {
        LossSelector::Total => (1.0, weights.value_coef, -weights.entropy_coef),
        LossSelector::Policy => (1.0, 0.0, 0.0),
        LossSelector::Value => (0.0, 1.0, 0.0),
        LossSelector::Entropy => (0.0, 0.0, 1.0),
        LossSelector::Quadratic => (0.0, 0.0, 0.0),
    };
    let mut quadratic = 0.0;
    for (i, obs) in batch.observations.iter().enumerate() {
        let cache = params.forward_cached(obs)?;
        let probs = softmax(&cache.logits);
        let logp = log_softmax(&cache.logits);
        let h = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let err = cache.value - batch.returns[i];
        report.policy_loss -= adv * logp[a] / n;
        report.value_loss += err * err / n;
        report.entropy += h / n;

        let (d_logits, d_value) = if selector == LossSelector::Quadratic {
            quadratic += 0.5 * (cache.logits.iter().map(|z| z * z).sum::<f64>() + cache.value * cache.value) / n;
            (cache.logits.iter().map(|z| z / n).collect::<Vec<_>>(), cache.value / n)
        } else {
            let d_logits = (0..probs.len())
                .map(|j| {
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    // d(-A log p_a)/dz_j = -A (1[j=a] - p_j)
                    let pol = -adv * (onehot - probs[j]);
                    // dH/dz_j = -p_j (log p_j + H)
                    let ent = -probs[j] * (logp[j] + h);
                    (w_pol * pol + w_ent * ent) / n
                })
                .collect();
            (d_logits, w_val * 2.0 * err / n)
        };
        params.backward(&cache, &d_logits, d_value, &mut grad);
    }
    report.total = match selector {
        LossSelector::Quadratic => quadratic,
        _ => w_pol * report.policy_loss + w_val * report.value_loss + w_ent * report.entropy,
    };
    report.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok((report, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// Per-parameter scaling by a running RMS of the gradient.
    RmsProp { decay: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::RmsProp { decay: 0.99, eps: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    square_avg: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Self {
        Self {
            kind,
            learning_rate,
            square_avg: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in theta.iter_mut().zip(grad) {
                    *w -= self.learning_rate * g;
                }
            }
            OptimizerKind::RmsProp { decay, eps } => {
                for ((w, g), s) in theta.iter_mut().zip(grad).zip(self.square_avg.iter_mut()) {
                    *s = decay * *s + (1.0 - decay) * g * g;
                    *w -= self.learning_rate * g / (s.sqrt() + eps);
                }
            }
        }
    }
}

/// Rescales `grad` in place so its global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One synchronous actor-critic step on a filled rollout buffer.
pub fn a2c_update(
    params: &mut PolicyParams,
    optimizer: &mut Optimizer,
    buffer: &RolloutBuffer,
    config: &TrainConfig,
    update_index: usize,
) -> Result<LossReport> {
    let returns = compute_returns(buffer, config.gamma);
    let advantages: Vec<f64> = returns.iter().zip(&buffer.values).map(|(r, v)| r - v).collect();
    let batch = LossBatch {
        observations: &buffer.observations,
        actions: &buffer.actions,
        returns: &returns,
        advantages: &advantages,
    };
    let weights = LossWeights {
        value_coef: config.value_coef,
        entropy_coef: config.entropy_coef,
    };
    let (mut report, mut grad) = loss_and_grad(params, &batch, weights, LossSelector::Total)?;
    report.grad_norm = clip_grad_norm(&mut grad, config.grad_clip_norm);
    if !report.is_finite() {
        return Err(Error::TrainingDivergence {
            update: update_index,
            detail: format!(
                "policy_loss={} value_loss={} entropy={} grad_norm={}",
                report.policy_loss, report.value_loss, report.entropy, report.grad_norm
            ),
        });
    }
    optimizer.step(&mut params.theta, &grad);
    if !params.is_finite() {
        return Err(Error::TrainingDivergence {
            update: update_index,
            detail: "parameters became non-finite after the optimizer step".into(),
        });
    }
    Ok(report)
}
