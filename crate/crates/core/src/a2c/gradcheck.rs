use rand::Rng;

use super::network::{Activation, NetSpec, Normalizer, PolicyParams};
use super::update::{loss_and_grad, LossBatch, LossSelector, LossWeights};
use crate::error::Result;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator, so parameters whose true
/// gradient is ~0 are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over
/// every parameter.
pub fn grad_check(
    params: &PolicyParams,
    batch: &LossBatch<'_>,
    weights: LossWeights,
    selector: LossSelector,
) -> Result<f64> {
    let (_, analytic) = loss_and_grad(params, batch, weights, selector)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &w) in params.theta.iter().enumerate() {
        probe.theta[i] = w + GRAD_CHECK_STEP;
        let up = loss_and_grad(&probe, batch, weights, selector)?.0.total;
        probe.theta[i] = w - GRAD_CHECK_STEP;
        let down = loss_and_grad(&probe, batch, weights, selector)?.0.total;
        probe.theta[i] = w;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Upper bound on the size of networks checked by finite differences.
pub const GRAD_CHECK_MAX_PARAMS: usize = 500;

/// A random small tanh network with a random batch.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub params: PolicyParams,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GradCheckInstance {
    pub fn random<R: Rng>(rng: &mut R) -> Result<Self> {
        let spec = loop {
            let input = rng.random_range(2..=12);
            let layers = rng.random_range(1..=2);
            let hidden = (0..layers).map(|_| rng.random_range(2..=10)).collect();
            let actions = [4, 12][rng.random_range(0..2)];
            let spec = NetSpec::new(input, hidden, actions, Activation::Tanh)?;
            if spec.param_count() <= GRAD_CHECK_MAX_PARAMS {
                break spec;
            }
        };
        let (input, actions) = (spec.input, spec.actions);
        let params = PolicyParams::init(spec, Normalizer::identity(input), rng)?;
        let n = rng.random_range(1..=8);
        Ok(Self {
            params,
            observations: (0..n)
                .map(|_| (0..input).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect(),
            actions: (0..n).map(|_| rng.random_range(0..actions)).collect(),
            returns: (0..n).map(|_| rng.random_range(-1.0..2.0)).collect(),
            advantages: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
    }

    pub fn batch(&self) -> LossBatch<'_> {
        LossBatch {
            observations: &self.observations,
            actions: &self.actions,
            returns: &self.returns,
            advantages: &self.advantages,
        }
    }

    pub fn check(&self, weights: LossWeights, selector: LossSelector) -> Result<f64> {
        grad_check(&self.params, &self.batch(), weights, selector)
    }
}
