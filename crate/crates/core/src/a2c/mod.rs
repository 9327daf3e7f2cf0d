//! Synchronous advantage actor-critic with a hand-differentiated MLP.

pub mod buffer;
pub mod gradcheck;
pub mod network;
pub mod update;

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use buffer::{compute_returns, RolloutBuffer};
pub use gradcheck::{grad_check, GradCheckInstance};
pub use network::{entropy, greedy_action, sample_action, softmax, Activation, NetSpec, Normalizer, PolicyParams};
pub use update::{
    a2c_update, loss_and_grad, LossBatch, LossReport, LossSelector, LossWeights, Optimizer, OptimizerKind,
};

use crate::controller::{evaluate_controller, horizon_return, EvalStats, PolicyController, PolicyMode};
use crate::env::{EnvConfig, KeypointTable, PhotoEnv, Start, TerminatedBy};
use crate::error::{invalid, Result};
use crate::world::{KeypointVector, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub n_steps: usize,
    pub n_envs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip_norm: f64,
    pub total_updates: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    /// Multiplies every reward before it enters the returns, keeping value
    /// targets near unit scale.
    pub reward_scale: f64,
    pub terminal_value: TerminalValue,
    /// Pixel offset from the template that maps to one network input unit.
    pub input_scale_px: f64,
    /// Updates between learning-curve points.
    pub log_interval: usize,
    /// Completed episodes averaged into each curve point.
    pub window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            learning_rate: 7e-4,
            n_steps: 5,
            n_envs: 8,
            entropy_coef: 1e-4,
            value_coef: 0.5,
            grad_clip_norm: 0.5,
            total_updates: 10_000,
            seed: 0,
            hidden: vec![64, 64],
            optimizer: OptimizerKind::default(),
            reward_scale: 0.05,
            terminal_value: TerminalValue::Absorbing,
            input_scale_px: 100.0,
            log_interval: 100,
            window: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.n_steps == 0 || self.n_envs == 0 {
            return Err(invalid("n_steps and n_envs must be at least 1"));
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return Err(invalid("loss coefficients must be non-negative"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(invalid("grad_clip_norm must be positive"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(invalid("reward_scale must be positive"));
        }
        if !(self.input_scale_px > 0.0 && self.input_scale_px.is_finite()) {
            return Err(invalid("input_scale_px must be positive"));
        }
        if self.log_interval == 0 || self.window == 0 {
            return Err(invalid("log_interval and window must be at least 1"));
        }
        if let OptimizerKind::RmsProp { decay, eps } = self.optimizer {
            if !(0.0..1.0).contains(&decay) || !(eps > 0.0) {
                return Err(invalid("rmsprop needs decay in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// What a match is worth beyond its own step reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalValue {
    /// The matched view is held forever: `r * gamma / (1 - gamma)`. With
    /// `gamma = 1` this falls back to holding until the step cap.
    Absorbing,
    /// The matched view is held until the step cap.
    Horizon,
    /// Nothing; the return recursion simply restarts.
    Zero,
}

impl TerminalValue {
    pub fn value(self, reward: f64, gamma: f64, remaining: usize) -> f64 {
        match self {
            Self::Absorbing if gamma < 1.0 => reward * gamma / (1.0 - gamma),
            Self::Absorbing | Self::Horizon => hold_value(reward, gamma, remaining),
            Self::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of updates completed.
    pub update: usize,
    pub mean_return: f64,
    pub mean_len: f64,
    pub success_rate: f64,
}

pub const CURVE_CSV_HEADER: &str = "update,mean_return,mean_len,success_rate";

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for p in curve {
        writeln!(
            out,
            "{},{:.9},{:.6},{:.6}",
            p.update, p.mean_return, p.mean_len, p.success_rate
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    pub episodes: usize,
    pub last_report: Option<LossReport>,
}

impl TrainOutcome {
    /// Mean return of the last curve point, if any episode finished.
    pub fn final_mean_return(&self) -> Option<f64> {
        self.curve.last().map(|p| p.mean_return)
    }
}

#[derive(Debug, Clone, Copy)]
struct Finished {
    ret: f64,
    len: usize,
    success: bool,
}

/// Network shape and input scaling for one template. Keypoints enter the
/// network as offsets from the template in units of `input_scale_px`.
pub fn policy_shape(
    template: &KeypointVector,
    env_config: &EnvConfig,
    config: &TrainConfig,
) -> Result<(NetSpec, Normalizer)> {
    let spec = NetSpec::new(
        env_config.observation_len(template.len()),
        config.hidden.clone(),
        env_config.action_count(),
        Activation::Tanh,
    )?;
    let extra = env_config.memory_len * env_config.action_count();
    Ok((
        spec,
        Normalizer::around_template(&template.flat(), config.input_scale_px, extra),
    ))
}

pub fn train(
    scene: &Scene,
    template: &KeypointVector,
    env_config: &EnvConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_table(&KeypointTable::build(scene)?, template, env_config, config)
}

/// Runs `n_envs` lock-step environments, `n_steps` transitions each per
/// update. Every environment owns its own start and action RNG streams, all
/// derived from `config.seed`.
pub fn train_with_table(
    table: &KeypointTable,
    template: &KeypointVector,
    env_config: &EnvConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    env_config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let (spec, normalizer) = policy_shape(template, env_config, config)?;
    let mut params = PolicyParams::init(spec, normalizer, &mut master)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, params.theta.len());

    let mut envs = Vec::with_capacity(config.n_envs);
    let mut action_rngs = Vec::with_capacity(config.n_envs);
    let mut obs = Vec::with_capacity(config.n_envs);
    let mut episode_rewards = vec![0.0; config.n_envs];
    for _ in 0..config.n_envs {
        let mut env = PhotoEnv::with_table(table.clone(), *env_config)?;
        env.seed(master.random());
        action_rngs.push(ChaCha8Rng::seed_from_u64(master.random()));
        obs.push(env.reset(template, Start::Sampled)?.to_vec());
        envs.push(env);
    }

    let horizon = env_config.max_steps;
    let mut finished: VecDeque<Finished> = VecDeque::with_capacity(config.window);
    let mut episodes = 0;
    let mut curve = Vec::new();
    let mut last_report = None;
    let mut buffer = RolloutBuffer::new(config.n_envs, config.n_steps);

    for update in 0..config.total_updates {
        for t in 0..config.n_steps {
            for e in 0..config.n_envs {
                let i = buffer.index(t, e);
                let (logits, value) = params.forward(&obs[e])?;
                let a = sample_action(&logits, &mut action_rngs[e]);
                let res = envs[e].step_index(a)?;
                episode_rewards[e] += res.reward;
                buffer.observations[i] = std::mem::take(&mut obs[e]);
                buffer.actions[i] = a;
                buffer.rewards[i] = config.reward_scale * res.reward;
                buffer.values[i] = value;
                buffer.dones[i] = res.done;
                buffer.terminal_values[i] = 0.0;
                if res.done {
                    let steps = res.info.steps;
                    let success = res.info.terminated_by == TerminatedBy::Match;
                    if success {
                        let remaining = horizon - steps.min(horizon);
                        buffer.terminal_values[i] =
                            config.reward_scale * config.terminal_value.value(res.reward, config.gamma, remaining);
                    }
                    if finished.len() == config.window {
                        finished.pop_front();
                    }
                    finished.push_back(Finished {
                        ret: horizon_return(episode_rewards[e], res.reward, steps, success, horizon),
                        len: steps,
                        success,
                    });
                    episodes += 1;
                    episode_rewards[e] = 0.0;
                    obs[e] = envs[e].reset_episode(Start::Sampled)?.to_vec();
                } else {
                    obs[e] = res.observation.to_vec();
                }
            }
        }
        for (b, o) in buffer.bootstrap.iter_mut().zip(&obs) {
            *b = params.forward(o)?.1;
        }
        last_report = Some(a2c_update(&mut params, &mut optimizer, &buffer, config, update)?);

        let done = update + 1;
        if (done % config.log_interval == 0 || done == config.total_updates) && !finished.is_empty() {
            let n = finished.len() as f64;
            curve.push(CurvePoint {
                update: done,
                mean_return: finished.iter().map(|f| f.ret).sum::<f64>() / n,
                mean_len: finished.iter().map(|f| f.len as f64).sum::<f64>() / n,
                success_rate: finished.iter().filter(|f| f.success).count() as f64 / n,
            });
        }
    }
    Ok(TrainOutcome {
        params,
        curve,
        episodes,
        last_report,
    })
}

/// Discounted value of receiving `reward` for each of the next `remaining`
/// steps: `reward * sum_{k=1..remaining} gamma^k`.
fn hold_value(reward: f64, gamma: f64, remaining: usize) -> f64 {
    let mut g = 1.0;
    let mut sum = 0.0;
    for _ in 0..remaining {
        g *= gamma;
        sum += g;
    }
    reward * sum
}

/// Evaluates a policy from the environment's start distribution.
/// `seed` drives action sampling in sampled mode.
pub fn evaluate(
    params: &PolicyParams,
    env: &mut PhotoEnv,
    episodes: usize,
    mode: PolicyMode,
    seed: u64,
) -> Result<EvalStats> {
    if params.input_len() != env.observation_len() || params.action_count() != env.actions().len() {
        return Err(invalid("policy shape does not match the environment"));
    }
    let mut controller = PolicyController::new(params, mode, seed);
    Ok(evaluate_controller(&mut controller, env, episodes)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{project_keypoints, RobotPose};

    fn setup() -> (KeypointTable, KeypointVector) {
        let scene = Scene::default();
        let table = KeypointTable::build(&scene).unwrap();
        let template = project_keypoints(&scene, RobotPose::new(2, 2, 0)).unwrap();
        (table, template)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            total_updates: 40,
            hidden: vec![16],
            log_interval: 10,
            window: 20,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_updates_gives_untrained_params() {
        let (table, template) = setup();
        let cfg = TrainConfig {
            total_updates: 0,
            ..quick()
        };
        let out = train_with_table(&table, &template, &EnvConfig::default(), &cfg).unwrap();
        assert!(out.curve.is_empty());
        let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (spec, norm) = policy_shape(&template, &EnvConfig::default(), &cfg).unwrap();
        assert_eq!(out.params, PolicyParams::init(spec, norm, &mut master).unwrap());
    }

    #[test]
    fn equal_seeds_equal_curves() {
        let (table, template) = setup();
        let a = train_with_table(&table, &template, &EnvConfig::default(), &quick()).unwrap();
        let b = train_with_table(&table, &template, &EnvConfig::default(), &quick()).unwrap();
        assert_eq!(a, b);
        assert!(!a.curve.is_empty());
        let c = train_with_table(
            &table,
            &template,
            &EnvConfig::default(),
            &TrainConfig { seed: 12, ..quick() },
        )
        .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn hold_value_sums_the_discounted_tail() {
        assert_eq!(hold_value(2.0, 0.5, 0), 0.0);
        assert!((hold_value(2.0, 0.5, 2) - 1.5).abs() < 1e-15);
        assert_eq!(hold_value(1.0, 1.0, 7), 7.0);
    }

    #[test]
    fn terminal_values() {
        assert!((TerminalValue::Absorbing.value(0.5, 0.95, 3) - 9.5).abs() < 1e-12);
        assert_eq!(TerminalValue::Absorbing.value(0.5, 1.0, 3), 1.5);
        assert!((TerminalValue::Horizon.value(1.0, 0.5, 2) - 0.75).abs() < 1e-15);
        assert_eq!(TerminalValue::Zero.value(1.0, 0.9, 5), 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { gamma: 0.0, ..quick() },
            TrainConfig { gamma: 1.5, ..quick() },
            TrainConfig { n_envs: 0, ..quick() },
            TrainConfig {
                learning_rate: -1.0,
                ..quick()
            },
            TrainConfig {
                grad_clip_norm: 0.0,
                ..quick()
            },
            TrainConfig {
                reward_scale: 0.0,
                ..quick()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn curve_csv_format() {
        let mut buf = Vec::new();
        write_curve_csv(
            &[CurvePoint {
                update: 100,
                mean_return: 1.5,
                mean_len: 7.25,
                success_rate: 0.5,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "update,mean_return,mean_len,success_rate\n100,1.500000000,7.250000,0.500000\n"
        );
    }

    #[test]
    fn evaluate_rejects_mismatched_policy() {
        let (table, template) = setup();
        let mut env = PhotoEnv::with_table(table, EnvConfig::default()).unwrap();
        env.reset(&template, Start::Sampled).unwrap();
        let spec = NetSpec::new(3, vec![4], 4, Activation::Tanh).unwrap();
        let p = PolicyParams::zeros(spec, Normalizer::identity(3)).unwrap();
        assert!(evaluate(&p, &mut env, 5, PolicyMode::Greedy, 0).is_err());
    }
}
