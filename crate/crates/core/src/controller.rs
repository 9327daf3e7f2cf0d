//! Episode drivers: anything that picks an action index from the current
//! environment state, plus shared evaluation statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::a2c::network::{greedy_action, sample_action, PolicyParams};
use crate::env::{transition, Observation, PhotoEnv, Start, TerminatedBy, TraceRow};
use crate::error::{invalid, Error, Result};
use crate::oracle::{distances_to_goal, goal_mask, GoalSpec};

pub trait Controller {
    /// Called after every reset, before the first action.
    fn begin_episode(&mut self, _env: &PhotoEnv) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, env: &PhotoEnv, obs: &Observation) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Greedy,
    Sampled,
}

impl std::str::FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "sampled" => Ok(Self::Sampled),
            other => Err(invalid(format!("unknown policy mode '{other}'"))),
        }
    }
}

pub struct PolicyController<'a> {
    params: &'a PolicyParams,
    mode: PolicyMode,
    rng: ChaCha8Rng,
}

impl<'a> PolicyController<'a> {
    pub fn new(params: &'a PolicyParams, mode: PolicyMode, seed: u64) -> Self {
        Self {
            params,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, _env: &PhotoEnv, obs: &Observation) -> Result<usize> {
        let (logits, _) = self.params.forward(&obs.to_vec())?;
        Ok(match self.mode {
            PolicyMode::Greedy => greedy_action(&logits),
            PolicyMode::Sampled => sample_action(&logits, &mut self.rng),
        })
    }
}

/// Uniformly random actions.
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn act(&mut self, env: &PhotoEnv, _obs: &Observation) -> Result<usize> {
        Ok(self.rng.random_range(0..env.actions().len()))
    }
}

/// Follows a shortest path into the match region. The goal distances are
/// computed lazily for the environment's current template.
#[derive(Default)]
pub struct OracleController {
    template: Option<crate::world::KeypointVector>,
    to_goal: Vec<Option<usize>>,
}

impl OracleController {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Controller for OracleController {
    fn begin_episode(&mut self, env: &PhotoEnv) -> Result<()> {
        let template = env
            .template()
            .ok_or_else(|| Error::ProtocolViolation("environment has no template".into()))?;
        if self.template.as_ref() != Some(template) {
            let mask = goal_mask(
                env.table(),
                template,
                env.config().alpha,
                GoalSpec::MatchRegion {
                    epsilon_px: env.config().match_epsilon_px,
                },
            )?;
            self.to_goal = distances_to_goal(env.scene(), &mask, env.config().velocity_levels);
            self.template = Some(template.clone());
        }
        Ok(())
    }

    fn act(&mut self, env: &PhotoEnv, _obs: &Observation) -> Result<usize> {
        let scene = env.scene();
        let here = self.to_goal[scene.index_of(env.pose())].ok_or_else(|| Error::NoPath(env.pose().to_string()))?;
        env.actions()
            .iter()
            .position(|&a| {
                let next = transition(env.pose(), a, scene);
                self.to_goal[scene.index_of(next)].is_some_and(|d| d + 1 == here)
            })
            .ok_or_else(|| Error::NoPath(env.pose().to_string()))
    }
}

/// One-step lookahead on reward, ties to the lowest action index.
pub struct GreedyController;

impl Controller for GreedyController {
    fn act(&mut self, env: &PhotoEnv, _obs: &Observation) -> Result<usize> {
        let scene = env.scene();
        let mut best = (0, f64::INFINITY);
        for (i, &a) in env.actions().iter().enumerate() {
            let d = env.distance_at(transition(env.pose(), a, scene));
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub start: crate::world::RobotPose,
    pub rows: Vec<TraceRow>,
    pub success: bool,
    pub reward_sum: f64,
    pub horizon_return: f64,
}

impl EpisodeRecord {
    pub fn actions(&self) -> usize {
        self.rows.len()
    }
}

/// Episode return extended to the step cap: after a match the robot holds
/// the matched view and keeps collecting its reward.
pub fn horizon_return(reward_sum: f64, last_reward: f64, steps: usize, matched: bool, max_steps: usize) -> f64 {
    if matched {
        reward_sum + last_reward * max_steps.saturating_sub(steps) as f64
    } else {
        reward_sum
    }
}

/// Runs one episode on an environment that already holds a template.
pub fn run_episode<C: Controller + ?Sized>(
    controller: &mut C,
    env: &mut PhotoEnv,
    start: Start,
) -> Result<EpisodeRecord> {
    let mut obs = env.reset_episode(start)?;
    let start_pose = env.pose();
    controller.begin_episode(env)?;
    let mut rows = Vec::new();
    let mut reward_sum = 0.0;
    let mut last = (0.0, TerminatedBy::None);
    while !env.is_done() {
        let a = controller.act(env, &obs)?;
        let action = *env
            .actions()
            .get(a)
            .ok_or_else(|| invalid(format!("controller chose action {a} outside the action space")))?;
        let res = env.step_index(a)?;
        reward_sum += res.reward;
        last = (res.reward, res.info.terminated_by);
        rows.push(TraceRow::from_step(action, &res));
        obs = res.observation;
    }
    let success = last.1 == TerminatedBy::Match;
    let max_steps = env.config().max_steps;
    Ok(EpisodeRecord {
        start: start_pose,
        horizon_return: horizon_return(reward_sum, last.0, rows.len(), success, max_steps),
        rows,
        success,
        reward_sum,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub success_rate: f64,
    /// Actions per episode; episodes that hit the step cap count in full.
    pub mean_actions: f64,
    /// Sample standard deviation of the action count.
    pub sd_actions: f64,
    pub mean_return: f64,
}

impl EvalStats {
    pub fn from_records(records: &[EpisodeRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(invalid("cannot summarize zero episodes"));
        }
        let n = records.len() as f64;
        let counts: Vec<f64> = records.iter().map(|r| r.actions() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n;
        let sd = if records.len() > 1 {
            (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            episodes: records.len(),
            success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
            mean_actions: mean,
            sd_actions: sd,
            mean_return: records.iter().map(|r| r.horizon_return).sum::<f64>() / n,
        })
    }
}

/// Runs `episodes` episodes from the environment's start distribution.
pub fn evaluate_controller<C: Controller + ?Sized>(
    controller: &mut C,
    env: &mut PhotoEnv,
    episodes: usize,
) -> Result<(EvalStats, Vec<EpisodeRecord>)> {
    if episodes == 0 {
        return Err(invalid("episodes must be at least 1"));
    }
    let records = (0..episodes)
        .map(|_| run_episode(controller, env, Start::Sampled))
        .collect::<Result<Vec<_>>>()?;
    Ok((EvalStats::from_records(&records)?, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::oracle::shortest_path;
    use crate::world::{project_keypoints, RobotPose, Scene};

    fn env() -> PhotoEnv {
        let scene = Scene::default();
        let template = project_keypoints(&scene, RobotPose::new(2, 2, 0)).unwrap();
        let mut env = PhotoEnv::new(&scene, EnvConfig::default()).unwrap();
        env.reset(&template, Start::Sampled).unwrap();
        env.seed(9);
        env
    }

    #[test]
    fn oracle_matches_bfs_lengths() {
        let mut env = env();
        let template = env.template().unwrap().clone();
        let eps = env.config().match_epsilon_px;
        let (stats, records) = evaluate_controller(&mut OracleController::new(), &mut env, 40).unwrap();
        assert_eq!(stats.success_rate, 1.0);
        let table = env.table().clone();
        for r in &records {
            let path = shortest_path(
                env.scene(),
                r.start,
                |p| table.get(p).distance(&template).unwrap() <= eps,
                1,
            )
            .unwrap();
            assert_eq!(r.actions(), path.len());
        }
    }

    #[test]
    fn random_is_worse_than_oracle() {
        let mut env = env();
        let (oracle, _) = evaluate_controller(&mut OracleController::new(), &mut env, 50).unwrap();
        env.seed(9);
        let (random, _) = evaluate_controller(&mut RandomController::new(1), &mut env, 50).unwrap();
        assert!(random.success_rate < oracle.success_rate);
        assert!(random.mean_actions > oracle.mean_actions);
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let mut env = env();
        assert!(evaluate_controller(&mut GreedyController, &mut env, 0).is_err());
    }

    #[test]
    fn horizon_return_holds_the_final_reward() {
        assert_eq!(horizon_return(1.5, 0.5, 3, true, 10), 5.0);
        assert_eq!(horizon_return(1.5, 0.5, 3, false, 10), 1.5);
    }

    #[test]
    fn stats_summary() {
        let rec = |n: usize, success: bool| EpisodeRecord {
            start: RobotPose::new(0, 0, 0),
            rows: vec![
                TraceRow {
                    step: 1,
                    pose: RobotPose::new(0, 0, 0),
                    action: crate::env::ActionSpec::rotate(1, 1),
                    reward: 0.0,
                    distance_px: 0.0,
                    done: false,
                };
                n
            ],
            success,
            reward_sum: 0.0,
            horizon_return: n as f64,
        };
        let s = EvalStats::from_records(&[rec(2, true), rec(4, false)]).unwrap();
        assert_eq!(s.success_rate, 0.5);
        assert_eq!(s.mean_actions, 3.0);
        assert!((s.sd_actions - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.mean_return, 3.0);
    }
}
