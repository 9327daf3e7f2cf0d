//! Template-matching environment over the discrete grid-and-yaw state space.
//!
//! The state is a [`RobotPose`], actions rotate or translate by a velocity
//! level, and the reward compares the current keypoints against a fixed
//! goal template with `exp(-alpha * ||v - v_goal||)`.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::world::{project_keypoints, KeypointVector, RobotPose, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Rotate,
    Translate,
}

/// A discrete motion command. Rotation sign `+1` is clockwise seen from
/// above; translation sign `+1` moves forward along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSpec {
    pub kind: ActionKind,
    pub sign: i8,
    pub level: u32,
}

impl ActionSpec {
    pub fn rotate(sign: i8, level: u32) -> Self {
        Self {
            kind: ActionKind::Rotate,
            sign,
            level,
        }
    }

    pub fn translate(sign: i8, level: u32) -> Self {
        Self {
            kind: ActionKind::Translate,
            sign,
            level,
        }
    }

    /// Signed step `δ = sign * level`.
    pub fn delta(&self) -> i64 {
        self.sign as i64 * self.level as i64
    }

    /// Position in the canonical ordering of a `levels`-level action space.
    pub fn index(&self, levels: u32) -> Option<usize> {
        if self.level == 0 || self.level > levels || self.sign.abs() != 1 {
            return None;
        }
        let group = match (self.kind, self.sign) {
            (ActionKind::Rotate, 1) => 0,
            (ActionKind::Rotate, _) => 1,
            (ActionKind::Translate, 1) => 2,
            (ActionKind::Translate, _) => 3,
        };
        Some(group * levels as usize + (self.level - 1) as usize)
    }
}

impl fmt::Display for ActionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ActionKind::Rotate => "rotate",
            ActionKind::Translate => "translate",
        };
        let sign = if self.sign > 0 { '+' } else { '-' };
        write!(f, "{kind}{sign}{}", self.level)
    }
}

impl FromStr for ActionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("action {s:?} is not rotate|translate followed by +N or -N"));
        let (kind, rest) = if let Some(rest) = s.strip_prefix("rotate") {
            (ActionKind::Rotate, rest)
        } else if let Some(rest) = s.strip_prefix("translate") {
            (ActionKind::Translate, rest)
        } else {
            return Err(bad());
        };
        let sign = match rest.chars().next() {
            Some('+') => 1,
            Some('-') => -1,
            _ => return Err(bad()),
        };
        let level: u32 = rest[1..].parse().map_err(|_| bad())?;
        if level == 0 {
            return Err(bad());
        }
        Ok(Self { kind, sign, level })
    }
}

/// Canonical action ordering: rotate+, rotate-, translate+, translate-,
/// each group listing levels `1..=levels` in ascending order.
pub fn action_space(levels: u32) -> Vec<ActionSpec> {
    let mut out = Vec::with_capacity(4 * levels as usize);
    for make in [
        |l| ActionSpec::rotate(1, l),
        |l| ActionSpec::rotate(-1, l),
        |l| ActionSpec::translate(1, l),
        |l| ActionSpec::translate(-1, l),
    ] {
        out.extend((1..=levels).map(make));
    }
    out
}

/// Rounds to the nearest integer with ties away from zero, after removing
/// trigonometric noise below 1e-9 so exact half steps (sin 30° = 1/2) are
/// treated as ties.
fn snap(value: f64) -> i64 {
    ((value * 1e9).round() / 1e9).round() as i64
}

/// Deterministic state transition with nearest-neighbour snapping.
///
/// Translations move `δ` grid units along `(sin θ, cos θ)` and clamp to the
/// grid; rotations step the yaw index modulo `n_yaw`.
pub fn transition(pose: RobotPose, action: ActionSpec, scene: &Scene) -> RobotPose {
    let delta = action.delta();
    match action.kind {
        ActionKind::Rotate => RobotPose {
            yaw_index: (pose.yaw_index as i64 + delta).rem_euclid(scene.n_yaw as i64) as usize,
            ..pose
        },
        ActionKind::Translate => {
            let theta = pose.yaw_index as f64 * scene.yaw_step_rad();
            let (s, c) = theta.sin_cos();
            let x = snap(pose.ix as f64 + delta as f64 * s);
            let y = snap(pose.iy as f64 + delta as f64 * c);
            RobotPose {
                ix: x.clamp(0, scene.grid_nx as i64 - 1) as usize,
                iy: y.clamp(0, scene.grid_ny as i64 - 1) as usize,
                ..pose
            }
        }
    }
}

/// `exp(-alpha * ||v - v_goal||_2)` over the flattened coordinates.
pub fn reward(v: &KeypointVector, v_goal: &KeypointVector, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha must be positive"));
    }
    Ok(reward_from_distance(v.distance(v_goal)?, alpha))
}

pub fn reward_from_distance(distance: f64, alpha: f64) -> f64 {
    (-alpha * distance).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartDistribution {
    Fixed(RobotPose),
    /// Uniform over all states that do not already match the template.
    #[default]
    Uniform,
}

impl fmt::Display for StartDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Fixed(p) => write!(f, "{},{},{}", p.ix, p.iy, p.yaw_index),
        }
    }
}

impl FromStr for StartDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "uniform" {
            Ok(Self::Uniform)
        } else {
            Ok(Self::Fixed(s.parse()?))
        }
    }
}

impl Serialize for StartDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StartDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub alpha: f64,
    pub match_epsilon_px: f64,
    pub max_steps: usize,
    pub memory_len: usize,
    pub velocity_levels: u32,
    pub start: StartDistribution,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            alpha: 2.5e-3,
            match_epsilon_px: 40.0,
            max_steps: 30,
            memory_len: 0,
            velocity_levels: 1,
            start: StartDistribution::Uniform,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha must be positive"));
        }
        if !(self.match_epsilon_px > 0.0) {
            return Err(invalid("match_epsilon_px must be positive"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be at least 1"));
        }
        if self.velocity_levels == 0 {
            return Err(invalid("velocity_levels must be at least 1"));
        }
        Ok(())
    }

    pub fn action_count(&self) -> usize {
        4 * self.velocity_levels as usize
    }

    /// Observation length for `keypoints` 2D points.
    pub fn observation_len(&self, keypoints: usize) -> usize {
        2 * keypoints + self.memory_len * self.action_count()
    }
}

/// Flattened keypoints plus a one-hot block per remembered action (oldest
/// first, zero-padded at the front until enough actions have been taken).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub keypoints: Vec<f64>,
    pub memory: Vec<f64>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.keypoints.len() + self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.keypoints);
        v.extend_from_slice(&self.memory);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminatedBy {
    Match,
    StepCap,
    None,
}

impl fmt::Display for TerminatedBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Match => "match",
            Self::StepCap => "step-cap",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub distance_px: f64,
    pub pose: RobotPose,
    pub steps: usize,
    pub terminated_by: TerminatedBy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Projected keypoints for every state of a scene, indexed by
/// [`Scene::index_of`]. Shared between environment instances.
#[derive(Debug, Clone)]
pub struct KeypointTable {
    scene: Scene,
    entries: Arc<[KeypointVector]>,
}

impl KeypointTable {
    pub fn build(scene: &Scene) -> Result<Self> {
        scene.validate()?;
        let entries = scene
            .poses()
            .map(|p| project_keypoints(scene, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scene: *scene,
            entries: entries.into(),
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn get(&self, pose: RobotPose) -> &KeypointVector {
        &self.entries[self.scene.index_of(pose)]
    }

    pub fn keypoint_count(&self) -> usize {
        self.entries[0].len()
    }

    /// Distance of every state's keypoints to `template`, in index order.
    pub fn distances(&self, template: &KeypointVector) -> Result<Vec<f64>> {
        self.entries.iter().map(|kp| kp.distance(template)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Pose(RobotPose),
    /// Draw from the configured start distribution.
    Sampled,
}

/// Single-threaded episode state over a shared, immutable scene.
#[derive(Debug, Clone)]
pub struct PhotoEnv {
    table: KeypointTable,
    config: EnvConfig,
    actions: Vec<ActionSpec>,
    template: Option<KeypointVector>,
    distances: Vec<f64>,
    pose: RobotPose,
    steps: usize,
    memory: VecDeque<usize>,
    done: bool,
    rng: ChaCha8Rng,
}

impl PhotoEnv {
    pub fn new(scene: &Scene, config: EnvConfig) -> Result<Self> {
        Self::with_table(KeypointTable::build(scene)?, config)
    }

    pub fn with_table(table: KeypointTable, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        if let StartDistribution::Fixed(p) = config.start {
            table.scene().check_pose(p)?;
        }
        Ok(Self {
            actions: action_space(config.velocity_levels),
            table,
            config,
            template: None,
            distances: Vec::new(),
            pose: RobotPose::new(0, 0, 0),
            steps: 0,
            memory: VecDeque::new(),
            done: true,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn seed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn scene(&self) -> &Scene {
        self.table.scene()
    }

    pub fn table(&self) -> &KeypointTable {
        &self.table
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn actions(&self) -> &[ActionSpec] {
        &self.actions
    }

    pub fn pose(&self) -> RobotPose {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn template(&self) -> Option<&KeypointVector> {
        self.template.as_ref()
    }

    pub fn observation_len(&self) -> usize {
        self.config.observation_len(self.table.keypoint_count())
    }

    pub fn keypoints_at(&self, pose: RobotPose) -> &KeypointVector {
        self.table.get(pose)
    }

    /// Distance to the current template; requires a prior reset.
    pub fn distance_at(&self, pose: RobotPose) -> f64 {
        self.distances[self.scene().index_of(pose)]
    }

    pub fn reward_at(&self, pose: RobotPose) -> f64 {
        reward_from_distance(self.distance_at(pose), self.config.alpha)
    }

    pub fn is_match(&self, pose: RobotPose) -> bool {
        self.distance_at(pose) <= self.config.match_epsilon_px
    }

    pub fn reset(&mut self, template: &KeypointVector, start: Start) -> Result<Observation> {
        if template.len() != self.table.keypoint_count() {
            return Err(invalid(format!(
                "template has {} keypoints, scene produces {}",
                template.len(),
                self.table.keypoint_count()
            )));
        }
        if self.template.as_ref() != Some(template) {
            self.distances = self.table.distances(template)?;
            self.template = Some(template.clone());
        }
        self.reset_episode(start)
    }

    /// Starts a new episode against the template of the last reset.
    pub fn reset_episode(&mut self, start: Start) -> Result<Observation> {
        if self.template.is_none() {
            return Err(Error::ProtocolViolation("no template set; call reset first".into()));
        }
        let pose = match (start, self.config.start) {
            (Start::Pose(p), _) | (Start::Sampled, StartDistribution::Fixed(p)) => {
                self.scene().check_pose(p)?;
                p
            }
            (Start::Sampled, StartDistribution::Uniform) => self.sample_start()?,
        };
        self.pose = pose;
        self.steps = 0;
        self.memory.clear();
        self.done = false;
        Ok(self.observation())
    }

    fn sample_start(&mut self) -> Result<RobotPose> {
        let eps = self.config.match_epsilon_px;
        let candidates = self.distances.iter().filter(|&&d| d > eps).count();
        if candidates == 0 {
            return Err(invalid("every state matches the template; nothing to sample"));
        }
        let mut k = self.rng.random_range(0..candidates);
        for (i, &d) in self.distances.iter().enumerate() {
            if d > eps {
                if k == 0 {
                    return Ok(self.scene().pose_of_index(i));
                }
                k -= 1;
            }
        }
        unreachable!("sample index within candidate count")
    }

    pub fn observation(&self) -> Observation {
        let n = self.actions.len();
        let mut memory = vec![0.0; self.config.memory_len * n];
        let pad = self.config.memory_len - self.memory.len();
        for (slot, &a) in self.memory.iter().enumerate() {
            memory[(pad + slot) * n + a] = 1.0;
        }
        Observation {
            keypoints: self.table.get(self.pose).flat(),
            memory,
        }
    }

    pub fn step(&mut self, action: ActionSpec) -> Result<StepResult> {
        let index = action
            .index(self.config.velocity_levels)
            .ok_or_else(|| invalid(format!("{action} is not in this action space")))?;
        self.step_index(index)
    }

    pub fn step_index(&mut self, index: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::ProtocolViolation(
                "step called on a finished or un-reset episode".into(),
            ));
        }
        let action = *self
            .actions
            .get(index)
            .ok_or_else(|| invalid(format!("action index {index} out of range")))?;
        self.pose = transition(self.pose, action, self.scene());
        self.steps += 1;
        if self.config.memory_len > 0 {
            if self.memory.len() == self.config.memory_len {
                self.memory.pop_front();
            }
            self.memory.push_back(index);
        }
        let distance_px = self.distance_at(self.pose);
        let terminated_by = if distance_px <= self.config.match_epsilon_px {
            TerminatedBy::Match
        } else if self.steps >= self.config.max_steps {
            TerminatedBy::StepCap
        } else {
            TerminatedBy::None
        };
        self.done = terminated_by != TerminatedBy::None;
        Ok(StepResult {
            observation: self.observation(),
            reward: reward_from_distance(distance_px, self.config.alpha),
            done: self.done,
            info: StepInfo {
                distance_px,
                pose: self.pose,
                steps: self.steps,
                terminated_by,
            },
        })
    }
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub pose: RobotPose,
    pub action: ActionSpec,
    pub reward: f64,
    pub distance_px: f64,
    pub done: bool,
}

impl TraceRow {
    pub fn from_step(action: ActionSpec, result: &StepResult) -> Self {
        Self {
            step: result.info.steps,
            pose: result.info.pose,
            action,
            reward: result.reward,
            distance_px: result.info.distance_px,
            done: result.done,
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "step,ix,iy,yaw_index,action,reward,distance_px,done";

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.9},{:.6},{}",
            r.step, r.pose.ix, r.pose.iy, r.pose.yaw_index, r.action, r.reward, r.distance_px, r.done
        )?;
    }
    Ok(())
}
