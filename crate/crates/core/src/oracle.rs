//! Brute-force ground truth over the full state space: exhaustive best-view
//! search, breadth-first shortest action paths and a one-step greedy
//! baseline.

use std::collections::{HashSet, VecDeque};
use std::io::Write;

use crate::env::{action_space, reward_from_distance, transition, ActionSpec, EnvConfig, KeypointTable, TraceRow};
use crate::error::{invalid, Error, Result};
use crate::world::{KeypointVector, RobotPose, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_pose: RobotPose,
    pub best_reward: f64,
    /// Reward of every state in [`Scene::index_of`] order.
    pub table: Vec<f64>,
}

/// Evaluates the reward of every state; ties resolve to the lowest index.
pub fn best_state(scene: &Scene, template: &KeypointVector, alpha: f64) -> Result<OracleResult> {
    let kp = KeypointTable::build(scene)?;
    best_state_from_table(&kp, template, alpha)
}

pub fn best_state_from_table(kp: &KeypointTable, template: &KeypointVector, alpha: f64) -> Result<OracleResult> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha must be positive"));
    }
    let table: Vec<f64> = kp
        .distances(template)?
        .into_iter()
        .map(|d| reward_from_distance(d, alpha))
        .collect();
    let (best, best_reward) =
        table.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |(bi, br), (i, &r)| if r > br { (i, r) } else { (bi, br) },
        );
    Ok(OracleResult {
        best_pose: kp.scene().pose_of_index(best),
        best_reward,
        table,
    })
}

/// Which states count as reaching the template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalSpec {
    /// Reward within `tol` of the best achievable reward.
    BestReward { tol: f64 },
    /// Keypoint distance at most `epsilon_px`.
    MatchRegion { epsilon_px: f64 },
}

/// Goal membership of every state, in index order.
pub fn goal_mask(kp: &KeypointTable, template: &KeypointVector, alpha: f64, goal: GoalSpec) -> Result<Vec<bool>> {
    match goal {
        GoalSpec::BestReward { tol } => {
            let res = best_state_from_table(kp, template, alpha)?;
            Ok(res.table.iter().map(|&r| r >= res.best_reward - tol).collect())
        }
        GoalSpec::MatchRegion { epsilon_px } => {
            Ok(kp.distances(template)?.into_iter().map(|d| d <= epsilon_px).collect())
        }
    }
}

/// Minimum-length action sequence from `from` to any state satisfying
/// `goal`. Successors are expanded in canonical action order, so among
/// equal-length paths the one with the lexicographically smallest action
/// indices wins.
pub fn shortest_path(
    scene: &Scene,
    from: RobotPose,
    goal: impl Fn(RobotPose) -> bool,
    levels: u32,
) -> Result<Vec<ActionSpec>> {
    scene.check_pose(from)?;
    if goal(from) {
        return Ok(Vec::new());
    }
    let actions = action_space(levels);
    let n = scene.state_count();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    let start = scene.index_of(from);
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let pose = scene.pose_of_index(i);
        for (a, &action) in actions.iter().enumerate() {
            let next = transition(pose, action, scene);
            let j = scene.index_of(next);
            if seen[j] {
                continue;
            }
            seen[j] = true;
            parent[j] = Some((i, a));
            if goal(next) {
                let mut path = Vec::new();
                let mut cur = j;
                while let Some((p, a)) = parent[cur] {
                    path.push(actions[a]);
                    cur = p;
                }
                path.reverse();
                return Ok(path);
            }
            queue.push_back(j);
        }
    }
    Err(Error::NoPath(from.to_string()))
}

/// BFS depth of every state from `from` (`None` when unreachable).
pub fn bfs_depths(scene: &Scene, from: RobotPose, levels: u32) -> Result<Vec<Option<usize>>> {
    scene.check_pose(from)?;
    let actions = action_space(levels);
    let mut depth = vec![None; scene.state_count()];
    let start = scene.index_of(from);
    depth[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let d = depth[i].unwrap_or(0);
        let pose = scene.pose_of_index(i);
        for &action in &actions {
            let j = scene.index_of(transition(pose, action, scene));
            if depth[j].is_none() {
                depth[j] = Some(d + 1);
                queue.push_back(j);
            }
        }
    }
    Ok(depth)
}

/// Shortest path length from every state to the goal set, computed with one
/// reverse breadth-first sweep. `None` when no path exists.
pub fn distances_to_goal(scene: &Scene, goal: &[bool], levels: u32) -> Vec<Option<usize>> {
    let actions = action_space(levels);
    let n = scene.state_count();
    let mut predecessors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let pose = scene.pose_of_index(i);
        for &a in &actions {
            predecessors[scene.index_of(transition(pose, a, scene))].push(i);
        }
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for (i, &g) in goal.iter().enumerate() {
        if g {
            dist[i] = Some(0);
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        let d = dist[j].unwrap_or(0);
        for &i in &predecessors[j] {
            if dist[i].is_none() {
                dist[i] = Some(d + 1);
                queue.push_back(i);
            }
        }
    }
    dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreedyStop {
    Match,
    StepCap,
    /// The best next state had already been visited.
    Cycle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub rows: Vec<TraceRow>,
    pub stop: GreedyStop,
    pub final_pose: RobotPose,
}

/// One-step lookahead: always take the action whose successor has the
/// highest reward (ties in canonical order).
pub fn greedy_baseline(
    scene: &Scene,
    template: &KeypointVector,
    start: RobotPose,
    env_config: &EnvConfig,
) -> Result<GreedyTrace> {
    let kp = KeypointTable::build(scene)?;
    greedy_with_table(&kp, template, start, env_config)
}

pub fn greedy_with_table(
    kp: &KeypointTable,
    template: &KeypointVector,
    start: RobotPose,
    env_config: &EnvConfig,
) -> Result<GreedyTrace> {
    env_config.validate()?;
    let scene = kp.scene();
    scene.check_pose(start)?;
    let distances = kp.distances(template)?;
    let dist = |p: RobotPose| distances[scene.index_of(p)];
    let actions = action_space(env_config.velocity_levels);
    let mut rows = Vec::new();
    let mut pose = start;
    let mut visited = HashSet::from([start]);
    let stop = loop {
        if dist(pose) <= env_config.match_epsilon_px {
            break GreedyStop::Match;
        }
        if rows.len() >= env_config.max_steps {
            break GreedyStop::StepCap;
        }
        let (action, next) = actions
            .iter()
            .map(|&a| (a, transition(pose, a, scene)))
            .fold(None, |best: Option<(ActionSpec, RobotPose)>, (a, p)| match best {
                Some((_, bp)) if dist(bp) <= dist(p) => best,
                _ => Some((a, p)),
            })
            .expect("action space is never empty");
        if !visited.insert(next) {
            break GreedyStop::Cycle;
        }
        pose = next;
        let d = dist(pose);
        rows.push(TraceRow {
            step: rows.len() + 1,
            pose,
            action,
            reward: reward_from_distance(d, env_config.alpha),
            distance_px: d,
            done: d <= env_config.match_epsilon_px || rows.len() + 1 >= env_config.max_steps,
        });
    };
    Ok(GreedyTrace {
        rows,
        stop,
        final_pose: pose,
    })
}

pub const REWARD_TABLE_CSV_HEADER: &str = "ix,iy,yaw_index,reward";

pub fn write_reward_table_csv<W: Write>(scene: &Scene, table: &[f64], mut out: W) -> Result<()> {
    if table.len() != scene.state_count() {
        return Err(invalid("reward table does not cover the scene"));
    }
    writeln!(out, "{REWARD_TABLE_CSV_HEADER}")?;
    for (i, r) in table.iter().enumerate() {
        let p = scene.pose_of_index(i);
        writeln!(out, "{},{},{},{:.12}", p.ix, p.iy, p.yaw_index, r)?;
    }
    Ok(())
}
