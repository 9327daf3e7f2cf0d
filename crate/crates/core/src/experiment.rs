//! Multi-seed training comparisons shared by the CLI and the test suites.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::a2c::{train_with_table, TrainConfig, TrainOutcome};
use crate::controller::{
    evaluate_controller, Controller, EvalStats, OracleController, PolicyController, PolicyMode, RandomController,
};
use crate::env::{EnvConfig, KeypointTable, PhotoEnv};
use crate::error::{invalid, Error, Result};
use crate::world::KeypointVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// memory_len 0 against 5.
    Memory,
    /// One velocity level against three.
    Velocity,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(Self::Memory),
            "velocity" => Ok(Self::Velocity),
            other => Err(invalid(format!("unknown ablation '{other}'"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Memory => "memory",
            Self::Velocity => "velocity",
        })
    }
}

impl Ablation {
    /// `(label, env)` for the baseline and the improved variant.
    pub fn variants(self, base: &EnvConfig) -> [(String, EnvConfig); 2] {
        match self {
            Self::Memory => [
                ("memory0".into(), EnvConfig { memory_len: 0, ..*base }),
                ("memory5".into(), EnvConfig { memory_len: 5, ..*base }),
            ],
            Self::Velocity => [
                (
                    "levels1".into(),
                    EnvConfig {
                        velocity_levels: 1,
                        ..*base
                    },
                ),
                (
                    "levels3".into(),
                    EnvConfig {
                        velocity_levels: 3,
                        ..*base
                    },
                ),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
}

impl SeedRun {
    pub fn final_return(&self) -> Result<f64> {
        self.outcome
            .final_mean_return()
            .ok_or_else(|| invalid(format!("seed {} finished no episodes", self.seed)))
    }
}

/// Trains one run per seed, `seed0..seed0 + n`, on up to `threads` threads.
/// Results come back in seed order and do not depend on `threads`.
pub fn train_seeds(
    table: &KeypointTable,
    template: &KeypointVector,
    env: &EnvConfig,
    config: &TrainConfig,
    seed0: u64,
    n: usize,
    threads: usize,
) -> Result<Vec<SeedRun>> {
    let seeds: Vec<u64> = (0..n as u64).map(|k| seed0 + k).collect();
    let run = |seed: u64| -> Result<SeedRun> {
        let config = TrainConfig { seed, ..config.clone() };
        Ok(SeedRun {
            seed,
            outcome: train_with_table(table, template, env, &config)?,
        })
    };
    let threads = threads.max(1);
    let mut out = Vec::with_capacity(n);
    for chunk in seeds.chunks(threads) {
        let results: Vec<Result<SeedRun>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| s.spawn(move || run(seed))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::ProtocolViolation("training thread panicked".into())))
                })
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn mean_final_return(runs: &[SeedRun]) -> Result<f64> {
    if runs.is_empty() {
        return Err(invalid("no runs"));
    }
    let sum = runs.iter().map(SeedRun::final_return).sum::<Result<f64>>()?;
    Ok(sum / runs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub ablation: Ablation,
    pub labels: [String; 2],
    pub runs: [Vec<SeedRun>; 2],
    pub means: [f64; 2],
}

impl AblationReport {
    /// The improved variant's mean final return is at least the baseline's.
    pub fn direction_holds(&self) -> bool {
        self.means[1] >= self.means[0]
    }

    pub fn summary(&self) -> String {
        format!(
            "{} ablation: {} {:.4} vs {} {:.4} -> {}",
            self.ablation,
            self.labels[0],
            self.means[0],
            self.labels[1],
            self.means[1],
            if self.direction_holds() {
                "direction holds"
            } else {
                "DIRECTION FAILS"
            }
        )
    }

    /// `variant,seed,final_mean_return`, then one `mean` row per variant.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "variant,seed,final_mean_return")?;
        for (label, runs) in self.labels.iter().zip(&self.runs) {
            for r in runs {
                writeln!(out, "{label},{},{:.9}", r.seed, r.final_return()?)?;
            }
        }
        for (label, mean) in self.labels.iter().zip(self.means) {
            writeln!(out, "{label},mean,{mean:.9}")?;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    table: &KeypointTable,
    template: &KeypointVector,
    base: &EnvConfig,
    config: &TrainConfig,
    ablation: Ablation,
    seed0: u64,
    seeds: usize,
    threads: usize,
) -> Result<AblationReport> {
    let [(l0, e0), (l1, e1)] = ablation.variants(base);
    let r0 = train_seeds(table, template, &e0, config, seed0, seeds, threads)?;
    let r1 = train_seeds(table, template, &e1, config, seed0, seeds, threads)?;
    Ok(AblationReport {
        ablation,
        means: [mean_final_return(&r0)?, mean_final_return(&r1)?],
        labels: [l0, l1],
        runs: [r0, r1],
    })
}

/// Evaluates `controller` over `episodes` starts drawn with `env_seed`, so
/// different controllers see the same start sequence.
pub fn evaluate_on_starts<C: Controller + ?Sized>(
    controller: &mut C,
    env: &mut PhotoEnv,
    env_seed: u64,
    episodes: usize,
) -> Result<EvalStats> {
    env.seed(env_seed);
    Ok(evaluate_controller(controller, env, episodes)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub policy: EvalStats,
    pub oracle: EvalStats,
    pub random: EvalStats,
}

impl Comparison {
    pub fn action_ratio(&self) -> f64 {
        self.policy.mean_actions / self.oracle.mean_actions
    }
}

/// Policy, shortest-path oracle and uniform-random controllers on one start
/// sequence. `env` must already hold the template.
pub fn compare_controllers(
    policy: &crate::a2c::PolicyParams,
    mode: PolicyMode,
    env: &mut PhotoEnv,
    env_seed: u64,
    episodes: usize,
    action_seed: u64,
) -> Result<Comparison> {
    Ok(Comparison {
        policy: evaluate_on_starts(
            &mut PolicyController::new(policy, mode, action_seed),
            env,
            env_seed,
            episodes,
        )?,
        oracle: evaluate_on_starts(&mut OracleController::new(), env, env_seed, episodes)?,
        random: evaluate_on_starts(&mut RandomController::new(action_seed), env, env_seed, episodes)?,
    })
}
