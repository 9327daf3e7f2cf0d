//! Run configuration and trained-policy files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::a2c::{PolicyParams, TrainConfig};
use crate::composer::{CandidateConfig, ScorerSpec};
use crate::controller::PolicyMode;
use crate::env::EnvConfig;
use crate::error::{invalid, Error, Result};
use crate::tracker::TrackerConfig;
use crate::world::{project_keypoints, KeypointVector, RobotPose, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Grid state whose view becomes the template, unless `file` is set.
    pub pose: RobotPose,
    /// Template text file; relative paths resolve against the working
    /// directory.
    pub file: Option<String>,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            pose: RobotPose::new(2, 2, 0),
            file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub mode: PolicyMode,
    /// Seeds the environment's start sampler.
    pub env_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            mode: PolicyMode::Greedy,
            env_seed: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposeConfig {
    /// Cell whose panorama supplies the candidates.
    pub cell: [usize; 2],
    pub start: RobotPose,
    pub trigger_threshold: f64,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            cell: [2, 2],
            start: RobotPose::new(0, 0, 6),
            trigger_threshold: crate::composer::DEFAULT_TRIGGER_THRESHOLD,
        }
    }
}

/// Every module's settings in one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into `train.seed` on resolve.
    pub seed: u64,
    pub out: String,
    pub scene: Scene,
    pub env: EnvConfig,
    pub template: TemplateConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub tracker: TrackerConfig,
    pub scorer: ScorerSpec,
    pub candidates: CandidateConfig,
    pub compose: ComposeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: "out".into(),
            scene: Scene::default(),
            env: EnvConfig::default(),
            template: TemplateConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            tracker: TrackerConfig::default(),
            scorer: ScorerSpec::default(),
            candidates: CandidateConfig::default(),
            compose: ComposeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Propagates the master seed and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.scene.validate()?;
        self.env.validate()?;
        self.train.validate()?;
        self.tracker.validate()?;
        self.scorer.validate()?;
        self.scene.check_pose(self.template.pose)?;
        self.scene.check_pose(self.compose.start)?;
        self.scene
            .check_pose(RobotPose::new(self.compose.cell[0], self.compose.cell[1], 0))?;
        if self.eval.episodes == 0 {
            return Err(invalid("eval.episodes must be at least 1"));
        }
        Ok(self)
    }

    pub fn load_template(&self) -> Result<KeypointVector> {
        match &self.template.file {
            Some(path) => {
                let file = std::fs::File::open(path)?;
                Ok(crate::composer::read_template(std::io::BufReader::new(file))?.keypoints)
            }
            None => project_keypoints(&self.scene, self.template.pose),
        }
    }
}

pub const PARAMS_FORMAT: &str = "framebot-policy";
pub const PARAMS_VERSION: u32 = 1;

/// A trained policy with everything needed to evaluate it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub format: String,
    pub version: u32,
    pub scene: Scene,
    pub env: EnvConfig,
    pub template: Vec<[f64; 2]>,
    pub train: TrainConfig,
    pub policy: PolicyParams,
}

impl ParamsFile {
    pub fn new(
        scene: Scene,
        env: EnvConfig,
        template: &KeypointVector,
        train: TrainConfig,
        policy: PolicyParams,
    ) -> Self {
        Self {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            scene,
            env,
            template: template.coords().to_vec(),
            train,
            policy,
        }
    }

    pub fn template(&self) -> Result<KeypointVector> {
        KeypointVector::new(self.template.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("params: {e}")))?;
        if file.format != PARAMS_FORMAT {
            return Err(Error::Format(format!("not a policy file (format '{}')", file.format)));
        }
        if file.version != PARAMS_VERSION {
            return Err(Error::Format(format!(
                "unsupported policy file version {}",
                file.version
            )));
        }
        let p = &file.policy;
        if p.theta.len() != p.spec.param_count() || !p.is_finite() {
            return Err(Error::Format("policy weights do not match the network shape".into()));
        }
        if p.input_len() != file.env.observation_len(file.template.len()) || p.action_count() != file.env.action_count()
        {
            return Err(Error::Format(
                "policy shape does not match the stored environment".into(),
            ));
        }
        file.scene.validate()?;
        file.env.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
