//! Python bindings: scene queries, the environment, training and the
//! pipeline helpers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framebot::a2c::{evaluate, train_with_table, GradCheckInstance, LossSelector, LossWeights, TrainConfig};
use framebot::composer::{self, generate_candidates, score_candidates, select_template, CandidateConfig, ScorerSpec};
use framebot::controller::PolicyMode;
use framebot::env::{self, ActionSpec, EnvConfig, KeypointTable, PhotoEnv, Start};
use framebot::io::{ParamsFile, RunConfig};
use framebot::oracle::{best_state_from_table, shortest_path};
use framebot::tracker::{read_scenario, run_script, TrackerConfig};
use framebot::world::{project_keypoints, KeypointVector, RobotPose, Scene};
use framebot::Error;

type Pose = (usize, usize, usize);
type Points = Vec<(f64, f64)>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Format(_) | Error::DegenerateGeometry(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn keypoints(points: Points) -> PyResult<KeypointVector> {
    KeypointVector::new(points.into_iter().map(|(x, y)| [x, y]).collect()).map_err(py_err)
}

fn points(kp: &KeypointVector) -> Points {
    kp.coords().iter().map(|p| (p[0], p[1])).collect()
}

fn pose((ix, iy, yaw): Pose) -> RobotPose {
    RobotPose::new(ix, iy, yaw)
}

fn tuple(p: RobotPose) -> Pose {
    (p.ix, p.iy, p.yaw_index)
}

#[pyclass(name = "Scene", from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: Scene,
}

#[pymethods]
impl PyScene {
    /// The default 5x5x24 scene, or the `[scene]` section of a run config.
    #[new]
    #[pyo3(signature = (config_toml = None))]
    fn new(config_toml: Option<&str>) -> PyResult<Self> {
        let inner = match config_toml {
            Some(text) => RunConfig::from_toml(text).map_err(py_err)?.scene,
            None => Scene::default(),
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn grid(&self) -> (usize, usize) {
        (self.inner.grid_nx, self.inner.grid_ny)
    }

    #[getter]
    fn n_yaw(&self) -> usize {
        self.inner.n_yaw
    }

    #[getter]
    fn state_count(&self) -> usize {
        self.inner.state_count()
    }

    /// Person keypoints seen from a grid state.
    fn keypoints(&self, state: Pose) -> PyResult<Points> {
        Ok(points(&project_keypoints(&self.inner, pose(state)).map_err(py_err)?))
    }

    /// Best state and its reward for a template.
    #[pyo3(signature = (template, alpha = 2.5e-3))]
    fn best_view(&self, template: Points, alpha: f64) -> PyResult<(Pose, f64)> {
        let table = KeypointTable::build(&self.inner).map_err(py_err)?;
        let best = best_state_from_table(&table, &keypoints(template)?, alpha).map_err(py_err)?;
        Ok((tuple(best.best_pose), best.best_reward))
    }

    /// Fewest actions from `start` to within `epsilon_px` of the template.
    #[pyo3(signature = (start, template, epsilon_px = 40.0, velocity_levels = 1))]
    fn path_length(
        &self,
        start: Pose,
        template: Points,
        epsilon_px: f64,
        velocity_levels: u32,
    ) -> PyResult<Option<usize>> {
        let table = KeypointTable::build(&self.inner).map_err(py_err)?;
        let t = keypoints(template)?;
        self.inner.check_pose(pose(start)).map_err(py_err)?;
        let d = table.distances(&t).map_err(py_err)?;
        let scene = &self.inner;
        match shortest_path(
            scene,
            pose(start),
            |p| d[scene.index_of(p)] <= epsilon_px,
            velocity_levels,
        ) {
            Ok(path) => Ok(Some(path.len())),
            Err(Error::NoPath(_)) => Ok(None),
            Err(e) => Err(py_err(e)),
        }
    }

    /// Scored candidate templates from a cell and the selected index.
    fn candidates(&self, py: Python<'_>, ix: usize, iy: usize) -> PyResult<(Vec<Py<PyDict>>, usize)> {
        let mut c = generate_candidates(&self.inner, ix, iy, &CandidateConfig::default()).map_err(py_err)?;
        let (w, h) = (self.inner.camera.width_px as f64, self.inner.camera.height_px as f64);
        score_candidates(&mut c, &ScorerSpec::default(), w, h).map_err(py_err)?;
        let best = select_template(&c).map_err(py_err)?;
        let list = c
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("yaw_deg", c.yaw_rad.to_degrees())?;
                d.set_item("distance_level", c.distance_level)?;
                d.set_item("hfov_deg", c.hfov_rad.to_degrees())?;
                d.set_item("score", c.score)?;
                d.set_item("keypoints", points(&c.keypoints))?;
                Ok(d.unbind())
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok((list, best))
    }
}

#[pyclass(name = "PhotoEnv")]
struct PyEnv {
    inner: PhotoEnv,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (scene = None, memory_len = 0, velocity_levels = 1, seed = 0))]
    fn new(scene: Option<PyScene>, memory_len: usize, velocity_levels: u32, seed: u64) -> PyResult<Self> {
        let scene = scene.map_or_else(Scene::default, |s| s.inner);
        let config = EnvConfig {
            memory_len,
            velocity_levels,
            ..EnvConfig::default()
        };
        let mut inner = PhotoEnv::new(&scene, config).map_err(py_err)?;
        inner.seed(seed);
        Ok(Self { inner })
    }

    /// Starts an episode; `start` is sampled when omitted.
    #[pyo3(signature = (template, start = None))]
    fn reset(&mut self, template: Points, start: Option<Pose>) -> PyResult<Vec<f64>> {
        let start = start.map_or(Start::Sampled, |p| Start::Pose(pose(p)));
        Ok(self.inner.reset(&keypoints(template)?, start).map_err(py_err)?.to_vec())
    }

    /// `(observation, reward, done, info)`.
    fn step<'py>(&mut self, py: Python<'py>, action: usize) -> PyResult<(Vec<f64>, f64, bool, Bound<'py, PyDict>)> {
        let r = self.inner.step_index(action).map_err(py_err)?;
        let info = PyDict::new(py);
        info.set_item("distance_px", r.info.distance_px)?;
        info.set_item("pose", tuple(r.info.pose))?;
        info.set_item("steps", r.info.steps)?;
        info.set_item("terminated_by", r.info.terminated_by.to_string())?;
        Ok((r.observation.to_vec(), r.reward, r.done, info))
    }

    #[getter]
    fn pose(&self) -> Pose {
        tuple(self.inner.pose())
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.actions().iter().map(ToString::to_string).collect()
    }

    #[getter]
    fn observation_len(&self) -> usize {
        self.inner.observation_len()
    }
}

#[pyclass(name = "Policy")]
struct PyPolicy {
    file: ParamsFile,
    curve: Vec<(usize, f64, f64, f64)>,
}

#[pymethods]
impl PyPolicy {
    /// Trains a policy toward `template` (default: the view from (2, 2, 0)).
    #[staticmethod]
    #[pyo3(signature = (template = None, memory_len = 0, velocity_levels = 1, total_updates = None, seed = 0, scene = None))]
    fn train(
        py: Python<'_>,
        template: Option<Points>,
        memory_len: usize,
        velocity_levels: u32,
        total_updates: Option<usize>,
        seed: u64,
        scene: Option<PyScene>,
    ) -> PyResult<Self> {
        let scene = scene.map_or_else(Scene::default, |s| s.inner);
        let template = match template {
            Some(t) => keypoints(t)?,
            None => project_keypoints(&scene, RobotPose::new(2, 2, 0)).map_err(py_err)?,
        };
        let env = EnvConfig {
            memory_len,
            velocity_levels,
            ..EnvConfig::default()
        };
        let mut config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        if let Some(n) = total_updates {
            config.total_updates = n;
        }
        let outcome = py.detach(|| {
            let table = KeypointTable::build(&scene)?;
            train_with_table(&table, &template, &env, &config)
        });
        let outcome = outcome.map_err(py_err)?;
        Ok(Self {
            curve: outcome
                .curve
                .iter()
                .map(|p| (p.update, p.mean_return, p.mean_len, p.success_rate))
                .collect(),
            file: ParamsFile::new(scene, env, &template, config, outcome.params),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            file: ParamsFile::from_json(text).map_err(py_err)?,
            curve: Vec::new(),
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.file.to_json().map_err(py_err)
    }

    /// `(update, mean_return, mean_len, success_rate)` rows from training.
    #[getter]
    fn curve(&self) -> Vec<(usize, f64, f64, f64)> {
        self.curve.clone()
    }

    /// Greedy action for an observation.
    fn act(&self, observation: Vec<f64>) -> PyResult<usize> {
        let (logits, _) = self.file.policy.forward(&observation).map_err(py_err)?;
        Ok(framebot::a2c::greedy_action(&logits))
    }

    #[pyo3(signature = (episodes = 300, env_seed = 1000, sampled = false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        episodes: usize,
        env_seed: u64,
        sampled: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let f = &self.file;
        let mut env = PhotoEnv::new(&f.scene, f.env).map_err(py_err)?;
        let template = f.template().map_err(py_err)?;
        env.reset(&template, Start::Pose(RobotPose::new(0, 0, 0)))
            .map_err(py_err)?;
        env.seed(env_seed);
        let mode = if sampled {
            PolicyMode::Sampled
        } else {
            PolicyMode::Greedy
        };
        let s = evaluate(&f.policy, &mut env, episodes, mode, f.train.seed).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("episodes", s.episodes)?;
        d.set_item("success_rate", s.success_rate)?;
        d.set_item("mean_actions", s.mean_actions)?;
        d.set_item("sd_actions", s.sd_actions)?;
        d.set_item("mean_return", s.mean_return)?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(signature = (v, goal, alpha = 2.5e-3))]
fn reward(v: Points, goal: Points, alpha: f64) -> PyResult<f64> {
    env::reward(&keypoints(v)?, &keypoints(goal)?, alpha).map_err(py_err)
}

/// Next state after an action such as `"translate+1"` or `"rotate-2"`.
#[pyfunction]
#[pyo3(signature = (state, action, scene = None))]
fn transition(state: Pose, action: &str, scene: Option<PyScene>) -> PyResult<Pose> {
    let scene = scene.map_or_else(Scene::default, |s| s.inner);
    scene.check_pose(pose(state)).map_err(py_err)?;
    let a: ActionSpec = action.parse().map_err(py_err)?;
    Ok(tuple(env::transition(pose(state), a, &scene)))
}

#[pyfunction]
fn pose_similarity(current: Points, trigger: Points) -> PyResult<f64> {
    composer::pose_similarity(&keypoints(current)?, &keypoints(trigger)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (current, trigger, threshold = 0.9))]
fn pose_trigger(current: Points, trigger: Points, threshold: f64) -> PyResult<bool> {
    composer::pose_trigger(&keypoints(current)?, &keypoints(trigger)?, threshold).map_err(py_err)
}

/// Replays scenario CSV text; one `(mode, linear, angular)` per frame.
#[pyfunction]
fn track(scenario_csv: &str) -> PyResult<Vec<(String, f64, f64)>> {
    let frames = read_scenario(scenario_csv.as_bytes()).map_err(py_err)?;
    let trace = run_script(&frames, &TrackerConfig::default()).map_err(py_err)?;
    Ok(trace
        .iter()
        .map(|e| (e.state.mode.to_string(), e.state.last_command.0, e.state.last_command.1))
        .collect())
}

/// Largest finite-difference relative error over random small networks.
#[pyfunction]
#[pyo3(signature = (instances = 100, seed = 0))]
fn grad_check(instances: usize, seed: u64) -> PyResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = LossWeights {
        value_coef: 0.5,
        entropy_coef: 0.01,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = GradCheckInstance::random(&mut rng).map_err(py_err)?;
        worst = worst.max(inst.check(weights, LossSelector::Total).map_err(py_err)?);
    }
    Ok(worst)
}

#[pymodule]
pub fn framebot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(transition, m)?)?;
    m.add_function(wrap_pyfunction!(pose_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(pose_trigger, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
