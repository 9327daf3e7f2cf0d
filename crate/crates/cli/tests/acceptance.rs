//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use framebot::a2c::{GradCheckInstance, LossSelector, LossWeights, TrainConfig};
use framebot::composer::{argmax_score, generate_candidates, pose_similarity, pose_trigger, CandidateConfig};
use framebot::controller::PolicyMode;
use framebot::env::{
    action_space, reward, reward_from_distance, transition, ActionKind, EnvConfig, KeypointTable, PhotoEnv, Start,
};
use framebot::experiment::{compare_controllers, mean_final_return, train_seeds, Comparison, SeedRun};
use framebot::oracle::{bfs_depths, distances_to_goal, goal_mask, shortest_path, GoalSpec};
use framebot::panorama::{
    dewarp_crop, equirect_to_ray, generate_rotation_crops, pixel_to_ray, ray_to_equirect, ray_to_pixel,
    rotate_equirect, PerspectiveCamera,
};
use framebot::tracker::{command, run_script, select_target, smooth, Detection, Mode, SimFrame, TrackerConfig};
use framebot::world::{
    project_keypoints, render_synthetic_equirect, skeleton_keypoints_3d, KeypointVector, RobotPose, Scene,
};

// Tolerances and budgets.
const REWARD_SPOT_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const ROUND_TRIP_TOL_PX: f64 = 0.5;
const MIN_SUCCESS: f64 = 0.9;
const MAX_ACTION_RATIO: f64 = 2.5;
const C1_BUDGET: Duration = Duration::from_secs(1);
const C3_BUDGET: Duration = Duration::from_secs(30);
const C4_BUDGET: Duration = Duration::from_secs(10);
const C5_BUDGET: Duration = Duration::from_secs(600);

// Training harness shared by criteria 5 and 6.
const SEEDS: usize = 5;
const EVAL_EPISODES: usize = 300;
const EVAL_ENV_SEED: u64 = 1000;

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n:>2} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn template() -> KeypointVector {
    project_keypoints(&Scene::default(), RobotPose::new(2, 2, 0)).unwrap()
}

// ---------------------------------------------------------------- 1

/// `sin(15° k)`: exact halves where the value is rational, `None` otherwise.
fn sin_halves(k: usize) -> Option<i64> {
    match (15 * k) % 360 {
        0 | 180 => Some(0),
        90 => Some(2),
        270 => Some(-2),
        30 | 150 => Some(1),
        210 | 330 => Some(-1),
        _ => None,
    }
}

/// Nearest integer to `x + delta * sin(15° k)`, halves away from zero.
fn snapped(x: usize, delta: i64, k: usize) -> i64 {
    match sin_halves(k) {
        Some(h) => {
            let twice = 2 * x as i64 + delta * h;
            if twice % 2 == 0 {
                twice / 2
            } else {
                (twice + twice.signum()) / 2
            }
        }
        None => {
            let v = x as f64 + delta as f64 * (15.0 * k as f64).to_radians().sin();
            let frac = v - v.floor();
            assert!((frac - 0.5).abs() > 1e-6, "irrational offset landed on a half");
            v.round() as i64
        }
    }
}

fn expected_transition(scene: &Scene, p: RobotPose, kind: ActionKind, sign: i64, level: i64) -> RobotPose {
    let n = scene.n_yaw as i64;
    match kind {
        ActionKind::Rotate => RobotPose::new(p.ix, p.iy, (p.yaw_index as i64 + sign * level).rem_euclid(n) as usize),
        ActionKind::Translate => {
            let delta = sign * level;
            // cos(θ) = sin(θ + 90°)
            let x = snapped(p.ix, delta, p.yaw_index);
            let y = snapped(p.iy, delta, (p.yaw_index + 6) % 24);
            RobotPose::new(
                x.clamp(0, scene.grid_nx as i64 - 1) as usize,
                y.clamp(0, scene.grid_ny as i64 - 1) as usize,
                p.yaw_index,
            )
        }
    }
}

#[test]
fn c01_transition_oracle() {
    let scene = Scene::default();
    assert_eq!(scene.n_yaw, 24);
    let t0 = Instant::now();
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for levels in [1u32, 3] {
        let actions = action_space(levels);
        assert_eq!(actions.len(), 4 * levels as usize);
        for p in scene.poses() {
            for a in &actions {
                let got = transition(p, *a, &scene);
                let want = expected_transition(&scene, p, a.kind, a.sign as i64, a.level as i64);
                if got != want {
                    mismatches.push(format!("{p} {a}: {got} vs {want}"));
                }
                checked += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    let ok = mismatches.is_empty() && checked == 600 * 16 && elapsed < C1_BUDGET;
    report(
        1,
        "transition oracle",
        ok,
        &format!(
            "{checked} pairs, {} mismatches, {elapsed:.2?}; first: {:?}",
            mismatches.len(),
            mismatches.first()
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_reward_law() {
    let alpha = 2.5e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut samples = Vec::with_capacity(10_000);
    let mut failures = Vec::new();
    for i in 0..10_000 {
        let a: Vec<[f64; 2]> = (0..14)
            .map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)])
            .collect();
        let b: Vec<[f64; 2]> = if i % 10 == 0 {
            a.clone()
        } else {
            let spread = rng.random_range(0.0..300.0);
            a.iter()
                .map(|p| {
                    [
                        p[0] + rng.random_range(-spread..=spread),
                        p[1] + rng.random_range(-spread..=spread),
                    ]
                })
                .collect()
        };
        let equal = a == b;
        let (va, vb) = (KeypointVector::new(a).unwrap(), KeypointVector::new(b).unwrap());
        let r = reward(&va, &vb, alpha).unwrap();
        let d = va.distance(&vb).unwrap();
        if !(r > 0.0 && r <= 1.0) || ((r == 1.0) != equal) {
            failures.push(format!("pair {i}: r {r} equal {equal}"));
        }
        samples.push((d, r));
    }
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));
    for w in samples.windows(2) {
        let ((d0, r0), (d1, r1)) = (w[0], w[1]);
        if (d1 > d0 && r1 >= r0) || (d1 == d0 && r1 != r0) {
            failures.push(format!("monotonicity: d {d0} -> {d1}, r {r0} -> {r1}"));
        }
    }
    let mut goal = vec![[100.0, 100.0]; 14];
    let v = KeypointVector::new(goal.clone()).unwrap();
    goal[3] = [340.0, 420.0];
    let spot = reward(&v, &KeypointVector::new(goal).unwrap(), alpha).unwrap();
    let spot_err = (spot - (-1.0f64).exp())
        .abs()
        .max((reward_from_distance(400.0, alpha) - (-1.0f64).exp()).abs());
    let far_err = (reward_from_distance(800.0, alpha) - (-2.0f64).exp()).abs();
    let ok = failures.is_empty() && spot_err <= REWARD_SPOT_TOL && far_err <= REWARD_SPOT_TOL;
    report(
        2,
        "reward law",
        ok,
        &format!(
            "10000 pairs, {} violations, |r(400)-e^-1| = {spot_err:.1e}, |r(800)-e^-2| = {far_err:.1e}; first: {:?}",
            failures.len(),
            failures.first()
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_gradient_verification() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weights = LossWeights {
        value_coef: 0.5,
        entropy_coef: 0.01,
    };
    let selectors = [
        LossSelector::Total,
        LossSelector::Policy,
        LossSelector::Value,
        LossSelector::Entropy,
    ];
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for i in 0..100 {
        let inst = GradCheckInstance::random(&mut rng).unwrap();
        largest = largest.max(inst.params.theta.len());
        worst = worst.max(inst.check(weights, selectors[i % 4]).unwrap());
    }
    let elapsed = t0.elapsed();
    let ok = worst <= GRAD_TOL && largest <= 500 && elapsed < C3_BUDGET;
    report(
        3,
        "gradient verification",
        ok,
        &format!("100 instances, max rel error {worst:.2e}, largest net {largest} params, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_reachability_and_planning() {
    let t0 = Instant::now();
    let scene = Scene::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut covered = true;
    for _ in 0..10 {
        let from = scene.pose_of_index(rng.random_range(0..scene.state_count()));
        covered &= bfs_depths(&scene, from, 1).unwrap().iter().all(Option::is_some);
    }
    let table = KeypointTable::build(&scene).unwrap();
    let t = template();
    let env = EnvConfig::default();
    let mask = goal_mask(
        &table,
        &t,
        env.alpha,
        GoalSpec::MatchRegion {
            epsilon_px: env.match_epsilon_px,
        },
    )
    .unwrap();
    let to_goal = distances_to_goal(&scene, &mask, 1);
    let longest = to_goal.iter().map(|d| d.unwrap_or(usize::MAX)).max().unwrap();
    // spot-check the reverse search against forward searches
    let mut agree = true;
    for i in (0..scene.state_count()).step_by(37) {
        let p = scene.pose_of_index(i);
        let path = shortest_path(&scene, p, |q| mask[scene.index_of(q)], 1).unwrap();
        agree &= Some(path.len()) == to_goal[i];
    }
    let elapsed = t0.elapsed();
    let ok = covered && longest <= env.max_steps && agree && elapsed < C4_BUDGET;
    report(
        4,
        "reachability and planning",
        ok,
        &format!("10 starts cover 600 states: {covered}, longest path to template {longest}, forward agrees: {agree}, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------- 5 and 6

struct Runs {
    config: TrainConfig,
    table: KeypointTable,
    l3_mem5: Vec<SeedRun>,
    elapsed: Duration,
}

fn env_with(memory_len: usize, velocity_levels: u32) -> EnvConfig {
    EnvConfig {
        memory_len,
        velocity_levels,
        ..EnvConfig::default()
    }
}

/// Trained once, shared by criteria 5 and 6.
fn l3_mem5_runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t0 = Instant::now();
        let config = TrainConfig::default();
        let table = KeypointTable::build(&Scene::default()).unwrap();
        let runs = train_seeds(&table, &template(), &env_with(5, 3), &config, 0, SEEDS, threads()).unwrap();
        Runs {
            config,
            table,
            l3_mem5: runs,
            elapsed: t0.elapsed(),
        }
    })
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(SEEDS)
}

#[test]
fn c05_training_efficacy() {
    let runs = l3_mem5_runs();
    let t0 = Instant::now();
    let t = template();
    let mut env = PhotoEnv::with_table(runs.table.clone(), env_with(5, 3)).unwrap();
    env.reset(&t, Start::Pose(RobotPose::new(0, 0, 0))).unwrap();
    let mut ok = true;
    for run in &runs.l3_mem5 {
        let c: Comparison = compare_controllers(
            &run.outcome.params,
            PolicyMode::Greedy,
            &mut env,
            EVAL_ENV_SEED,
            EVAL_EPISODES,
            run.seed,
        )
        .unwrap();
        let seed_ok = c.policy.success_rate >= MIN_SUCCESS
            && c.action_ratio() <= MAX_ACTION_RATIO
            && c.random.success_rate < c.policy.success_rate
            && c.random.mean_actions > c.policy.mean_actions;
        println!(
            "  seed {}: greedy success {:.3} actions {:.2} | oracle {:.2} | ratio {:.2} | random success {:.3} actions {:.2}",
            run.seed,
            c.policy.success_rate,
            c.policy.mean_actions,
            c.oracle.mean_actions,
            c.action_ratio(),
            c.random.success_rate,
            c.random.mean_actions
        );
        ok &= seed_ok;
    }
    let elapsed = runs.elapsed + t0.elapsed();
    ok &= elapsed < C5_BUDGET;
    report(
        5,
        "training efficacy",
        ok,
        &format!(
            "{SEEDS} seeds, memory 5, 3 velocity levels, {} updates each, {elapsed:.1?} incl. training",
            runs.config.total_updates
        ),
    );
}

#[test]
fn c06_ablation_direction() {
    let runs = l3_mem5_runs();
    let t = template();
    let mem0 = train_seeds(&runs.table, &t, &env_with(0, 3), &runs.config, 0, SEEDS, threads()).unwrap();
    let l1 = train_seeds(&runs.table, &t, &env_with(5, 1), &runs.config, 0, SEEDS, threads()).unwrap();
    let improved = mean_final_return(&runs.l3_mem5).unwrap();
    let memory = (mean_final_return(&mem0).unwrap(), improved);
    let velocity = (mean_final_return(&l1).unwrap(), improved);
    let mem_ok = memory.1 >= memory.0;
    let vel_ok = velocity.1 >= velocity.0;
    let flag = |ok: bool| if ok { "holds" } else { "FAILS" };
    report(
        6,
        "ablation direction",
        mem_ok && vel_ok,
        &format!(
            "memory 0 -> 5 at 3 levels: {:.3} -> {:.3} {}; levels 1 -> 3 at memory 5: {:.3} -> {:.3} {}",
            memory.0,
            memory.1,
            flag(mem_ok),
            velocity.0,
            velocity.1,
            flag(vel_ok)
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_panorama_round_trip() {
    let cam = PerspectiveCamera::default().with_yaw(0.7);
    let (w, h) = (2048, 1024);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (u, v) = (rng.random_range(0.5..639.5), rng.random_range(0.5..479.5));
        let ray = pixel_to_ray(&cam, u, v).unwrap();
        let (x, y) = ray_to_equirect(&ray, w, h);
        let back = ray_to_pixel(&cam, &equirect_to_ray(x, y, w, h)).unwrap();
        worst = worst.max((back.0 - u).hypot(back.1 - v));
    }

    let scene = Scene {
        panorama_height_px: 96,
        ..Scene::default()
    };
    let pano = render_synthetic_equirect(&scene, 2, 2).unwrap();
    let small = PerspectiveCamera::new(78f64.to_radians(), 48, 36).unwrap();
    let crops = generate_rotation_crops(&pano, &small, 24).unwrap();
    let mut spaced = crops.len() == 24;
    for (k, crop) in crops.iter().enumerate() {
        let yaw = (15.0 * k as f64).to_radians();
        let rotated = rotate_equirect(&pano, -yaw).unwrap();
        spaced &= *crop == dewarp_crop(&rotated, &small).unwrap();
    }
    report(
        7,
        "panorama round trip",
        worst <= ROUND_TRIP_TOL_PX && spaced,
        &format!(
            "max error {worst:.2e} px over 1000 pixels; {} crops, each the 15 deg rotated forward crop: {spaced}",
            crops.len()
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_tracker_thresholds() {
    let c = TrackerConfig::default();
    let det = |s: f64| Detection::scored(s).unwrap();
    let frame = |sims: &[f64], d: f64| SimFrame {
        detections: sims.iter().map(|&s| det(s)).collect(),
        target_distance_m: Some(d),
        target_bearing_rad: Some(0.0),
        obstacle_distance_m: 5.0,
    };
    let picked = select_target(&[det(0.78), det(0.80), det(0.91)], c.drop_threshold).map(|d| d.similarity);

    let script = vec![
        frame(&[0.78, 0.80, 0.91], 2.0),
        frame(&[0.78, 0.80, 0.91], 2.0),
        frame(&[0.78, 0.80, 0.91], 2.0),
        frame(&[0.78, 0.79], 2.0),
        frame(&[0.5], 2.0),
        frame(&[0.91], 0.5),
        frame(&[0.91], 0.4),
        frame(&[0.91], 0.2),
        frame(&[0.91], 0.0),
    ];
    let trace = run_script(&script, &c).unwrap();
    let step = c.a_max_mps2 * c.dt_s;
    let ramp: Vec<f64> = trace[..3].iter().map(|e| e.state.last_command.0).collect();
    let mut prev = (0.0, 0.0);
    let mut within = true;
    for e in &trace {
        within &= (e.state.last_command.0 - prev.0).abs() <= step && (e.state.last_command.1 - prev.1).abs() <= step;
        prev = e.state.last_command;
    }
    let gap_ok = trace[3..5]
        .iter()
        .all(|e| e.selected_similarity.is_none() && e.state.mode == Mode::Waiting && e.target_command == (0.0, 0.0));
    let zone_ok = trace[5..].iter().all(|e| e.target_command.0 == 0.0)
        && [0.5, 0.4, 0.1, 0.0]
            .iter()
            .all(|&d| command(Some(&det(0.9)), &frame(&[0.9], d), &c).0 .0 == 0.0);
    let exact = smooth((0.0, 0.0), (0.15, 0.0), c.a_max_mps2, c.dt_s) == (0.05, 0.0);
    let ok = picked == Some(0.91) && ramp == [0.05, 0.1, 0.15] && within && gap_ok && zone_ok && exact;
    report(
        8,
        "tracker thresholds",
        ok,
        &format!("selected {picked:?}, ramp {ramp:?}, steps within a_max*dt: {within}, sub-0.80 frames idle: {gap_ok}, zone stop: {zone_ok}"),
    );
}

// ---------------------------------------------------------------- 9

/// Independent containment test: camera-frame coordinates by hand.
fn contained(scene: &Scene, ix: usize, iy: usize, yaw: f64, hfov: f64) -> bool {
    let (w, h) = (scene.camera.width_px as f64, scene.camera.height_px as f64);
    let f = (w / 2.0) / (hfov / 2.0).tan();
    let eye = scene.eye_at(ix, iy);
    skeleton_keypoints_3d(&scene.person).iter().all(|p| {
        let (dx, dy, dz) = (p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]);
        let right = dx * yaw.cos() - dz * yaw.sin();
        let forward = dx * yaw.sin() + dz * yaw.cos();
        if forward <= 0.0 {
            return false;
        }
        let (u, v) = (w / 2.0 + f * right / forward, h / 2.0 - f * dy / forward);
        u > 0.0 && u < w && v > 0.0 && v < h
    })
}

#[test]
fn c09_composer_invariants() {
    let scene = Scene::default();
    let config = CandidateConfig::default();
    let (w, h) = (scene.camera.width_px as f64, scene.camera.height_px as f64);
    let mut containment = true;
    let mut total = 0;
    for ix in 0..scene.grid_nx {
        for iy in 0..scene.grid_ny {
            let got = generate_candidates(&scene, ix, iy, &config).unwrap();
            total += got.len();
            let got_keys: Vec<(usize, usize)> = got
                .iter()
                .map(|c| ((c.yaw_rad / scene.yaw_step_rad()).round() as usize, c.distance_level))
                .collect();
            let mut want = Vec::new();
            for k in 0..24 {
                for (level, fov) in config.fov_levels_deg.iter().enumerate() {
                    if contained(&scene, ix, iy, (15.0 * k as f64).to_radians(), fov.to_radians()) {
                        want.push((k, level));
                    }
                }
            }
            containment &= got_keys == want;
            containment &= got.iter().all(|c| {
                c.keypoints
                    .coords()
                    .iter()
                    .all(|p| p[0] > 0.0 && p[0] < w && p[1] > 0.0 && p[1] < h)
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut argmax_stable = true;
    let mut trigger_ok = true;
    for _ in 0..500 {
        let n = rng.random_range(1..40);
        // coarse values so ties occur
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let k = rng.random_range(0.001..1000.0);
        let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
        argmax_stable &= argmax_score(&scores).unwrap() == argmax_score(&scaled).unwrap();

        let a: Vec<[f64; 2]> = (0..14)
            .map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)])
            .collect();
        let b: Vec<[f64; 2]> = (0..14)
            .map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)])
            .collect();
        let (s, dx, dy) = (
            rng.random_range(0.05..20.0),
            rng.random_range(-1e3..1e3),
            rng.random_range(-1e3..1e3),
        );
        let moved = KeypointVector::new(a.iter().map(|p| [s * p[0] + dx, s * p[1] + dy]).collect()).unwrap();
        let (a, b) = (KeypointVector::new(a).unwrap(), KeypointVector::new(b).unwrap());
        let (s0, s1) = (pose_similarity(&a, &b).unwrap(), pose_similarity(&moved, &b).unwrap());
        trigger_ok &= (s0 - s1).abs() <= 1e-9;
        for threshold in [1.0, 0.99, 0.9, 0.5, 0.0] {
            trigger_ok &= pose_trigger(&a, &a, threshold).unwrap();
            trigger_ok &= pose_trigger(&moved, &a, threshold).unwrap();
            trigger_ok &= pose_trigger(&a, &b, threshold).unwrap() == pose_trigger(&moved, &b, threshold).unwrap();
        }
    }
    report(
        9,
        "composer invariants",
        containment && argmax_stable && trigger_ok,
        &format!("containment exact over 25 cells ({total} candidates): {containment}; argmax scale-stable: {argmax_stable}; trigger invariant: {trigger_ok}"),
    );
}

// ---------------------------------------------------------------- 10

fn framebot(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_framebot"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "framebot {args:?} failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn csv_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (PathBuf::from(p.file_name().unwrap()), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

type CommandOutputs = Vec<(String, Vec<(PathBuf, Vec<u8>)>)>;

fn run_every_command(root: &Path, config: &Path, scenario: &Path) -> CommandOutputs {
    let cfg = config.to_str().unwrap();
    let dir = |name: &str| root.join(name).to_str().unwrap().to_string();
    let train = dir("train");
    let params = format!("{train}/params.json");
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("train", vec!["train".into()]),
        (
            "ablation",
            vec![
                "train".into(),
                "--ablation".into(),
                "velocity".into(),
                "--seeds".into(),
                "2".into(),
            ],
        ),
        (
            "eval",
            vec![
                "eval".into(),
                "--params".into(),
                params.clone(),
                "--mode".into(),
                "sampled".into(),
            ],
        ),
        (
            "eval_oracle",
            vec!["eval".into(), "--controller".into(), "oracle".into()],
        ),
        ("match", vec!["match".into(), "--controller".into(), "random".into()]),
        ("oracle", vec!["oracle".into()]),
        ("track", vec!["track".into(), scenario.to_str().unwrap().into()]),
        (
            "compose",
            vec!["compose".into(), "--controller".into(), "greedy".into()],
        ),
        (
            "grad_check",
            vec!["grad-check".into(), "--instances".into(), "10".into()],
        ),
    ];
    let mut out = Vec::new();
    for (name, args) in commands {
        let target = if name == "train" { train.clone() } else { dir(name) };
        let mut full: Vec<&str> = vec!["--config", cfg, "--seed", "11", "--out", &target];
        full.extend(args.iter().map(String::as_str));
        framebot(&full);
        out.push((name.to_string(), csv_files(Path::new(&target))));
    }
    out
}

#[test]
fn c10_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "[train]\ntotal_updates = 150\nlog_interval = 25\nn_envs = 4\nhidden = [16]\n[eval]\nepisodes = 40\n",
    )
    .unwrap();
    let scenario = tmp.path().join("scenario.csv");
    std::fs::write(
        &scenario,
        "similarities,target_distance_m,target_bearing_rad,obstacle_distance_m\n0.78;0.80;0.91,2.0,0.3,3\n0.6,2.0,0.3,3\n0.95,0.4,-0.2,0.3\n",
    )
    .unwrap();
    let first = run_every_command(&tmp.path().join("a"), &config, &scenario);
    let second = run_every_command(&tmp.path().join("b"), &config, &scenario);
    let files: usize = first.iter().map(|(_, f)| f.len()).sum();
    let mut differing = Vec::new();
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        if a != b {
            differing.push(name.clone());
        }
    }
    let all_present = first.iter().all(|(_, f)| !f.is_empty());
    report(
        10,
        "reproducibility",
        differing.is_empty() && all_present,
        &format!(
            "{} commands, {files} CSV files byte-compared, differing: {differing:?}",
            first.len()
        ),
    );
}
