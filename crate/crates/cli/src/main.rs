use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framebot::a2c::{train_with_table, GradCheckInstance, LossSelector, LossWeights, PolicyParams};
use framebot::composer::{
    generate_candidates, match_and_capture, pose_similarity, score_candidates, select_template, write_candidates_csv,
    write_template, CandidateTemplate,
};
use framebot::controller::{
    evaluate_controller, Controller, EpisodeRecord, EvalStats, GreedyController, OracleController, PolicyController,
    PolicyMode, RandomController,
};
use framebot::env::{write_trace_csv, EnvConfig, KeypointTable, PhotoEnv, Start};
use framebot::experiment::{run_ablation, Ablation};
use framebot::io::{ParamsFile, RunConfig};
use framebot::oracle::{best_state_from_table, distances_to_goal, goal_mask, write_reward_table_csv, GoalSpec};
use framebot::panorama::dewarp_crop;
use framebot::tracker::{read_scenario, run_script, write_trace_csv as write_track_csv};
use framebot::world::{project_keypoints, render_synthetic_equirect, KeypointVector, PoseParams, RobotPose, Scene};
use framebot::Error;

#[derive(Parser)]
#[command(name = "framebot", version, about = "Robot portrait view-adjustment simulator")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Policy,
    Oracle,
    Greedy,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    Memory,
    Velocity,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Greedy,
    Sampled,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy, or both arms of an ablation.
    Train {
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
        /// Seeds per ablation arm, counting up from the master seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Worker threads for ablation runs; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Success rate and action-count statistics over sampled starts.
    Eval {
        #[arg(long, value_enum, default_value = "policy")]
        controller: ControllerArg,
        /// Policy file written by `train`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// One matching episode toward the configured template.
    Match {
        #[arg(long, value_enum, default_value = "oracle")]
        controller: ControllerArg,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Start pose as `ix,iy,yaw_index`; sampled when omitted.
        #[arg(long)]
        start: Option<String>,
    },
    /// Exhaustive reward table, best view and shortest-path histogram.
    Oracle,
    /// Replay a scripted detection scenario through the tracker.
    Track { scenario: PathBuf },
    /// Select a template from panorama candidates and drive to it.
    Compose {
        #[arg(long, value_enum, default_value = "oracle")]
        controller: ControllerArg,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Also write the panorama and the selected crop as PPM.
        #[arg(long)]
        render: bool,
    },
    /// Finite-difference check of the policy/value gradients.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Exit code 2: the inputs could not be used.
struct Usage(String);

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage<T>(r: framebot::Result<T>, what: &str) -> Result<T, Usage> {
    r.map_err(|e| Usage(format!("{what}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

struct Ctx {
    config: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn create(&self, name: &str) -> std::io::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Usage> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
            usage(RunConfig::from_toml(&text), &path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.display().to_string();
    }
    usage(config.resolve(), "config")
}

fn run(cli: Cli) -> Outcome {
    let config = load_config(&cli)?;
    let out = PathBuf::from(&config.out);
    std::fs::create_dir_all(&out).map_err(|e| Failure::Usage(format!("output directory {}: {e}", out.display())))?;
    let ctx = Ctx { config, out };
    let mut resolved = ctx.create("config.toml")?;
    resolved.write_all(ctx.config.to_toml()?.as_bytes())?;
    resolved.flush()?;

    match cli.command {
        Command::Train {
            ablation,
            seeds,
            threads,
        } => cmd_train(&ctx, ablation, seeds, threads),
        Command::Eval {
            controller,
            params,
            episodes,
            mode,
        } => cmd_eval(&ctx, controller, params.as_deref(), episodes, mode),
        Command::Match {
            controller,
            params,
            start,
        } => cmd_match(&ctx, controller, params.as_deref(), start.as_deref()),
        Command::Oracle => cmd_oracle(&ctx),
        Command::Track { scenario } => cmd_track(&ctx, &scenario),
        Command::Compose {
            controller,
            params,
            render,
        } => cmd_compose(&ctx, controller, params.as_deref(), render),
        Command::GradCheck { instances, tolerance } => cmd_grad_check(&ctx, instances, tolerance),
    }
}

fn template_of(config: &RunConfig) -> Result<KeypointVector, Usage> {
    usage(config.load_template(), "template")
}

fn cmd_train(ctx: &Ctx, ablation: Option<AblationArg>, seeds: usize, threads: usize) -> Outcome {
    let c = &ctx.config;
    let template = template_of(c)?;
    let table = KeypointTable::build(&c.scene)?;
    let Some(ablation) = ablation else {
        let outcome = train_with_table(&table, &template, &c.env, &c.train)?;
        framebot::a2c::write_curve_csv(&outcome.curve, ctx.create("curve.csv")?)?;
        ParamsFile::new(c.scene, c.env, &template, c.train.clone(), outcome.params.clone())
            .save(&ctx.out.join("params.json"))?;
        let mut env = PhotoEnv::with_table(table, c.env)?;
        env.reset(&template, Start::Pose(c.template.pose))?;
        env.seed(c.eval.env_seed);
        let stats = framebot::a2c::evaluate(&outcome.params, &mut env, c.eval.episodes, c.eval.mode, c.seed)?;
        println!("episodes trained: {}", outcome.episodes);
        if let Some(r) = outcome.final_mean_return() {
            println!("final mean return: {r:.4}");
        }
        print_stats("policy", &stats);
        return Ok(());
    };
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let ablation = match ablation {
        AblationArg::Memory => Ablation::Memory,
        AblationArg::Velocity => Ablation::Velocity,
    };
    let report = run_ablation(&table, &template, &c.env, &c.train, ablation, c.seed, seeds, threads)?;
    for (label, runs) in report.labels.iter().zip(&report.runs) {
        for r in runs {
            framebot::a2c::write_curve_csv(
                &r.outcome.curve,
                ctx.create(&format!("curve_{label}_seed{}.csv", r.seed))?,
            )?;
        }
    }
    report.write_csv(ctx.create(&format!("ablation_{ablation}.csv"))?)?;
    let summary = report.summary();
    writeln!(ctx.create(&format!("ablation_{ablation}.txt"))?, "{summary}")?;
    println!("{summary}");
    if !report.direction_holds() {
        eprintln!("warning: {ablation} ablation direction does not hold; see ablation_{ablation}.csv");
    }
    Ok(())
}

struct Loaded {
    scene: Scene,
    env: EnvConfig,
    template: KeypointVector,
    policy: Option<PolicyParams>,
}

/// Environment and template come from the policy file when one is given.
fn load_controller_inputs(ctx: &Ctx, controller: ControllerArg, params: Option<&Path>) -> Result<Loaded, Usage> {
    let c = &ctx.config;
    match (controller, params) {
        (ControllerArg::Policy, None) => Err(Usage("the policy controller needs --params".into())),
        (_, Some(path)) => {
            let file = usage(ParamsFile::load(path), &path.display().to_string())?;
            Ok(Loaded {
                scene: file.scene,
                env: file.env,
                template: usage(file.template(), "params template")?,
                policy: Some(file.policy),
            })
        }
        (_, None) => Ok(Loaded {
            scene: c.scene,
            env: c.env,
            template: template_of(c)?,
            policy: None,
        }),
    }
}

fn make_controller<'a>(
    kind: ControllerArg,
    policy: Option<&'a PolicyParams>,
    mode: PolicyMode,
    seed: u64,
) -> Box<dyn Controller + 'a> {
    match (kind, policy) {
        (ControllerArg::Policy, Some(p)) => Box::new(PolicyController::new(p, mode, seed)),
        (ControllerArg::Policy, None) => unreachable!("policy inputs are checked on load"),
        (ControllerArg::Oracle, _) => Box::new(OracleController::new()),
        (ControllerArg::Greedy, _) => Box::new(GreedyController),
        (ControllerArg::Random, _) => Box::new(RandomController::new(seed)),
    }
}

fn controller_name(kind: ControllerArg) -> &'static str {
    match kind {
        ControllerArg::Policy => "policy",
        ControllerArg::Oracle => "oracle",
        ControllerArg::Greedy => "greedy",
        ControllerArg::Random => "random",
    }
}

fn print_stats(name: &str, s: &EvalStats) {
    println!(
        "{:<8} {:>8} {:>8} {:>10} {:>10} {:>10}",
        "", "episodes", "success", "mean_acts", "sd_acts", "return"
    );
    println!(
        "{:<8} {:>8} {:>8.3} {:>10.3} {:>10.3} {:>10.3}",
        name, s.episodes, s.success_rate, s.mean_actions, s.sd_actions, s.mean_return
    );
}

fn cmd_eval(
    ctx: &Ctx,
    kind: ControllerArg,
    params: Option<&Path>,
    episodes: Option<usize>,
    mode: Option<ModeArg>,
) -> Outcome {
    let c = &ctx.config;
    let episodes = episodes.unwrap_or(c.eval.episodes);
    if episodes == 0 {
        return Err(Failure::Usage("--episodes must be at least 1".into()));
    }
    let mode = match mode {
        Some(ModeArg::Greedy) => PolicyMode::Greedy,
        Some(ModeArg::Sampled) => PolicyMode::Sampled,
        None => c.eval.mode,
    };
    let loaded = load_controller_inputs(ctx, kind, params)?;
    let mut env = PhotoEnv::new(&loaded.scene, loaded.env)?;
    env.reset(&loaded.template, Start::Pose(RobotPose::new(0, 0, 0)))?;
    env.seed(c.eval.env_seed);
    if let Some(p) = &loaded.policy {
        if p.input_len() != env.observation_len() || p.action_count() != env.actions().len() {
            return Err(Failure::Usage("policy shape does not match its environment".into()));
        }
    }
    let mut controller = make_controller(kind, loaded.policy.as_ref(), mode, c.seed);
    let (stats, _) = evaluate_controller(controller.as_mut(), &mut env, episodes)?;
    let mut f = ctx.create("eval.csv")?;
    writeln!(
        f,
        "controller,episodes,success_rate,mean_actions,sd_actions,mean_return"
    )?;
    writeln!(
        f,
        "{},{},{:.6},{:.6},{:.6},{:.6}",
        controller_name(kind),
        stats.episodes,
        stats.success_rate,
        stats.mean_actions,
        stats.sd_actions,
        stats.mean_return
    )?;
    print_stats(controller_name(kind), &stats);
    Ok(())
}

fn parse_start(start: Option<&str>) -> Result<Start, Usage> {
    match start {
        Some(s) => Ok(Start::Pose(usage(s.parse(), "--start")?)),
        None => Ok(Start::Sampled),
    }
}

fn cmd_match(ctx: &Ctx, kind: ControllerArg, params: Option<&Path>, start: Option<&str>) -> Outcome {
    let start = parse_start(start)?;
    let loaded = load_controller_inputs(ctx, kind, params)?;
    let mut env = PhotoEnv::new(&loaded.scene, loaded.env)?;
    if let Start::Pose(p) = start {
        usage(env.scene().check_pose(p), "--start")?;
    }
    env.seed(ctx.config.eval.env_seed);
    let mut controller = make_controller(kind, loaded.policy.as_ref(), ctx.config.eval.mode, ctx.config.seed);
    let capture = match_and_capture(controller.as_mut(), &mut env, &loaded.template, start)?;
    write_trace_csv(&capture.record.rows, ctx.create("trace.csv")?)?;
    println!(
        "start {} -> {} in {} actions, {}",
        capture.record.start,
        capture.record.rows.last().map_or(capture.record.start, |r| r.pose),
        capture.actions(),
        if capture.success() { "matched" } else { "not matched" }
    );
    Ok(())
}

fn cmd_oracle(ctx: &Ctx) -> Outcome {
    let c = &ctx.config;
    let template = template_of(c)?;
    let table = KeypointTable::build(&c.scene)?;
    let best = best_state_from_table(&table, &template, c.env.alpha)?;
    write_reward_table_csv(&c.scene, &best.table, ctx.create("reward_table.csv")?)?;
    let mask = goal_mask(
        &table,
        &template,
        c.env.alpha,
        GoalSpec::MatchRegion {
            epsilon_px: c.env.match_epsilon_px,
        },
    )?;
    let depths = distances_to_goal(&c.scene, &mask, c.env.velocity_levels);
    let longest = depths.iter().flatten().max().copied().unwrap_or(0);
    let mut hist = vec![0usize; longest + 1];
    for d in depths.iter().flatten() {
        hist[*d] += 1;
    }
    let unreachable = depths.iter().filter(|d| d.is_none()).count();
    let mut f = ctx.create("path_lengths.csv")?;
    writeln!(f, "length,count")?;
    for (len, n) in hist.iter().enumerate() {
        writeln!(f, "{len},{n}")?;
    }
    writeln!(f, "unreachable,{unreachable}")?;
    println!("best pose {} reward {:.6}", best.best_pose, best.best_reward);
    println!(
        "match region {} states, longest shortest path {longest}, unreachable {unreachable}",
        mask.iter().filter(|m| **m).count()
    );
    Ok(())
}

fn cmd_track(ctx: &Ctx, scenario: &Path) -> Outcome {
    let file = File::open(scenario).map_err(|e| Failure::Usage(format!("scenario {}: {e}", scenario.display())))?;
    let frames = usage(read_scenario(BufReader::new(file)), &scenario.display().to_string())?;
    let trace = run_script(&frames, &ctx.config.tracker)?;
    write_track_csv(&trace, ctx.create("track_trace.csv")?)?;
    println!("{} frames replayed", trace.len());
    Ok(())
}

/// Top-down view of the grid, north up: `S` start, `E` end, `*` visited.
fn render_path(scene: &Scene, record: &EpisodeRecord) -> String {
    let mut grid = vec![vec!['.'; scene.grid_nx]; scene.grid_ny];
    for r in &record.rows {
        grid[r.pose.iy][r.pose.ix] = '*';
    }
    grid[record.start.iy][record.start.ix] = 'S';
    if let Some(last) = record.rows.last() {
        grid[last.pose.iy][last.pose.ix] = 'E';
    }
    let mut s = String::new();
    for row in grid.iter().rev() {
        s.extend(row.iter().flat_map(|c| [*c, ' ']));
        s.truncate(s.trim_end().len());
        s.push('\n');
    }
    s
}

fn cmd_compose(ctx: &Ctx, kind: ControllerArg, params: Option<&Path>, render: bool) -> Outcome {
    let c = &ctx.config;
    let loaded = load_controller_inputs(ctx, kind, params)?;
    let scene = loaded.scene;
    let [cx, cy] = c.compose.cell;
    let mut candidates = generate_candidates(&scene, cx, cy, &c.candidates)?;
    let (w, h) = (scene.camera.width_px, scene.camera.height_px);
    score_candidates(&mut candidates, &c.scorer, w as f64, h as f64)?;
    let best = select_template(&candidates)?;
    write_candidates_csv(&candidates, Some(best), ctx.create("candidates.csv")?)?;
    let chosen: &CandidateTemplate = &candidates[best];
    write_template(&chosen.keypoints, w, h, ctx.create("template.txt")?)?;
    if render {
        let pano = render_synthetic_equirect(&scene, cx, cy)?;
        pano.image().write_ppm(ctx.create("panorama.ppm")?)?;
        let cam = scene.camera.with_hfov(chosen.hfov_rad).with_yaw(chosen.yaw_rad);
        dewarp_crop(&pano, &cam)?.write_ppm(ctx.create("template.ppm")?)?;
    }
    if loaded.policy.is_some() && loaded.template != chosen.keypoints {
        eprintln!("warning: the policy was trained for a different template");
    }

    let mut env = PhotoEnv::new(&scene, loaded.env)?;
    let mut controller = make_controller(kind, loaded.policy.as_ref(), c.eval.mode, c.seed);
    let capture = match_and_capture(
        controller.as_mut(),
        &mut env,
        &chosen.keypoints,
        Start::Pose(c.compose.start),
    )?;
    write_trace_csv(&capture.record.rows, ctx.create("compose_trace.csv")?)?;

    let mut trigger_scene = scene;
    trigger_scene.person.pose = PoseParams::arms_up();
    let end = env.pose();
    let trigger = project_keypoints(&trigger_scene, end)?;
    let similarity = pose_similarity(&capture.final_keypoints, &trigger)?;

    let mut report = String::new();
    report.push_str(&format!("candidates: {}\n", candidates.len()));
    report.push_str(&format!(
        "selected: index {best} yaw {:.1} deg level {} fov {:.1} deg score {:.6}\n",
        chosen.yaw_rad.to_degrees(),
        chosen.distance_level,
        chosen.hfov_rad.to_degrees(),
        chosen.score.unwrap_or(f64::NAN)
    ));
    report.push_str(&format!("controller: {}\n", controller_name(kind)));
    report.push_str(&format!("start: {}\n", capture.record.start));
    report.push_str(&format!("end: {end}\n"));
    report.push_str(&format!("actions: {}\n", capture.actions()));
    report.push_str(&format!("success: {}\n", capture.success()));
    report.push_str(&format!(
        "final distance px: {:.6}\n",
        capture.final_keypoints.distance(&chosen.keypoints)?
    ));
    report.push_str(&format!(
        "shutter: similarity {similarity:.6} to the arms-up trigger, fires {}\n",
        similarity >= c.compose.trigger_threshold
    ));
    report.push_str("final keypoints:\n");
    for (name, p) in framebot::world::JOINT_NAMES
        .iter()
        .zip(capture.final_keypoints.coords())
    {
        report.push_str(&format!("  {name} {:.3} {:.3}\n", p[0], p[1]));
    }
    report.push_str("path (north up, S start, E end, * visited):\n");
    report.push_str(&render_path(&scene, &capture.record));
    ctx.create("compose_report.txt")?.write_all(report.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn cmd_grad_check(ctx: &Ctx, instances: usize, tolerance: f64) -> Outcome {
    if instances == 0 {
        return Err(Failure::Usage("--instances must be at least 1".into()));
    }
    let weights = LossWeights {
        value_coef: ctx.config.train.value_coef,
        entropy_coef: ctx.config.train.entropy_coef,
    };
    let selectors = [
        LossSelector::Total,
        LossSelector::Policy,
        LossSelector::Value,
        LossSelector::Entropy,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed);
    let mut f = ctx.create("gradcheck.csv")?;
    writeln!(f, "instance,params,selector,max_rel_error")?;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let inst = GradCheckInstance::random(&mut rng)?;
        let sel = selectors[i % selectors.len()];
        let err = inst.check(weights, sel)?;
        worst = worst.max(err);
        writeln!(f, "{i},{},{sel:?},{err:.3e}", inst.params.theta.len())?;
    }
    println!("max relative error {worst:.3e} over {instances} instances (tolerance {tolerance:.0e})");
    if worst > tolerance {
        return Err(Failure::Runtime("gradient check exceeded tolerance".into()));
    }
    Ok(())
}
