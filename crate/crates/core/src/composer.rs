//! Template selection from a panorama and the capture step that follows it.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::controller::{run_episode, Controller, EpisodeRecord};
use crate::env::{PhotoEnv, Start};
use crate::error::{invalid, Error, Result};
use crate::panorama::{dewarp_crop, PerspectiveCamera, RgbImage};
use crate::world::{joint, render_synthetic_equirect, skeleton_keypoints_3d, KeypointVector, Scene, JOINT_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub n_yaw: usize,
    /// One crop field of view per distance level, widest first.
    pub fov_levels_deg: Vec<f64>,
    pub render_images: bool,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            n_yaw: 24,
            fov_levels_deg: vec![78.0, 60.0, 45.0],
            render_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTemplate {
    pub keypoints: KeypointVector,
    pub yaw_rad: f64,
    pub distance_level: usize,
    pub hfov_rad: f64,
    pub image: Option<RgbImage>,
    pub score: Option<f64>,
}

/// Unclamped projection; `None` when any joint is on or outside the frame.
fn project_inside(cam: &PerspectiveCamera, eye: [f64; 3], points: &[[f64; 3]]) -> Option<KeypointVector> {
    let f = cam.focal_px();
    let (cx, cy) = cam.center();
    let (w, h) = (cam.width_px as f64, cam.height_px as f64);
    let mut coords = Vec::with_capacity(points.len());
    for p in points {
        let c = cam.world_to_camera([p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]]);
        if c[2] <= 1e-9 {
            return None;
        }
        let (u, v) = (cx + f * c[0] / c[2], cy - f * c[1] / c[2]);
        if !(u > 0.0 && u < w && v > 0.0 && v < h) {
            return None;
        }
        coords.push([u, v]);
    }
    KeypointVector::new(coords).ok()
}

/// Every (yaw, zoom level) crop from cell `(ix, iy)` that fully contains the
/// person, in yaw-major order.
pub fn generate_candidates(
    scene: &Scene,
    ix: usize,
    iy: usize,
    config: &CandidateConfig,
) -> Result<Vec<CandidateTemplate>> {
    if config.n_yaw == 0 {
        return Err(invalid("candidate yaw set is empty"));
    }
    if config.fov_levels_deg.is_empty() {
        return Err(invalid("candidate distance levels are empty"));
    }
    scene.check_pose(crate::world::RobotPose::new(ix, iy, 0))?;
    let eye = scene.eye_at(ix, iy);
    let joints = skeleton_keypoints_3d(&scene.person);
    let panorama = if config.render_images {
        Some(render_synthetic_equirect(scene, ix, iy)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for k in 0..config.n_yaw {
        let yaw = k as f64 * std::f64::consts::TAU / config.n_yaw as f64;
        for (level, fov) in config.fov_levels_deg.iter().enumerate() {
            let cam = scene.camera.with_hfov(fov.to_radians()).with_yaw(yaw);
            cam.validate()?;
            let Some(keypoints) = project_inside(&cam, eye, &joints) else {
                continue;
            };
            let image = panorama.as_ref().map(|p| dewarp_crop(p, &cam)).transpose()?;
            out.push(CandidateTemplate {
                keypoints,
                yaw_rad: yaw,
                distance_level: level,
                hfov_rad: cam.hfov_rad,
                image,
                score: None,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicScorer {
    /// Weights of the thirds, size and headroom terms.
    pub weights: [f64; 3],
    /// Ideal person height as a fraction of frame height.
    pub target_height_ratio: f64,
    /// Half-width of the size kernel, in the same units.
    pub height_tolerance: f64,
    /// Ideal gap above the head as a fraction of frame height.
    pub headroom_fraction: f64,
    pub headroom_tolerance: f64,
}

impl Default for HeuristicScorer {
    fn default() -> Self {
        Self {
            weights: [0.4, 0.4, 0.2],
            target_height_ratio: 0.6,
            height_tolerance: 0.4,
            headroom_fraction: 0.08,
            headroom_tolerance: 0.12,
        }
    }
}

fn triangle(x: f64, center: f64, half_width: f64) -> f64 {
    (1.0 - (x - center).abs() / half_width).max(0.0)
}

impl HeuristicScorer {
    pub fn validate(&self) -> Result<()> {
        if !self.weights.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            return Err(invalid("scorer weights must be non-negative"));
        }
        let positive = [self.target_height_ratio, self.height_tolerance, self.headroom_tolerance];
        if !positive.iter().all(|v| *v > 0.0 && v.is_finite()) || !(self.headroom_fraction >= 0.0) {
            return Err(invalid("scorer targets and tolerances must be positive"));
        }
        Ok(())
    }

    /// Per-term scores in `[0, 1]`: thirds, size, headroom.
    pub fn terms(&self, keypoints: &KeypointVector, width: f64, height: f64) -> [f64; 3] {
        let c = keypoints.coords();
        let neck_x = c[joint::NECK][0];
        let d = (neck_x - width / 3.0).abs().min((neck_x - 2.0 * width / 3.0).abs());
        // the frame centre is the farthest point from both lines
        let thirds = (1.0 - d / (width / 6.0)).max(0.0);
        let top = c.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let bottom = c.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let size = triangle((bottom - top) / height, self.target_height_ratio, self.height_tolerance);
        let headroom = triangle(top / height, self.headroom_fraction, self.headroom_tolerance);
        [thirds, size, headroom]
    }

    pub fn score(&self, keypoints: &KeypointVector, width: f64, height: f64) -> f64 {
        let t = self.terms(keypoints, width, height);
        self.weights.iter().zip(t).map(|(w, v)| w * v).sum()
    }
}

/// Named scorer; higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ScorerSpec {
    Heuristic(HeuristicScorer),
}

impl Default for ScorerSpec {
    fn default() -> Self {
        Self::Heuristic(HeuristicScorer::default())
    }
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Heuristic(h) => h.validate(),
        }
    }

    pub fn score(&self, keypoints: &KeypointVector, width: f64, height: f64) -> f64 {
        match self {
            Self::Heuristic(h) => h.score(keypoints, width, height),
        }
    }
}

pub fn heuristic_score(candidate: &CandidateTemplate, width: f64, height: f64) -> f64 {
    HeuristicScorer::default().score(&candidate.keypoints, width, height)
}

/// Fills in every candidate's score.
pub fn score_candidates(
    candidates: &mut [CandidateTemplate],
    scorer: &ScorerSpec,
    width: f64,
    height: f64,
) -> Result<()> {
    scorer.validate()?;
    for c in candidates.iter_mut() {
        let s = scorer.score(&c.keypoints, width, height);
        if !s.is_finite() {
            return Err(Error::DegenerateGeometry("scorer returned a non-finite score".into()));
        }
        c.score = Some(s);
    }
    Ok(())
}

/// Index of the highest score, ties to the lowest index.
pub fn argmax_score(scores: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoCandidates)
}

/// Index of the best scored candidate; unscored candidates are an error.
pub fn select_template(candidates: &[CandidateTemplate]) -> Result<usize> {
    let scores = candidates
        .iter()
        .map(|c| c.score.ok_or_else(|| invalid("candidate has no score")))
        .collect::<Result<Vec<_>>>()?;
    argmax_score(&scores)
}

/// Centroid to the origin, RMS radius to 1.
pub fn normalize_pose(kp: &KeypointVector) -> Result<Vec<[f64; 2]>> {
    let c = kp.coords();
    let n = c.len() as f64;
    let mean = [
        c.iter().map(|p| p[0]).sum::<f64>() / n,
        c.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let rms = (c
        .iter()
        .map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(rms > 1e-12) {
        return Err(invalid("keypoints collapse to a single point"));
    }
    Ok(c.iter()
        .map(|p| [(p[0] - mean[0]) / rms, (p[1] - mean[1]) / rms])
        .collect())
}

/// Normalized pose distances below this count as identical.
pub const POSE_DISTANCE_FLOOR: f64 = 1e-9;

pub fn pose_similarity(current: &KeypointVector, trigger: &KeypointVector) -> Result<f64> {
    if current.len() != trigger.len() {
        return Err(invalid(format!(
            "keypoint length mismatch: {} vs {}",
            current.len(),
            trigger.len()
        )));
    }
    let (a, b) = (normalize_pose(current)?, normalize_pose(trigger)?);
    let d = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum::<f64>()
        .sqrt();
    // normalization roundoff must not break exact matches
    Ok(if d < POSE_DISTANCE_FLOOR { 1.0 } else { (-d).exp() })
}

/// Shutter test: normalized pose similarity at least `threshold`.
pub fn pose_trigger(current: &KeypointVector, trigger: &KeypointVector, threshold: f64) -> Result<bool> {
    Ok(pose_similarity(current, trigger)? >= threshold)
}

pub const DEFAULT_TRIGGER_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureOutcome {
    pub final_keypoints: KeypointVector,
    pub record: EpisodeRecord,
}

impl CaptureOutcome {
    pub fn success(&self) -> bool {
        self.record.success
    }

    pub fn actions(&self) -> usize {
        self.record.actions()
    }
}

/// Drives one episode toward `template`. Any template of the right length
/// is accepted, whether selected here or supplied by the user.
pub fn match_and_capture<C: Controller + ?Sized>(
    controller: &mut C,
    env: &mut PhotoEnv,
    template: &KeypointVector,
    start: Start,
) -> Result<CaptureOutcome> {
    env.reset(template, start)?;
    let from = Start::Pose(env.pose());
    let record = run_episode(controller, env, from)?;
    Ok(CaptureOutcome {
        final_keypoints: env.table().get(env.pose()).clone(),
        record,
    })
}

pub const TEMPLATE_HEADER: &str = "keypoints";

/// Template text: `keypoints K W H`, then K lines of `name x y`.
pub fn write_template<W: Write>(kp: &KeypointVector, width: usize, height: usize, mut out: W) -> Result<()> {
    if kp.len() != JOINT_NAMES.len() {
        return Err(invalid(format!(
            "template needs {} keypoints, got {}",
            JOINT_NAMES.len(),
            kp.len()
        )));
    }
    writeln!(out, "{TEMPLATE_HEADER} {} {width} {height}", kp.len())?;
    for (name, p) in JOINT_NAMES.iter().zip(kp.coords()) {
        writeln!(out, "{name} {} {}", p[0], p[1])?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateFile {
    pub keypoints: KeypointVector,
    pub width: usize,
    pub height: usize,
}

pub fn read_template<R: BufRead>(input: R) -> Result<TemplateFile> {
    let mut lines = input.lines().map(|l| l.map_err(Error::from)).filter(|l| {
        l.as_ref()
            .map_or(true, |s| !s.trim().is_empty() && !s.trim_start().starts_with('#'))
    });
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty template file".into()))??;
    let head: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad integer '{s}'")))
    };
    if head.len() != 4 || head[0] != TEMPLATE_HEADER {
        return Err(Error::Format(format!(
            "expected '{TEMPLATE_HEADER} K W H', found '{header}'"
        )));
    }
    let (k, width, height) = (parse_usize(head[1])?, parse_usize(head[2])?, parse_usize(head[3])?);
    if k != JOINT_NAMES.len() {
        return Err(Error::Format(format!(
            "template has {k} keypoints, expected {}",
            JOINT_NAMES.len()
        )));
    }
    let mut coords = Vec::with_capacity(k);
    for name in JOINT_NAMES {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing keypoint '{name}'")))??;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != name {
            return Err(Error::Format(format!("expected '{name} x y', found '{line}'")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("bad coordinate '{s}'")))
        };
        coords.push([num(parts[1])?, num(parts[2])?]);
    }
    if let Some(extra) = lines.next() {
        return Err(Error::Format(format!("trailing content '{}'", extra?)));
    }
    Ok(TemplateFile {
        keypoints: KeypointVector::new(coords)?,
        width,
        height,
    })
}

pub const CANDIDATE_CSV_HEADER: &str = "index,yaw_deg,distance_level,hfov_deg,score,selected";

pub fn write_candidates_csv<W: Write>(
    candidates: &[CandidateTemplate],
    selected: Option<usize>,
    mut out: W,
) -> Result<()> {
    writeln!(out, "{CANDIDATE_CSV_HEADER}")?;
    for (i, c) in candidates.iter().enumerate() {
        writeln!(
            out,
            "{i},{:.1},{},{:.1},{},{}",
            c.yaw_rad.to_degrees(),
            c.distance_level,
            c.hfov_rad.to_degrees(),
            c.score.map(|s| format!("{s:.6}")).unwrap_or_default(),
            u8::from(selected == Some(i))
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::OracleController;
    use crate::env::EnvConfig;
    use crate::world::{project_keypoints, PoseParams, RobotPose};
    use proptest::prelude::*;

    const W: f64 = 640.0;
    const H: f64 = 480.0;

    fn kp(points: &[[f64; 2]]) -> KeypointVector {
        KeypointVector::new(points.to_vec()).unwrap()
    }

    /// A 14-point figure with the neck at `neck_x`, head at `top`, feet at
    /// `top + span`.
    fn figure(neck_x: f64, top: f64, span: f64) -> KeypointVector {
        let mut pts = vec![[neck_x, top + span / 2.0]; 14];
        pts[joint::HEAD] = [neck_x, top];
        pts[joint::NECK] = [neck_x, top + 0.1 * span];
        pts[joint::R_ANKLE] = [neck_x + 10.0, top + span];
        pts[joint::L_ANKLE] = [neck_x - 10.0, top + span];
        kp(&pts)
    }

    #[test]
    fn default_candidate_count_and_containment() {
        let scene = Scene::default();
        let config = CandidateConfig {
            fov_levels_deg: vec![170.0],
            n_yaw: 24,
            ..CandidateConfig::default()
        };
        // a near-panoramic crop at every yaw shows the person only when facing it
        let wide = generate_candidates(&scene, 2, 2, &config).unwrap();
        assert!(!wide.is_empty() && wide.len() < 24);
        let all = generate_candidates(&scene, 2, 2, &CandidateConfig::default()).unwrap();
        assert!(all.len() <= 72);
        for c in &all {
            assert!(c
                .keypoints
                .coords()
                .iter()
                .all(|p| p[0] > 0.0 && p[0] < W && p[1] > 0.0 && p[1] < H));
        }
    }

    #[test]
    fn person_behind_is_filtered() {
        // person due north of cell (2, 2)
        let mut scene = Scene::default();
        scene.person.root_m = [0.4, 2.8];
        let config = CandidateConfig {
            n_yaw: 2,
            fov_levels_deg: vec![78.0],
            render_images: false,
        };
        let c = generate_candidates(&scene, 2, 2, &config).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].yaw_rad, 0.0);
    }

    #[test]
    fn empty_yaw_set_is_rejected() {
        let config = CandidateConfig {
            n_yaw: 0,
            ..Default::default()
        };
        assert!(generate_candidates(&Scene::default(), 0, 0, &config).is_err());
    }

    #[test]
    fn widest_candidate_equals_a_grid_view() {
        let scene = Scene::default();
        let all = generate_candidates(&scene, 2, 2, &CandidateConfig::default()).unwrap();
        let c = all.iter().find(|c| c.distance_level == 0).unwrap();
        let k = (c.yaw_rad / scene.yaw_step_rad()).round() as usize;
        assert_eq!(project_keypoints(&scene, RobotPose::new(2, 2, k)).unwrap(), c.keypoints);
    }

    #[test]
    fn rendered_candidates_carry_images() {
        let mut scene = Scene::default();
        scene.camera.width_px = 64;
        scene.camera.height_px = 48;
        scene.panorama_height_px = 90;
        let config = CandidateConfig {
            render_images: true,
            ..Default::default()
        };
        let c = generate_candidates(&scene, 2, 2, &config).unwrap();
        assert!(c.iter().all(|c| c.image.as_ref().is_some_and(|i| i.width() == 64)));
    }

    #[test]
    fn ideal_figure_scores_one() {
        let s = HeuristicScorer::default();
        let top = 0.08 * H;
        let f = figure(W / 3.0, top, 0.6 * H);
        assert!((s.score(&f, W, H) - 1.0).abs() < 1e-12);
        let centered = figure(W / 2.0, top, 0.6 * H);
        assert!((s.score(&centered, W, H) - 0.6).abs() < 1e-12);
        assert_eq!(s.score(&centered, W, H), s.score(&centered.clone(), W, H));
    }

    #[test]
    fn selection_ties_to_first() {
        assert_eq!(argmax_score(&[0.2, 0.9, 0.9]).unwrap(), 1);
        assert_eq!(argmax_score(&[0.5]).unwrap(), 0);
        assert_eq!(argmax_score(&[]), Err(Error::NoCandidates));
    }

    #[test]
    fn trigger_fixtures() {
        let scene = Scene::default();
        let down = project_keypoints(&scene, RobotPose::new(2, 2, 0)).unwrap();
        let mut up_scene = scene;
        up_scene.person.pose = PoseParams::arms_up();
        let up = project_keypoints(&up_scene, RobotPose::new(2, 2, 0)).unwrap();
        assert!(pose_trigger(&down, &down, 1.0).unwrap());
        assert!(!pose_trigger(&down, &up, DEFAULT_TRIGGER_THRESHOLD).unwrap());
        let moved = KeypointVector::new(
            down.coords()
                .iter()
                .map(|p| [2.0 * p[0] + 30.0, 2.0 * p[1] - 7.0])
                .collect(),
        )
        .unwrap();
        assert!(pose_trigger(&moved, &down, 0.999).unwrap());
        assert!(pose_trigger(&kp(&[[1.0, 1.0]; 3]), &kp(&[[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]]), 0.5).is_err());
    }

    #[test]
    fn oracle_capture_succeeds() {
        let scene = Scene::default();
        let mut env = PhotoEnv::new(&scene, EnvConfig::default()).unwrap();
        let mut candidates = generate_candidates(&scene, 2, 2, &CandidateConfig::default()).unwrap();
        score_candidates(&mut candidates, &ScorerSpec::default(), W, H).unwrap();
        let best = select_template(&candidates).unwrap();
        let template = candidates[best].keypoints.clone();
        let out = match_and_capture(
            &mut OracleController::new(),
            &mut env,
            &template,
            Start::Pose(RobotPose::new(0, 0, 5)),
        )
        .unwrap();
        assert!(out.success());
        assert!(out.final_keypoints.distance(&template).unwrap() <= 40.0);
    }

    #[test]
    fn step_cap_reports_failure() {
        struct Spin;
        impl Controller for Spin {
            fn act(&mut self, _: &PhotoEnv, _: &crate::env::Observation) -> Result<usize> {
                Ok(0)
            }
        }
        let scene = Scene::default();
        let mut env = PhotoEnv::new(&scene, EnvConfig::default()).unwrap();
        let template = project_keypoints(&scene, RobotPose::new(2, 2, 0)).unwrap();
        let out = match_and_capture(&mut Spin, &mut env, &template, Start::Pose(RobotPose::new(0, 4, 0))).unwrap();
        assert!(!out.success());
        assert_eq!(out.actions(), 30);
    }

    #[test]
    fn template_text_round_trip() {
        let scene = Scene::default();
        let t = project_keypoints(&scene, RobotPose::new(1, 3, 2)).unwrap();
        let mut buf = Vec::new();
        write_template(&t, 640, 480, &mut buf).unwrap();
        let back = read_template(buf.as_slice()).unwrap();
        assert_eq!((back.keypoints, back.width, back.height), (t, 640, 480));
        assert!(read_template("keypoints 2 640 480\n".as_bytes()).is_err());
        let truncated = String::from_utf8(buf)
            .unwrap()
            .lines()
            .take(5)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(read_template(truncated.as_bytes()).is_err());
    }

    #[test]
    fn candidate_csv_marks_selection() {
        let scene = Scene::default();
        let mut c = generate_candidates(&scene, 2, 2, &CandidateConfig::default()).unwrap();
        score_candidates(&mut c, &ScorerSpec::default(), W, H).unwrap();
        let best = select_template(&c).unwrap();
        let mut buf = Vec::new();
        write_candidates_csv(&c, Some(best), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), c.len() + 1);
        assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 1);
    }

    fn arb_points() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((1.0..639.0f64, 1.0..479.0f64).prop_map(|(x, y)| [x, y]), 14)
    }

    proptest! {
        #[test]
        fn argmax_is_scale_invariant(scores in prop::collection::vec(0.0..1.0f64, 1..50), k in 0.01..100.0f64) {
            let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
            prop_assert_eq!(argmax_score(&scores).unwrap(), argmax_score(&scaled).unwrap());
        }

        #[test]
        fn heuristic_in_unit_interval(pts in arb_points()) {
            let s = HeuristicScorer::default().score(&kp(&pts), W, H);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn trigger_is_similarity_invariant(
            a in arb_points(),
            b in arb_points(),
            scale in 0.1..10.0f64,
            dx in -500.0..500.0f64,
            dy in -500.0..500.0f64,
        ) {
            let (a, b) = (kp(&a), kp(&b));
            let moved = kp(&a.coords().iter().map(|p| [scale * p[0] + dx, scale * p[1] + dy]).collect::<Vec<_>>());
            let s0 = pose_similarity(&a, &b).unwrap();
            let s1 = pose_similarity(&moved, &b).unwrap();
            prop_assert!((s0 - s1).abs() < 1e-9);
            prop_assert!(pose_trigger(&a, &a, 1.0).unwrap());
        }
    }
}
