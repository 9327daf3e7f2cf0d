//! Synthetic photography scene: a viewpoint grid, a parametric stick-figure
//! person and pinhole projection of its joints into the robot's camera.
//!
//! Ground coordinates are `(x, y)` with `x` east and `y` north; in 3D they
//! become `(x, up, y)` so that north is the camera's forward axis at yaw 0.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panorama::{ray_to_equirect, Direction, EquirectImage, PerspectiveCamera, Rgb, RgbImage};

/// Number of skeleton keypoints used everywhere in the crate.
pub const KEYPOINT_COUNT: usize = 14;

pub const JOINT_NAMES: [&str; KEYPOINT_COUNT] = [
    "head",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
];

pub mod joint {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
}

/// Limb segments drawn when rasterising the person.
pub const LIMBS: [(usize, usize); 13] = [
    (joint::HEAD, joint::NECK),
    (joint::NECK, joint::R_SHOULDER),
    (joint::R_SHOULDER, joint::R_ELBOW),
    (joint::R_ELBOW, joint::R_WRIST),
    (joint::NECK, joint::L_SHOULDER),
    (joint::L_SHOULDER, joint::L_ELBOW),
    (joint::L_ELBOW, joint::L_WRIST),
    (joint::NECK, joint::R_HIP),
    (joint::R_HIP, joint::R_KNEE),
    (joint::R_KNEE, joint::R_ANKLE),
    (joint::NECK, joint::L_HIP),
    (joint::L_HIP, joint::L_KNEE),
    (joint::L_KNEE, joint::L_ANKLE),
];

// Segment proportions as fractions of standing height.
const NECK_H: f64 = 0.870;
const SHOULDER_H: f64 = 0.818;
const SHOULDER_HALF_W: f64 = 0.129;
const UPPER_ARM: f64 = 0.186;
const FOREARM: f64 = 0.146;
const PELVIS_H: f64 = 0.530;
const HIP_HALF_W: f64 = 0.095;
const THIGH: f64 = 0.245;
const SHANK: f64 = 0.285;

/// Joint angles in radians. All zero is an upright T-pose; arm raise lifts
/// the upper arm above horizontal, elbow bend rotates the forearm further
/// upward, leg spread swings the leg outward from vertical.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseParams {
    pub left_arm_raise: f64,
    pub right_arm_raise: f64,
    pub left_elbow_bend: f64,
    pub right_elbow_bend: f64,
    pub left_leg_spread: f64,
    pub right_leg_spread: f64,
}

impl PoseParams {
    pub fn arms_down() -> Self {
        Self {
            left_arm_raise: -1.35,
            right_arm_raise: -1.35,
            left_elbow_bend: 0.1,
            right_elbow_bend: 0.1,
            left_leg_spread: 0.05,
            right_leg_spread: 0.05,
        }
    }

    pub fn arms_up() -> Self {
        Self {
            left_arm_raise: 1.2,
            right_arm_raise: 1.2,
            left_elbow_bend: 0.2,
            right_elbow_bend: 0.2,
            left_leg_spread: 0.05,
            right_leg_spread: 0.05,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.left_arm_raise,
            self.right_arm_raise,
            self.left_elbow_bend,
            self.right_elbow_bend,
            self.left_leg_spread,
            self.right_leg_spread,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonModel {
    /// Ground position `(x east, y north)` in meters.
    pub root_m: [f64; 2],
    /// Direction the person faces, same convention as robot yaw.
    pub facing_rad: f64,
    pub height_m: f64,
    pub pose: PoseParams,
}

impl Default for PersonModel {
    fn default() -> Self {
        Self {
            root_m: [0.4, 2.8],
            facing_rad: PI,
            height_m: 1.7,
            pose: PoseParams::arms_down(),
        }
    }
}

impl PersonModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.height_m > 0.0 && self.height_m.is_finite()) {
            return Err(invalid("person height must be positive"));
        }
        if !self
            .root_m
            .iter()
            .chain(self.pose.as_array().iter())
            .all(|v| v.is_finite())
            || !self.facing_rad.is_finite()
        {
            return Err(invalid("non-finite person parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scene {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub spacing_m: f64,
    pub n_yaw: usize,
    pub person: PersonModel,
    /// Intrinsics of the robot camera; the yaw field is ignored.
    pub camera: PerspectiveCamera,
    pub camera_height_m: f64,
    /// Height of rendered panoramas (width is twice this).
    pub panorama_height_px: usize,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            grid_nx: 5,
            grid_ny: 5,
            spacing_m: 0.2,
            n_yaw: 24,
            person: PersonModel::default(),
            camera: PerspectiveCamera::default(),
            camera_height_m: 0.6,
            panorama_height_px: 360,
        }
    }
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.grid_nx == 0 || self.grid_ny == 0 {
            return Err(invalid("grid must have at least one cell per axis"));
        }
        if !(self.spacing_m > 0.0 && self.spacing_m.is_finite()) {
            return Err(invalid("grid spacing must be positive"));
        }
        if self.n_yaw == 0 || 360 % self.n_yaw != 0 {
            return Err(invalid(format!("n_yaw {} must divide 360", self.n_yaw)));
        }
        if !self.camera_height_m.is_finite() {
            return Err(invalid("camera height must be finite"));
        }
        if self.panorama_height_px < 4 {
            return Err(invalid("panorama height must be at least 4 px"));
        }
        self.camera.validate()?;
        self.person.validate()
    }

    pub fn state_count(&self) -> usize {
        self.grid_nx * self.grid_ny * self.n_yaw
    }

    pub fn yaw_step_rad(&self) -> f64 {
        TAU / self.n_yaw as f64
    }

    pub fn contains(&self, pose: RobotPose) -> bool {
        pose.ix < self.grid_nx && pose.iy < self.grid_ny && pose.yaw_index < self.n_yaw
    }

    pub fn check_pose(&self, pose: RobotPose) -> Result<()> {
        if self.contains(pose) {
            Ok(())
        } else {
            Err(invalid(format!(
                "pose {pose} outside the {}x{}x{} state grid",
                self.grid_nx, self.grid_ny, self.n_yaw
            )))
        }
    }

    /// All states in flat-index order.
    pub fn poses(&self) -> impl Iterator<Item = RobotPose> + '_ {
        (0..self.state_count()).map(move |i| self.pose_of_index(i))
    }

    /// Flat index `(ix * grid_ny + iy) * n_yaw + yaw_index`.
    pub fn index_of(&self, pose: RobotPose) -> usize {
        (pose.ix * self.grid_ny + pose.iy) * self.n_yaw + pose.yaw_index
    }

    pub fn pose_of_index(&self, index: usize) -> RobotPose {
        let yaw_index = index % self.n_yaw;
        let cell = index / self.n_yaw;
        RobotPose {
            ix: cell / self.grid_ny,
            iy: cell % self.grid_ny,
            yaw_index,
        }
    }

    pub fn camera_at(&self, pose: RobotPose) -> PerspectiveCamera {
        self.camera.with_yaw(pose.yaw_index as f64 * self.yaw_step_rad())
    }

    pub fn eye_at(&self, ix: usize, iy: usize) -> [f64; 3] {
        [
            ix as f64 * self.spacing_m,
            self.camera_height_m,
            iy as f64 * self.spacing_m,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RobotPose {
    pub ix: usize,
    pub iy: usize,
    pub yaw_index: usize,
}

impl RobotPose {
    pub fn new(ix: usize, iy: usize, yaw_index: usize) -> Self {
        Self { ix, iy, yaw_index }
    }
}

impl std::fmt::Display for RobotPose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, yaw {})", self.ix, self.iy, self.yaw_index)
    }
}

impl std::str::FromStr for RobotPose {
    type Err = Error;

    /// Parses `ix,iy,yaw_index`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.split(',').map(str::trim).collect();
        let bad = || invalid(format!("pose {s:?} is not ix,iy,yaw_index"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Ok(Self::new(n[0], n[1], n[2]))
    }
}

/// Ordered 2D pixel keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointVector {
    coords: Vec<[f64; 2]>,
}

impl KeypointVector {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("keypoint coordinates must be finite"));
        }
        Ok(Self { coords })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(invalid("flat keypoint vector must have even length"));
        }
        Self::new(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    /// Euclidean distance over the flattened coordinates.
    pub fn distance(&self, other: &KeypointVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(invalid(format!(
                "keypoint length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

/// Ground position (meters) and heading (radians) of a grid state.
pub fn robot_world_pose(scene: &Scene, pose: RobotPose) -> Result<([f64; 2], f64)> {
    scene.check_pose(pose)?;
    Ok((
        [pose.ix as f64 * scene.spacing_m, pose.iy as f64 * scene.spacing_m],
        pose.yaw_index as f64 * scene.yaw_step_rad(),
    ))
}

/// Forward kinematics of the stick figure, joints in [`JOINT_NAMES`] order,
/// as world-space `(x, up, north)` points.
pub fn skeleton_keypoints_3d(person: &PersonModel) -> [[f64; 3]; KEYPOINT_COUNT] {
    let h = person.height_m;
    let p = &person.pose;
    // (lateral toward the person's right, up) in the frontal plane
    let mut local = [[0.0f64; 2]; KEYPOINT_COUNT];

    let leg_dir = |side: f64, spread: f64| [side * spread.sin(), -spread.cos()];
    let pelvis = (THIGH + SHANK) * h * p.left_leg_spread.cos().max(p.right_leg_spread.cos());
    let body = pelvis - PELVIS_H * h;

    local[joint::HEAD] = [0.0, h + body];
    local[joint::NECK] = [0.0, NECK_H * h + body];
    for (side, raise, bend, idx) in [
        (
            1.0,
            p.right_arm_raise,
            p.right_elbow_bend,
            [joint::R_SHOULDER, joint::R_ELBOW, joint::R_WRIST],
        ),
        (
            -1.0,
            p.left_arm_raise,
            p.left_elbow_bend,
            [joint::L_SHOULDER, joint::L_ELBOW, joint::L_WRIST],
        ),
    ] {
        let shoulder = [side * SHOULDER_HALF_W * h, SHOULDER_H * h + body];
        let elbow = [
            shoulder[0] + side * UPPER_ARM * h * raise.cos(),
            shoulder[1] + UPPER_ARM * h * raise.sin(),
        ];
        let wrist = [
            elbow[0] + side * FOREARM * h * (raise + bend).cos(),
            elbow[1] + FOREARM * h * (raise + bend).sin(),
        ];
        local[idx[0]] = shoulder;
        local[idx[1]] = elbow;
        local[idx[2]] = wrist;
    }
    for (side, spread, idx) in [
        (1.0, p.right_leg_spread, [joint::R_HIP, joint::R_KNEE, joint::R_ANKLE]),
        (-1.0, p.left_leg_spread, [joint::L_HIP, joint::L_KNEE, joint::L_ANKLE]),
    ] {
        let d = leg_dir(side, spread);
        let hip = [side * HIP_HALF_W * h, pelvis];
        let knee = [hip[0] + THIGH * h * d[0], hip[1] + THIGH * h * d[1]];
        let ankle = [knee[0] + SHANK * h * d[0], knee[1] + SHANK * h * d[1]];
        local[idx[0]] = hip;
        local[idx[1]] = knee;
        local[idx[2]] = ankle;
    }

    // the person's right-hand side, a quarter turn clockwise from facing
    let (s, c) = person.facing_rad.sin_cos();
    let right = [c, -s];
    local.map(|[lat, up]| [person.root_m[0] + lat * right[0], up, person.root_m[1] + lat * right[1]])
}

/// Pinhole projection of world points seen from `eye`. Points in front of
/// the camera are clipped componentwise to the frame; points at or behind
/// the image plane are pushed to the frame boundary along their image-plane
/// direction from the principal point.
pub fn project_points(cam: &PerspectiveCamera, eye: [f64; 3], points: &[[f64; 3]]) -> KeypointVector {
    let f = cam.focal_px();
    let (cx, cy) = cam.center();
    let (w, h) = (cam.width_px as f64, cam.height_px as f64);
    let coords = points
        .iter()
        .map(|p| {
            let c = cam.world_to_camera([p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]]);
            if c[2] > 1e-9 {
                let u = cx + f * c[0] / c[2];
                let v = cy - f * c[1] / c[2];
                [u.clamp(0.0, w), v.clamp(0.0, h)]
            } else {
                let (mut dx, mut dy) = (c[0], -c[1]);
                if dx.abs() < 1e-12 && dy.abs() < 1e-12 {
                    (dx, dy) = (1.0, 0.0);
                }
                let tx = if dx.abs() > 0.0 { cx / dx.abs() } else { f64::INFINITY };
                let ty = if dy.abs() > 0.0 { cy / dy.abs() } else { f64::INFINITY };
                if tx <= ty {
                    let u = if dx > 0.0 { w } else { 0.0 };
                    [u, (cy + tx * dy).clamp(0.0, h)]
                } else {
                    let v = if dy > 0.0 { h } else { 0.0 };
                    [(cx + ty * dx).clamp(0.0, w), v]
                }
            }
        })
        .collect();
    KeypointVector { coords }
}

/// The person's keypoints in the robot camera at `pose`.
pub fn project_keypoints(scene: &Scene, pose: RobotPose) -> Result<KeypointVector> {
    let (pos, _) = robot_world_pose(scene, pose)?;
    let root = scene.person.root_m;
    if (root[0] - pos[0]).hypot(root[1] - pos[1]) < 0.01 {
        return Err(Error::DegenerateGeometry(format!(
            "person stands on the camera at {pose}"
        )));
    }
    let points = skeleton_keypoints_3d(&scene.person);
    Ok(project_points(
        &scene.camera_at(pose),
        scene.eye_at(pose.ix, pose.iy),
        &points,
    ))
}

const PERSON_RGB: Rgb = [200, 30, 30];
const STRIPE_RGB: Rgb = [40, 40, 40];

/// Deterministic panorama seen from a grid cell: sky/floor gradient, dark
/// marker stripes every 30° of longitude and the person's limbs.
pub fn render_synthetic_equirect(scene: &Scene, ix: usize, iy: usize) -> Result<EquirectImage> {
    scene.check_pose(RobotPose::new(ix, iy, 0))?;
    let h = scene.panorama_height_px;
    let w = 2 * h;
    let mut img = RgbImage::new(w, h, [0; 3]);
    for row in 0..h {
        let lat = PI / 2.0 - (row as f64 + 0.5) / h as f64 * PI;
        let t = (lat.abs() / (PI / 2.0)).min(1.0);
        let lerp =
            |a: Rgb, b: Rgb| -> Rgb { [0, 1, 2].map(|i| (a[i] as f64 * (1.0 - t) + b[i] as f64 * t).round() as u8) };
        let rgb = if lat >= 0.0 {
            lerp([170, 200, 235], [70, 110, 190])
        } else {
            lerp([120, 100, 80], [60, 50, 40])
        };
        for col in 0..w {
            img.set(col, row, rgb);
        }
    }
    for k in 0..12 {
        let lon = -PI + k as f64 * PI / 6.0;
        let col = (((lon + PI) / TAU * w as f64).round() as usize) % w;
        for row in 0..h {
            img.set(col, row, STRIPE_RGB);
        }
    }

    let eye = scene.eye_at(ix, iy);
    let joints = skeleton_keypoints_3d(&scene.person);
    const SAMPLES: usize = 400;
    for &(a, b) in LIMBS.iter() {
        let (pa, pb) = (joints[a], joints[b]);
        for s in 0..=SAMPLES {
            let t = s as f64 / SAMPLES as f64;
            let p = [0, 1, 2].map(|i| pa[i] + t * (pb[i] - pa[i]) - eye[i]);
            let Ok(dir) = Direction::normalized(p[0], p[1], p[2]) else {
                continue;
            };
            let (x, y) = ray_to_equirect(&dir, w, h);
            let (col, row) = (x.floor() as i64, y.floor() as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let r = (row + dr).clamp(0, h as i64 - 1) as usize;
                    let c = (col + dc).rem_euclid(w as i64) as usize;
                    img.set(c, r, PERSON_RGB);
                }
            }
        }
    }
    EquirectImage::new(img)
}

pub fn is_person_pixel(rgb: Rgb) -> bool {
    rgb == PERSON_RGB
}
