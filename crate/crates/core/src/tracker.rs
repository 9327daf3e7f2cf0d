//! Person-following decision logic replayed from scripted detection streams.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `(x, y, w, h)` in panorama pixels.
    pub bbox: [f64; 4],
    pub similarity: f64,
}

impl Detection {
    pub fn new(bbox: [f64; 4], similarity: f64) -> Result<Self> {
        let d = Self { bbox, similarity };
        d.validate()?;
        Ok(d)
    }

    /// A detection with a unit placeholder box, for scripted streams that
    /// only carry scores.
    pub fn scored(similarity: f64) -> Result<Self> {
        Self::new([0.0, 0.0, 1.0, 1.0], similarity)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bbox[2] > 0.0 && self.bbox[3] > 0.0) || !self.bbox.iter().all(|v| v.is_finite()) {
            return Err(invalid("detection box must have positive width and height"));
        }
        if !(0.0..=1.0).contains(&self.similarity) {
            return Err(invalid(format!("similarity {} outside [0, 1]", self.similarity)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub drop_threshold: f64,
    pub update_threshold: f64,
    pub operating_zone_m: f64,
    pub obstacle_stop_m: f64,
    pub v_max_mps: f64,
    pub w_max_rps: f64,
    /// m/s per meter beyond the operating zone.
    pub linear_gain: f64,
    /// rad/s per radian of bearing.
    pub angular_gain: f64,
    /// Acceleration limit applied to both components.
    pub a_max_mps2: f64,
    pub dt_s: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            drop_threshold: 0.80,
            update_threshold: 0.95,
            operating_zone_m: 0.5,
            obstacle_stop_m: 0.5,
            v_max_mps: 0.15,
            w_max_rps: 0.5,
            linear_gain: 0.3,
            angular_gain: 1.0,
            a_max_mps2: 0.5,
            dt_s: 0.1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.drop_threshold && self.drop_threshold <= self.update_threshold && self.update_threshold <= 1.0)
        {
            return Err(invalid("thresholds must satisfy 0 < drop <= update <= 1"));
        }
        let limits = [
            self.operating_zone_m,
            self.obstacle_stop_m,
            self.v_max_mps,
            self.w_max_rps,
            self.linear_gain,
            self.angular_gain,
            self.a_max_mps2,
            self.dt_s,
        ];
        if !limits.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(invalid("tracker gains and limits must be positive"));
        }
        Ok(())
    }

    /// Largest per-frame change of either velocity component.
    pub fn max_delta(&self) -> f64 {
        self.a_max_mps2 * self.dt_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tracking,
    /// No acceptable target in view.
    #[default]
    Waiting,
    /// Target held but an obstacle blocks forward motion.
    Stopped,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tracking => "tracking",
            Self::Waiting => "waiting",
            Self::Stopped => "stopped",
        })
    }
}

/// `(linear m/s, angular rad/s)`.
pub type Velocity = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackerState {
    pub mode: Mode,
    pub last_command: Velocity,
    /// Frames since the reference appearance was last refreshed.
    pub reference_age: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFrame {
    pub detections: Vec<Detection>,
    pub target_distance_m: Option<f64>,
    pub target_bearing_rad: Option<f64>,
    pub obstacle_distance_m: f64,
}

impl SimFrame {
    pub fn validate(&self) -> Result<()> {
        for d in &self.detections {
            d.validate()?;
        }
        let dist_ok = |v: f64| v >= 0.0 && !v.is_nan();
        if !dist_ok(self.obstacle_distance_m) || !self.target_distance_m.is_none_or(dist_ok) {
            return Err(invalid("distances must be non-negative"));
        }
        if self.target_bearing_rad.is_some_and(|b| !b.is_finite()) {
            return Err(invalid("bearing must be finite"));
        }
        Ok(())
    }
}

/// Most similar detection if it reaches `drop_threshold`; ties go to the
/// earliest.
pub fn select_target(detections: &[Detection], drop_threshold: f64) -> Option<Detection> {
    let mut best: Option<Detection> = None;
    for d in detections {
        if best.is_none_or(|b| d.similarity > b.similarity) {
            best = Some(*d);
        }
    }
    best.filter(|d| d.similarity >= drop_threshold)
}

pub fn update_reference(state: TrackerState, selected: &Detection, update_threshold: f64) -> TrackerState {
    TrackerState {
        reference_age: if selected.similarity >= update_threshold {
            0
        } else {
            state.reference_age + 1
        },
        ..state
    }
}

/// Target velocities and the mode they put the tracker in.
pub fn command(target: Option<&Detection>, frame: &SimFrame, config: &TrackerConfig) -> (Velocity, Mode) {
    if target.is_none() {
        return ((0.0, 0.0), Mode::Waiting);
    }
    let mut linear = match frame.target_distance_m {
        Some(d) if d > config.operating_zone_m => {
            (config.linear_gain * (d - config.operating_zone_m)).clamp(0.0, config.v_max_mps)
        }
        _ => 0.0,
    };
    let mut mode = Mode::Tracking;
    if frame.obstacle_distance_m <= config.obstacle_stop_m {
        linear = 0.0;
        mode = Mode::Stopped;
    }
    let angular = frame.target_bearing_rad.map_or(0.0, |b| {
        (config.angular_gain * b).clamp(-config.w_max_rps, config.w_max_rps)
    });
    ((linear, angular), mode)
}

/// Moves each component toward the target by at most `a_max * dt`.
pub fn smooth(prev: Velocity, target: Velocity, a_max: f64, dt: f64) -> Velocity {
    let step = a_max * dt;
    let ramp = |p: f64, t: f64| {
        if (t - p).abs() <= step {
            t
        } else {
            p + step.copysign(t - p)
        }
    };
    (ramp(prev.0, target.0), ramp(prev.1, target.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub frame: usize,
    pub state: TrackerState,
    pub selected_similarity: Option<f64>,
    pub target_command: Velocity,
}

/// Replays `frames` from rest: select, refresh the reference, command,
/// smooth.
pub fn run_script(frames: &[SimFrame], config: &TrackerConfig) -> Result<Vec<TraceEntry>> {
    config.validate()?;
    let mut state = TrackerState::default();
    let mut trace = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        frame.validate()?;
        let selected = select_target(&frame.detections, config.drop_threshold);
        state = match &selected {
            Some(d) => update_reference(state, d, config.update_threshold),
            None => TrackerState {
                reference_age: state.reference_age + 1,
                ..state
            },
        };
        let (target, mode) = command(selected.as_ref(), frame, config);
        state.mode = mode;
        state.last_command = smooth(state.last_command, target, config.a_max_mps2, config.dt_s);
        trace.push(TraceEntry {
            frame: i,
            state,
            selected_similarity: selected.map(|d| d.similarity),
            target_command: target,
        });
    }
    Ok(trace)
}

pub const SCENARIO_CSV_HEADER: &str = "similarities,target_distance_m,target_bearing_rad,obstacle_distance_m";
pub const TRACE_CSV_HEADER: &str =
    "frame,mode,selected_similarity,reference_age,target_linear_mps,target_angular_rps,linear_mps,angular_rps";

/// Reads a scenario: one frame per line, similarities separated by `;`,
/// empty fields for "none". Blank lines, `#` comments and the header are
/// skipped.
pub fn read_scenario<R: BufRead>(input: R) -> Result<Vec<SimFrame>> {
    let mut frames = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == SCENARIO_CSV_HEADER {
            continue;
        }
        let bad = |msg: String| Error::Format(format!("scenario line {}: {msg}", n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number '{s}'")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let detections = fields[0]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| Detection::scored(num(s)?).map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let frame = SimFrame {
            detections,
            target_distance_m: opt(fields[1])?,
            target_bearing_rad: opt(fields[2])?,
            obstacle_distance_m: if fields[3].is_empty() {
                f64::INFINITY
            } else {
                num(fields[3])?
            },
        };
        frame.validate().map_err(|e| bad(e.to_string()))?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_scenario<W: Write>(frames: &[SimFrame], mut out: W) -> Result<()> {
    writeln!(out, "{SCENARIO_CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in frames {
        let sims: Vec<String> = f.detections.iter().map(|d| d.similarity.to_string()).collect();
        let obstacle = if f.obstacle_distance_m.is_finite() {
            f.obstacle_distance_m.to_string()
        } else {
            String::new()
        };
        writeln!(
            out,
            "{},{},{},{}",
            sims.join(";"),
            opt(f.target_distance_m),
            opt(f.target_bearing_rad),
            obstacle
        )?;
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for e in trace {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            e.frame,
            e.state.mode,
            e.selected_similarity.map(|s| format!("{s:.4}")).unwrap_or_default(),
            e.state.reference_age,
            e.target_command.0,
            e.target_command.1,
            e.state.last_command.0,
            e.state.last_command.1
        )?;
    }
    Ok(())
}
