//! Deterministic 2D tabletop environment: rearrange / reasoning /
//! constraint task families, a scripted oracle policy, top-down frame
//! rendering and the full observe -> prompt -> answer -> extract ->
//! calibrate -> step episode loop.
//!
//! There is no physics: a step teleports the grasped object to the place
//! pose. An object's center is modeled as traveling the straight segment
//! between the two poses, which is what the constraint family's forbidden
//! zone checks against.

mod episode;
mod oracle;
mod render;
mod tasks;

pub use episode::{run_batch, run_episode, EpisodeResult};
pub use oracle::oracle_policy;
pub use render::{Frame, Renderer};
pub use tasks::reset;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionError;
use crate::calib::{CalibError, WorkspaceAction};
use crate::frames::FrameError;
use crate::prompt::{DetectedObject, PromptError};

/// Shared footprint radius of every object, in workspace units.
pub const OBJECT_RADIUS: f64 = 0.07;
/// Position tolerance for goal matching.
pub const POS_TOL: f64 = 0.02;
/// Angle tolerance for goal matching, degrees.
pub const ANGLE_TOL: f64 = 5.0;
/// Overlap slack: two objects may approach to `2R - OVERLAP_TOL`.
pub const OVERLAP_TOL: f64 = 1e-6;

/// Color palette shared by the renderer and the detector labels.
pub const PALETTE: [(&str, [f32; 3]); 6] = [
    ("red", [0.80, 0.15, 0.15]),
    ("green", [0.15, 0.65, 0.20]),
    ("blue", [0.15, 0.25, 0.80]),
    ("yellow", [0.85, 0.80, 0.15]),
    ("magenta", [0.75, 0.20, 0.75]),
    ("cyan", [0.15, 0.70, 0.75]),
];

pub const BACKGROUND: [f32; 3] = [0.92, 0.92, 0.92];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("max_steps must be >= 1")]
    ZeroMaxSteps,
    #[error("noise level must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("policy answer carried {0} actions, expected a pick/place pair")]
    MalformedAnswer(usize),
    #[error(transparent)]
    Codec(#[from] ActionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error(transparent)]
    Calib(#[from] CalibError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Block,
    Disc,
    Star,
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Block => "block",
            Shape::Disc => "disc",
            Shape::Star => "star",
        }
    }
}

/// Planar pose: center in `[0,1]^2` workspace units, rotation in degrees
/// within `[-180, 180)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn distance(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(360.0);
    if t >= 180.0 {
        t -= 360.0;
    }
    t
}

/// Absolute angular separation in degrees, at most 180.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

pub fn pose_matches(actual: &Pose, target: &Pose) -> bool {
    actual.distance(target) <= POS_TOL && angle_distance(actual.theta, target.theta) <= ANGLE_TOL
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: usize,
    pub shape: Shape,
    pub color: usize,
    pub pose: Pose,
}

/// One executed move: the grasped object's center travels the straight
/// segment `from -> to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveEvent {
    pub step: usize,
    pub object_id: usize,
    pub from: (f64, f64),
    pub to: (f64, f64),
}

/// Full environment state plus the move log that reasoning and constraint
/// success checks replay.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub objects: Vec<SimObject>,
    pub step_count: usize,
    pub move_log: Vec<MoveEvent>,
}

impl SimState {
    pub fn object(&self, id: usize) -> &SimObject {
        &self.objects[id]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Rearrange,
    Reasoning,
    Constraint,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Rearrange, TaskKind::Reasoning, TaskKind::Constraint];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Rearrange => "rearrange",
            TaskKind::Reasoning => "reasoning",
            TaskKind::Constraint => "constraint",
        }
    }
}

/// Axis-aligned forbidden zone for constraint tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Zone {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x0 && p.0 <= self.x1 && p.1 >= self.y0 && p.1 <= self.y1
    }

    /// Liang-Barsky: does the closed segment `a -> b` touch the zone?
    pub fn intersects_segment(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [
            (-dx, a.0 - self.x0),
            (dx, self.x1 - a.0),
            (-dy, a.1 - self.y0),
            (dy, self.y1 - a.1),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let t = q / p;
                if p < 0.0 {
                    t0 = t0.max(t);
                } else {
                    t1 = t1.min(t);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Goal condition: target poses, phase ordering for reasoning tasks, an
/// optional forbidden zone, instruction text and a rendered goal scene.
#[derive(Clone, Debug)]
pub struct TaskGoal {
    pub kind: TaskKind,
    pub targets: Vec<(usize, Pose)>,
    pub phases: Vec<Vec<usize>>,
    pub zone: Option<Zone>,
    pub instruction: String,
    pub goal_frame: Frame,
}

impl TaskGoal {
    pub fn target_for(&self, id: usize) -> Option<&Pose> {
        self.targets.iter().find(|(tid, _)| *tid == id).map(|(_, p)| p)
    }
}

/// Noisy object detection: true centers plus per-axis uniform noise in
/// `[-noise_level/2, +noise_level/2]`, clamped to bounds. The rng is
/// advanced the same way at every level, and draws are scaled by the
/// level, so noise 0 is exact.
pub fn detect<R: Rng>(state: &SimState, noise_level: f64, rng: &mut R) -> Vec<DetectedObject> {
    state
        .objects
        .iter()
        .map(|o| {
            let dx = rng.random_range(-0.5..=0.5) * noise_level;
            let dy = rng.random_range(-0.5..=0.5) * noise_level;
            DetectedObject {
                name: format!("{} {}", PALETTE[o.color].0, o.shape.name()),
                x: (o.pose.x + dx).clamp(0.0, 1.0),
                y: (o.pose.y + dy).clamp(0.0, 1.0),
                color: Some(PALETTE[o.color].0.to_string()),
                shape: Some(o.shape.name().to_string()),
            }
        })
        .collect()
}

/// Renders the current state with the default renderer.
pub fn observe(state: &SimState) -> Frame {
    Renderer::default().render(state)
}

/// Executes one pick/place pair.
///
/// The object whose footprint contains the pick point moves (nearest
/// center wins, then lowest id). A miss, an out-of-bounds destination or a
/// destination overlapping another object leaves every pose unchanged;
/// the step counter advances regardless.
pub fn step(state: &SimState, pick: &WorkspaceAction, place: &WorkspaceAction) -> SimState {
    let mut next = state.clone();
    next.step_count += 1;

    let mut best: Option<(f64, usize)> = None;
    for o in &state.objects {
        let d = ((o.pose.x - pick.u).powi(2) + (o.pose.y - pick.v).powi(2)).sqrt();
        if d <= OBJECT_RADIUS {
            let candidate = (d, o.id);
            if best.is_none_or(|b| candidate < b) {
                best = Some(candidate);
            }
        }
    }
    let Some((_, id)) = best else {
        return next;
    };

    let dest = (place.u, place.v);
    if !(0.0..=1.0).contains(&dest.0) || !(0.0..=1.0).contains(&dest.1) {
        return next;
    }
    let blocked = state.objects.iter().any(|o| {
        o.id != id
            && ((o.pose.x - dest.0).powi(2) + (o.pose.y - dest.1).powi(2)).sqrt()
                < 2.0 * OBJECT_RADIUS - OVERLAP_TOL
    });
    if blocked {
        return next;
    }

    let from = (state.objects[id].pose.x, state.objects[id].pose.y);
    next.objects[id].pose = Pose {
        x: dest.0,
        y: dest.1,
        theta: normalize_angle(place.theta),
    };
    next.move_log.push(MoveEvent {
        step: next.step_count,
        object_id: id,
        from,
        to: dest,
    });
    next
}

fn phase_order_respected(log: &[MoveEvent], phases: &[Vec<usize>]) -> bool {
    let completion = |id: usize| {
        log.iter()
            .filter(|e| e.object_id == id)
            .map(|e| e.step)
            .max()
            .unwrap_or(0)
    };
    for pair in phases.windows(2) {
        let earlier_max = pair[0].iter().map(|&id| completion(id)).max().unwrap_or(0);
        let later_min = pair[1].iter().map(|&id| completion(id)).min().unwrap_or(0);
        if earlier_max >= later_min {
            return false;
        }
    }
    true
}

fn zone_respected(log: &[MoveEvent], zone: &Zone) -> bool {
    log.iter()
        .all(|e| !zone.intersects_segment(e.from, e.to))
}

/// Goal predicate. Every target pose must match within tolerance; the
/// reasoning family additionally requires the logged completion order to
/// respect its phases, and the constraint family requires that no moved
/// center's straight path ever touched the forbidden zone.
pub fn is_success(state: &SimState, goal: &TaskGoal) -> bool {
    let matched = goal
        .targets
        .iter()
        .all(|(id, target)| pose_matches(&state.objects[*id].pose, target));
    if !matched {
        return false;
    }
    match goal.kind {
        TaskKind::Rearrange => true,
        TaskKind::Reasoning => phase_order_respected(&state.move_log, &goal.phases),
        TaskKind::Constraint => goal
            .zone
            .as_ref()
            .is_none_or(|z| zone_respected(&state.move_log, z)),
    }
}
