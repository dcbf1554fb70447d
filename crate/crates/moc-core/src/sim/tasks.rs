//! Seeded instance generators for the three task families.
//!
//! Layout guarantees the oracle relies on at noise 0:
//! - rearrange: targets are a non-identity permutation of the start poses,
//!   so cycles may need one parking move per cycle;
//! - reasoning: two color phases with fresh targets that overlap neither
//!   the start poses nor each other;
//! - constraint: starts left of the zone, targets right of it with centers
//!   outside the zone's y-band, corner waypoint spots kept clear, and the
//!   first object's straight start-target segment always crosses the zone.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    Pose, Renderer, Shape, SimObject, SimState, TaskGoal, TaskKind, Zone, OBJECT_RADIUS, PALETTE,
};

pub(crate) const WALL_MARGIN: f64 = 0.08;
pub(crate) const MIN_CENTER_DIST: f64 = 2.0 * OBJECT_RADIUS + 0.01;

const SHAPES: [Shape; 3] = [Shape::Block, Shape::Disc, Shape::Star];

impl Zone {
    /// Waypoint spots just outside the zone corners, left corners first,
    /// nearer ring first. Clamped into the workspace.
    pub(crate) fn corner_candidates(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(8);
        for m in [0.10, 0.16] {
            for (x, y) in [
                (self.x0 - m, self.y0 - m),
                (self.x0 - m, self.y1 + m),
                (self.x1 + m, self.y0 - m),
                (self.x1 + m, self.y1 + m),
            ] {
                out.push((x.clamp(0.05, 0.95), y.clamp(0.05, 0.95)));
            }
        }
        out
    }
}

fn int_angle(rng: &mut ChaCha8Rng) -> f64 {
    f64::from(rng.random_range(-180..180i32))
}

fn far_enough(p: (f64, f64), taken: &[(f64, f64)], min_dist: f64) -> bool {
    taken
        .iter()
        .all(|t| ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt() >= min_dist)
}

/// Samples a point with x in `x_range`, y in one of `y_ranges`, at least
/// `MIN_CENTER_DIST` from every point in `avoid`. Rejection sampling for
/// variety first, then a deterministic fine-grid sweep when the remaining
/// free space is a sliver.
fn sample_point(
    rng: &mut ChaCha8Rng,
    x_range: (f64, f64),
    y_ranges: &[(f64, f64)],
    avoid: &[(f64, f64)],
) -> (f64, f64) {
    for _ in 0..2_000 {
        let x = rng.random_range(x_range.0..=x_range.1);
        let band = y_ranges[rng.random_range(0..y_ranges.len())];
        let y = rng.random_range(band.0..=band.1);
        if far_enough((x, y), avoid, MIN_CENTER_DIST) {
            return (x, y);
        }
    }
    let steps = |lo: f64, hi: f64| {
        let count = ((hi - lo) / 0.01).floor() as usize;
        (0..=count).map(move |i| lo + i as f64 * 0.01)
    };
    for band in y_ranges {
        for y in steps(band.0, band.1) {
            for x in steps(x_range.0, x_range.1) {
                if far_enough((x, y), avoid, MIN_CENTER_DIST) {
                    return (x, y);
                }
            }
        }
    }
    panic!("no admissible point left in the sampling region")
}

fn make_objects(rng: &mut ChaCha8Rng, centers: &[(f64, f64)], colors: &[usize]) -> Vec<SimObject> {
    centers
        .iter()
        .zip(colors)
        .enumerate()
        .map(|(id, (&(x, y), &color))| SimObject {
            id,
            shape: SHAPES[rng.random_range(0..SHAPES.len())],
            color,
            pose: Pose {
                x,
                y,
                theta: int_angle(rng),
            },
        })
        .collect()
}

fn goal_frame_for(objects: &[SimObject], targets: &[(usize, Pose)]) -> super::Frame {
    let mut staged = objects.to_vec();
    for (id, pose) in targets {
        staged[*id].pose = *pose;
    }
    Renderer::default().render(&SimState {
        objects: staged,
        step_count: 0,
        move_log: Vec::new(),
    })
}

fn gen_rearrange(rng: &mut ChaCha8Rng) -> (Vec<SimObject>, TaskGoal) {
    let n = rng.random_range(3..=6);
    let full = (WALL_MARGIN, 1.0 - WALL_MARGIN);
    let mut centers: Vec<(f64, f64)> = Vec::new();
    for _ in 0..n {
        let p = sample_point(rng, full, &[full], &centers);
        centers.push(p);
    }
    let colors: Vec<usize> = (0..n).map(|i| i % PALETTE.len()).collect();
    let objects = make_objects(rng, &centers, &colors);

    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &j)| i != j) {
            break;
        }
    }
    let targets: Vec<(usize, Pose)> = (0..n).map(|i| (i, objects[perm[i]].pose)).collect();

    let goal_frame = goal_frame_for(&objects, &targets);
    let goal = TaskGoal {
        kind: TaskKind::Rearrange,
        targets,
        phases: Vec::new(),
        zone: None,
        instruction:
            "Rearrange the objects so that every object reaches its target pose in the goal image."
                .to_string(),
        goal_frame,
    };
    (objects, goal)
}

fn gen_reasoning(rng: &mut ChaCha8Rng) -> (Vec<SimObject>, TaskGoal) {
    let n = rng.random_range(3..=6);
    let c1 = rng.random_range(0..PALETTE.len());
    let c2 = (c1 + 1 + rng.random_range(0..PALETTE.len() - 1)) % PALETTE.len();

    // Random two-color assignment with both colors present.
    let mut colors: Vec<usize>;
    loop {
        colors = (0..n)
            .map(|_| if rng.random_range(0..2) == 0 { c1 } else { c2 })
            .collect();
        if colors.contains(&c1) && colors.contains(&c2) {
            break;
        }
    }

    let full = (WALL_MARGIN, 1.0 - WALL_MARGIN);
    let mut starts: Vec<(f64, f64)> = Vec::new();
    for _ in 0..n {
        let p = sample_point(rng, full, &[full], &starts);
        starts.push(p);
    }
    let objects = make_objects(rng, &starts, &colors);

    // Fresh targets that clash with neither starts nor each other, so an
    // unmoved object never blocks a placement.
    let mut taken = starts.clone();
    let mut targets = Vec::new();
    for id in 0..n {
        let p = sample_point(rng, full, &[full], &taken);
        taken.push(p);
        targets.push((
            id,
            Pose {
                x: p.0,
                y: p.1,
                theta: int_angle(rng),
            },
        ));
    }

    let phase1: Vec<usize> = (0..n).filter(|&i| colors[i] == c1).collect();
    let phase2: Vec<usize> = (0..n).filter(|&i| colors[i] == c2).collect();
    let instruction = format!(
        "First move every {} object to its target position, then move every {} object to its target position.",
        PALETTE[c1].0, PALETTE[c2].0
    );
    let goal_frame = goal_frame_for(&objects, &targets);
    let goal = TaskGoal {
        kind: TaskKind::Reasoning,
        targets,
        phases: vec![phase1, phase2],
        zone: None,
        instruction,
        goal_frame,
    };
    (objects, goal)
}

fn gen_constraint(rng: &mut ChaCha8Rng) -> (Vec<SimObject>, TaskGoal) {
    let zone = Zone {
        x0: rng.random_range(0.38..=0.44),
        y0: rng.random_range(0.24..=0.28),
        x1: rng.random_range(0.56..=0.62),
        y1: rng.random_range(0.72..=0.76),
    };
    let corners = zone.corner_candidates();
    let n = rng.random_range(3..=4);

    let left_x = (WALL_MARGIN, zone.x0 - WALL_MARGIN);
    let right_x = (zone.x1 + WALL_MARGIN, 1.0 - WALL_MARGIN);
    let below = (WALL_MARGIN, zone.y0 - WALL_MARGIN);
    let above = (zone.y1 + WALL_MARGIN, 1.0 - WALL_MARGIN);

    // Object 0 is pinned near the zone, mid-band, with a below-band target:
    // its straight start-target segment provably crosses the zone, so a
    // detour is required by construction.
    let mid = (zone.y0 + zone.y1) / 2.0;
    let start0 = (
        zone.x0 - 0.09 + rng.random_range(-0.01..=0.01),
        mid + rng.random_range(-0.03..=0.03),
    );
    let target0 = (
        zone.x1 + 0.09 + rng.random_range(-0.01..=0.03),
        zone.y0 - 0.09 + rng.random_range(-0.03..=0.01),
    );
    debug_assert!(zone.intersects_segment(start0, target0));

    // Reserve the near-ring corner spots so the noise-0 waypoint is always
    // free; the outer ring only backs up noisy runs and needs no reserve.
    let mut starts = vec![start0];
    let mut start_avoid: Vec<(f64, f64)> = corners[..4].iter().copied().chain([start0]).collect();
    for _ in 1..n {
        let p = sample_point(rng, left_x, &[(WALL_MARGIN, 1.0 - WALL_MARGIN)], &start_avoid);
        start_avoid.push(p);
        starts.push(p);
    }

    // Targets sit far right of every left-side corner waypoint, so they
    // need no corner reservation. The two strips are thin relative to the
    // spacing, so each extra target draws from its own sub-slot: the strip
    // gap and the slot gaps guarantee the pairwise distance by themselves.
    let mut target_points = vec![target0];
    let mut target_avoid = vec![target0];
    let (xr_lo, xr_hi) = right_x;
    let slots = [
        ((xr_lo, (xr_lo + xr_hi) / 2.0 - 0.08), above),
        (((xr_lo + xr_hi) / 2.0 + 0.08, xr_hi), above),
        ((xr_lo + 0.20, xr_hi), below),
    ];
    for slot in slots.iter().take(n - 1) {
        let p = sample_point(rng, slot.0, &[slot.1], &target_avoid);
        target_avoid.push(p);
        target_points.push(p);
    }

    let colors: Vec<usize> = (0..n).map(|i| i % PALETTE.len()).collect();
    let objects = make_objects(rng, &starts, &colors);
    let targets: Vec<(usize, Pose)> = target_points
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| {
            (
                id,
                Pose {
                    x,
                    y,
                    theta: int_angle(rng),
                },
            )
        })
        .collect();

    let goal_frame = goal_frame_for(&objects, &targets);
    let goal = TaskGoal {
        kind: TaskKind::Constraint,
        targets,
        phases: Vec::new(),
        zone: Some(zone),
        instruction:
            "Move every object to its target pose without letting any object pass through the forbidden zone."
                .to_string(),
        goal_frame,
    };
    (objects, goal)
}

/// Deterministic task instance for `(kind, seed)`: 3-6 objects whose goal
/// the scripted oracle can always reach at noise 0.
pub fn reset(kind: TaskKind, seed: u64) -> (SimState, TaskGoal) {
    let stream = seed ^ (kind as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let (objects, goal) = match kind {
        TaskKind::Rearrange => gen_rearrange(&mut rng),
        TaskKind::Reasoning => gen_reasoning(&mut rng),
        TaskKind::Constraint => gen_constraint(&mut rng),
    };
    (
        SimState {
            objects,
            step_count: 0,
            move_log: Vec::new(),
        },
        goal,
    )
}
