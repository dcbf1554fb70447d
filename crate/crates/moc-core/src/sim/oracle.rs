//! Scripted expert policy.
//!
//! The oracle sees the goal's target poses plus the (possibly noisy)
//! detections, never the true state: detections are indexed by object id.
//! Each call plans exactly one pick/place pair toward the next unmet
//! target, with three behaviors layered on top of direct placement:
//!
//! - a blocked target (another object sitting on the slot) is cleared by
//!   parking the blocker on a free spot away from every unmet target;
//! - in constraint tasks, a placement whose straight path would cross the
//!   forbidden zone detours via one corner waypoint with both legs clear;
//! - with phases, only the first phase that still has unmet targets is
//!   worked, so completion order respects the instruction.

use crate::action::{Action, ActionAnswer};
use crate::prompt::DetectedObject;

use super::{SimState, TaskGoal, OBJECT_RADIUS};

/// Decision thresholds, deliberately looser than the simulator's own
/// tolerances: the policy only sees noisy detections, and every true
/// distance it must classify is either ~0 (done, blocking) or at least
/// the generator's minimum spacing. Sitting between the two keeps noise-0
/// behavior exact while absorbing detection jitter.
const MATCH_TOL: f64 = 0.12;
const BLOCK_TOL: f64 = 0.09;

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Grid scan for a spot clear of every detected object, every unmet
/// target and, when present, the expanded forbidden zone.
fn find_parking(
    detections: &[DetectedObject],
    goal: &TaskGoal,
    unmet: &[usize],
) -> (f64, f64) {
    let clearance = 2.0 * OBJECT_RADIUS + 0.01;
    for yi in 0..=22 {
        for xi in 0..=22 {
            let p = (0.06 + xi as f64 * 0.04, 0.06 + yi as f64 * 0.04);
            if let Some(zone) = &goal.zone {
                let m = OBJECT_RADIUS + 0.02;
                if p.0 >= zone.x0 - m && p.0 <= zone.x1 + m && p.1 >= zone.y0 - m && p.1 <= zone.y1 + m {
                    continue;
                }
            }
            let clear_of_objects = detections.iter().all(|d| dist((d.x, d.y), p) >= clearance);
            let clear_of_targets = unmet.iter().all(|&id| {
                let t = goal.target_for(id).expect("unmet ids carry targets");
                dist((t.x, t.y), p) >= clearance
            });
            if clear_of_objects && clear_of_targets {
                return p;
            }
        }
    }
    unreachable!("parking grid cannot be exhausted at these object counts")
}

/// Plans the next pick/place pair, or `None` when every target of every
/// phase is met according to the detections.
pub fn oracle_policy(
    state: &SimState,
    goal: &TaskGoal,
    detections: &[DetectedObject],
) -> Option<ActionAnswer> {
    debug_assert_eq!(detections.len(), state.objects.len());
    let det = |id: usize| (detections[id].x, detections[id].y);

    let unmet: Vec<usize> = goal
        .targets
        .iter()
        .filter(|(id, t)| dist(det(*id), (t.x, t.y)) > MATCH_TOL)
        .map(|(id, _)| *id)
        .collect();

    let candidates: Vec<usize> = if goal.phases.is_empty() {
        unmet.clone()
    } else {
        goal.phases
            .iter()
            .map(|phase| {
                unmet
                    .iter()
                    .copied()
                    .filter(|id| phase.contains(id))
                    .collect::<Vec<_>>()
            })
            .find(|ids| !ids.is_empty())
            .unwrap_or_default()
    };
    if candidates.is_empty() {
        return None;
    }

    // A target slot is free when no other detected object sits on it.
    let slot_free = |id: usize| {
        let t = goal.target_for(id).expect("candidate ids carry targets");
        detections
            .iter()
            .enumerate()
            .all(|(oid, d)| oid == id || dist((d.x, d.y), (t.x, t.y)) >= BLOCK_TOL)
    };

    let (mover, mut dest) = match candidates.iter().copied().find(|&id| slot_free(id)) {
        Some(id) => {
            let t = goal.target_for(id).unwrap();
            (id, (t.x, t.y, t.theta))
        }
        None => {
            // Every candidate target is blocked; clear the first one.
            let id0 = candidates[0];
            let t = goal.target_for(id0).unwrap();
            let blocker = detections
                .iter()
                .enumerate()
                .filter(|(oid, d)| *oid != id0 && dist((d.x, d.y), (t.x, t.y)) < BLOCK_TOL)
                .map(|(oid, _)| oid)
                .min()
                .expect("a blocked slot has a blocker");
            let park = find_parking(detections, goal, &unmet);
            (blocker, (park.0, park.1, 0.0))
        }
    };

    if let Some(zone) = &goal.zone {
        let from = det(mover);
        if zone.intersects_segment(from, (dest.0, dest.1)) {
            let waypoint = zone.corner_candidates().into_iter().find(|&w| {
                !zone.intersects_segment(from, w)
                    && !zone.intersects_segment(w, (dest.0, dest.1))
                    && detections
                        .iter()
                        .enumerate()
                        .all(|(oid, d)| oid == mover || dist((d.x, d.y), w) >= 2.0 * OBJECT_RADIUS)
            });
            if let Some(w) = waypoint {
                dest = (w.0, w.1, dest.2);
            }
            // No clear waypoint: fall through to the direct move and accept
            // that the trace check may fail the episode.
        }
    }

    let (px, py) = det(mover);
    let pick = Action::new(px, py, 0.0).expect("detections are clamped to [0,1]");
    let place = Action::new(dest.0, dest.1, dest.2).expect("planned destinations are in bounds");
    Some(ActionAnswer::new(vec![pick, place]).expect("pick/place pair serializes"))
}
