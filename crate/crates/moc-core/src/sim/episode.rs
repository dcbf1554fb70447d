//! The full policy-execution loop: observe, detect, build the prompt with
//! accumulated history, ask the oracle, serialize and re-extract the
//! answer, map it through the calibration, step the simulator. The codec
//! runs in-band on purpose: every episode exercises the round trip under
//! load, so codec bugs fail episodes rather than hiding.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::action::{extract, ActionAnswer};
use crate::calib::CalibrationMap;
use crate::frames::{save_fsq, FrameSequence};
use crate::prompt::{build_prompt, DetectedObject, PlacementMode};

use super::{detect, is_success, reset, step, Frame, Renderer, SimError, TaskKind};
use super::oracle::oracle_policy;

/// Unit-square correspondences; the fitted map is the identity, but every
/// action still travels through the calibration path.
const UNIT_CORRESPONDENCES: [((f64, f64), (f64, f64)); 4] = [
    ((0.0, 0.0), (0.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.0)),
    ((0.0, 1.0), (0.0, 1.0)),
    ((1.0, 1.0), (1.0, 1.0)),
];

const NOISE_STREAM_SALT: u64 = 0x6E6F_6973_6521;

/// Everything an episode produced.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub kind: TaskKind,
    pub seed: u64,
    pub noise_level: f64,
    pub success: bool,
    pub steps: usize,
    pub instruction: String,
    /// One frame per state visited: `steps + 1` frames.
    pub frames: FrameSequence,
    pub answers: Vec<ActionAnswer>,
}

impl EpisodeResult {
    /// Writes `<base>.json` (summary plus answer texts) and `<base>.fsq`
    /// (the observation frames).
    pub fn save(&self, base: &Path) -> Result<(PathBuf, PathBuf), SimError> {
        let json_path = base.with_extension("json");
        let fsq_path = base.with_extension("fsq");
        let summary = serde_json::json!({
            "kind": self.kind.name(),
            "seed": self.seed,
            "noise_level": self.noise_level,
            "success": self.success,
            "steps": self.steps,
            "instruction": self.instruction,
            "answers": self.answers.iter().map(|a| a.surface_text.clone()).collect::<Vec<_>>(),
            "frames": fsq_path.file_name().and_then(|s| s.to_str()),
        });
        let mut file = File::create(&json_path).map_err(|source| {
            SimError::Frames(crate::frames::FrameError::Io {
                path: json_path.clone(),
                source,
            })
        })?;
        file.write_all(summary.to_string().as_bytes()).map_err(|source| {
            SimError::Frames(crate::frames::FrameError::Io {
                path: json_path.clone(),
                source,
            })
        })?;
        save_fsq(&self.frames, &fsq_path)?;
        Ok((json_path, fsq_path))
    }
}

/// Runs one episode to success or `max_steps`.
///
/// Deterministic in `(kind, seed, noise_level)`: the detection noise
/// stream is derived from the episode seed.
pub fn run_episode(
    kind: TaskKind,
    seed: u64,
    noise_level: f64,
    max_steps: usize,
) -> Result<EpisodeResult, SimError> {
    if max_steps == 0 {
        return Err(SimError::ZeroMaxSteps);
    }
    if !noise_level.is_finite() || noise_level < 0.0 {
        return Err(SimError::InvalidNoise(noise_level));
    }

    let (mut state, goal) = reset(kind, seed);
    let renderer = Renderer::default();
    let calibration = CalibrationMap::fit(&UNIT_CORRESPONDENCES)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM_SALT);

    let mut frames: Vec<Frame> = vec![renderer.render(&state)];
    let mut answers: Vec<ActionAnswer> = Vec::new();
    let mut success = is_success(&state, &goal);

    while !success && answers.len() < max_steps {
        let detections = detect(&state, noise_level, &mut noise_rng);

        // Memory-style prompt: all frames so far, the goal image, and the
        // detector output for the current observation.
        let observation_slots: Vec<usize> = (0..frames.len()).collect();
        let mut detection_lists: Vec<Vec<DetectedObject>> = vec![Vec::new(); frames.len() + 1];
        detection_lists[frames.len() - 1] = detections.clone();
        build_prompt(
            &goal.instruction,
            &observation_slots,
            &[0],
            &answers,
            &detection_lists,
            PlacementMode::Collection,
        )?;

        let Some(answer) = oracle_policy(&state, &goal, &detections) else {
            break;
        };
        let actions = extract(&answer.surface_text)?;
        if actions.len() != 2 {
            return Err(SimError::MalformedAnswer(actions.len()));
        }
        let pick = calibration.apply_action(&actions[0]);
        let place = calibration.apply_action(&actions[1]);

        state = step(&state, &pick, &place);
        frames.push(renderer.render(&state));
        answers.push(answer);
        success = is_success(&state, &goal);
    }

    let (h, w) = (renderer.h, renderer.w);
    let mut data = Vec::with_capacity(frames.len() * h * w * 3);
    for frame in &frames {
        data.extend_from_slice(&frame.pixels);
    }
    let sequence = FrameSequence::new(frames.len(), h, w, 3, data)?;

    Ok(EpisodeResult {
        kind,
        seed,
        noise_level,
        success,
        steps: answers.len(),
        instruction: goal.instruction,
        frames: sequence,
        answers,
    })
}

/// Sequentially runs `episodes` episodes seeded `base_seed + index`.
pub fn run_batch(
    kind: TaskKind,
    base_seed: u64,
    episodes: usize,
    noise_level: f64,
    max_steps: usize,
) -> Result<Vec<EpisodeResult>, SimError> {
    (0..episodes)
        .map(|i| run_episode(kind, base_seed + i as u64, noise_level, max_steps))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moc::{compress, stats, Norm};
    use crate::frames::to_patches;
    use crate::sim::reset;

    #[test]
    fn zero_max_steps_and_bad_noise_are_rejected() {
        assert!(matches!(
            run_episode(TaskKind::Rearrange, 1, 0.0, 0),
            Err(SimError::ZeroMaxSteps)
        ));
        assert!(matches!(
            run_episode(TaskKind::Rearrange, 1, -0.5, 10),
            Err(SimError::InvalidNoise(_))
        ));
    }

    #[test]
    fn episodes_succeed_at_noise_zero_with_frame_invariant() {
        for kind in TaskKind::ALL {
            for seed in 0..25 {
                let result = run_episode(kind, seed, 0.0, 24).unwrap();
                assert!(result.success, "{kind:?} seed {seed}");
                assert_eq!(result.frames.n(), result.steps + 1);
                assert_eq!(result.answers.len(), result.steps);
                let n = reset(kind, seed).0.objects.len();
                assert!(result.steps <= 2 * n + 2);
                for answer in &result.answers {
                    assert_eq!(answer.actions.len(), 2);
                }
            }
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let a = run_episode(TaskKind::Constraint, 5, 0.5, 24).unwrap();
        let b = run_episode(TaskKind::Constraint, 5, 0.5, 24).unwrap();
        assert_eq!(a.success, b.success);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.frames.data(), b.frames.data());
        assert_eq!(
            a.answers.iter().map(|x| &x.surface_text).collect::<Vec<_>>(),
            b.answers.iter().map(|x| &x.surface_text).collect::<Vec<_>>()
        );
    }

    #[test]
    fn object_count_is_conserved_and_bounded() {
        for seed in 0..10 {
            let (state, goal) = reset(TaskKind::Rearrange, seed);
            let n = state.objects.len();
            let mut s = state;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..10 {
                let detections = detect(&s, 0.3, &mut rng);
                let Some(answer) = oracle_policy(&s, &goal, &detections) else {
                    break;
                };
                let pick = crate::calib::WorkspaceAction {
                    u: answer.actions[0].x,
                    v: answer.actions[0].y,
                    theta: answer.actions[0].theta,
                };
                let place = crate::calib::WorkspaceAction {
                    u: answer.actions[1].x,
                    v: answer.actions[1].y,
                    theta: answer.actions[1].theta,
                };
                s = step(&s, &pick, &place);
                assert_eq!(s.objects.len(), n);
                for o in &s.objects {
                    assert!((0.0..=1.0).contains(&o.pose.x) && (0.0..=1.0).contains(&o.pose.y));
                }
            }
        }
    }

    #[test]
    fn episode_frames_compress_well() {
        let result = run_episode(TaskKind::Rearrange, 2, 0.0, 24).unwrap();
        let patches = to_patches(&result.frames, 16).unwrap();
        let ct = compress(&patches, 1e-5, Norm::Linf).unwrap();
        let s = stats(&ct);
        assert!(
            s.reduction_fraction >= 0.3,
            "reduction {} unexpectedly low",
            s.reduction_fraction
        );
    }

    #[test]
    fn save_writes_json_and_fsq_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let result = run_episode(TaskKind::Reasoning, 4, 0.0, 24).unwrap();
        let (json_path, fsq_path) = result.save(&dir.path().join("ep4")).unwrap();
        let text = std::fs::read_to_string(&json_path).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["kind"], "reasoning");
        assert_eq!(parsed["success"], true);
        assert_eq!(parsed["answers"].as_array().unwrap().len(), result.steps);
        let frames = crate::frames::load_fsq(&fsq_path).unwrap();
        assert_eq!(frames.n(), result.steps + 1);
    }
}
