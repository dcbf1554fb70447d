//! Conversation-style prompt records with image slots, detection
//! descriptions and an explicit action history clause.
//!
//! Records carry a system turn and a user turn. Image placeholders are the
//! literal `<image>`; in Collection mode every placeholder is gathered at
//! the very start of the user turn, in Interleaved mode each placeholder
//! sits next to the description of its image. Past actions are appended as
//! `You have finished: ` followed by the serialized actions in execution
//! order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{format_action, ActionAnswer};

/// Literal placeholder standing in for one image in a turn.
pub const IMAGE_PLACEHOLDER: &str = "<image>";
/// Opening of the action-history clause.
pub const HISTORY_PREFIX: &str = "You have finished: ";

const SYSTEM_TEXT: &str =
    "You are a robot manipulation assistant. Answer with end-effector actions in the canonical grammar.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("at least one observation slot is required")]
    NoObservations,
    #[error("got {got} detection lists for {slots} image slots")]
    DetectionCountMismatch { slots: usize, got: usize },
    #[error("{got} per-slot token counts for {slots} slots")]
    SlotCountMismatch { slots: usize, got: usize },
    #[error("record has {placeholders} placeholders for {slots} slots")]
    UnresolvedPlaceholder { placeholders: usize, slots: usize },
    #[error("record has no user turn")]
    NoUserTurn,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// A detector hit: label plus normalized image center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub name: String,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub color: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shape: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Obs,
    Goal,
}

/// Reference to one image: observation frames index into the episode
/// sequence, goal frames into the goal list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSlot {
    pub kind: SlotKind,
    pub frame: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementMode {
    Collection,
    Interleaved,
}

/// One dataset record: instruction, turns, slots and placement mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub instruction: String,
    pub turns: Vec<Turn>,
    #[serde(rename = "slots")]
    pub image_slots: Vec<ImageSlot>,
    #[serde(rename = "mode")]
    pub placement_mode: PlacementMode,
}

impl ConversationRecord {
    pub fn user_turn(&self) -> Result<&Turn, PromptError> {
        self.turns
            .iter()
            .find(|t| t.role == Role::User)
            .ok_or(PromptError::NoUserTurn)
    }

    /// Appends an assistant turn, consuming the record.
    pub fn with_assistant_turn(mut self, content: &str) -> Self {
        self.turns.push(Turn {
            role: Role::Assistant,
            content: content.to_string(),
        });
        self
    }

    fn placeholder_count(&self) -> usize {
        self.turns
            .iter()
            .map(|t| t.content.matches(IMAGE_PLACEHOLDER).count())
            .sum()
    }

    /// Every placeholder resolves to exactly one slot.
    pub fn validate(&self) -> Result<(), PromptError> {
        let placeholders = self.placeholder_count();
        if placeholders != self.image_slots.len() {
            return Err(PromptError::UnresolvedPlaceholder {
                placeholders,
                slots: self.image_slots.len(),
            });
        }
        self.user_turn().map(|_| ())
    }

    /// Collection-mode position predicate: the user turn must open with
    /// every placeholder, back to back, before any other character.
    pub fn satisfies_collection_invariant(&self) -> bool {
        let Ok(user) = self.user_turn() else {
            return false;
        };
        let lead = IMAGE_PLACEHOLDER.repeat(self.image_slots.len());
        user.content.starts_with(&lead)
            && !user.content[lead.len()..].contains(IMAGE_PLACEHOLDER)
    }
}

/// One deterministic sentence per object, input order preserved:
/// `<name> at (x.xxx, y.yyy).`
pub fn describe_detections(objs: &[DetectedObject]) -> String {
    objs.iter()
        .map(|o| format!("{} at ({:.3}, {:.3}).", o.name, o.x, o.y))
        .collect::<Vec<_>>()
        .join(" ")
}

fn history_clause(history: &[ActionAnswer]) -> Option<String> {
    if history.is_empty() {
        return None;
    }
    let joined = history
        .iter()
        .flat_map(|answer| answer.actions.iter())
        .map(format_action)
        .collect::<Vec<_>>()
        .join("; ");
    Some(format!("{HISTORY_PREFIX}{joined}"))
}

fn slot_label(kind: SlotKind, index: usize) -> String {
    match kind {
        SlotKind::Obs => format!("Observation {}", index + 1),
        SlotKind::Goal => format!("Goal {}", index + 1),
    }
}

/// Builds a prompt record.
///
/// `detections` carries one list per slot, observations first, then goal
/// frames; pass an empty list for an image without detector output (the
/// usual case for goal frames).
pub fn build_prompt(
    instruction: &str,
    observations: &[usize],
    goals: &[usize],
    history: &[ActionAnswer],
    detections: &[Vec<DetectedObject>],
    mode: PlacementMode,
) -> Result<ConversationRecord, PromptError> {
    if observations.is_empty() {
        return Err(PromptError::NoObservations);
    }
    let slots: Vec<ImageSlot> = observations
        .iter()
        .map(|&frame| ImageSlot {
            kind: SlotKind::Obs,
            frame,
        })
        .chain(goals.iter().map(|&frame| ImageSlot {
            kind: SlotKind::Goal,
            frame,
        }))
        .collect();
    if detections.len() != slots.len() {
        return Err(PromptError::DetectionCountMismatch {
            slots: slots.len(),
            got: detections.len(),
        });
    }

    let kind_index = |i: usize| {
        let kind = slots[i].kind;
        let index = slots[..i].iter().filter(|s| s.kind == kind).count();
        (kind, index)
    };

    let mut user = String::new();
    match mode {
        PlacementMode::Collection => {
            for _ in &slots {
                user.push_str(IMAGE_PLACEHOLDER);
            }
            user.push('\n');
            user.push_str(instruction);
            for (i, det) in detections.iter().enumerate() {
                if !det.is_empty() {
                    let (kind, index) = kind_index(i);
                    user.push('\n');
                    user.push_str(&slot_label(kind, index));
                    user.push_str(" shows: ");
                    user.push_str(&describe_detections(det));
                }
            }
        }
        PlacementMode::Interleaved => {
            user.push_str(instruction);
            for (i, det) in detections.iter().enumerate() {
                let (kind, index) = kind_index(i);
                user.push('\n');
                user.push_str(&slot_label(kind, index));
                user.push_str(": ");
                user.push_str(IMAGE_PLACEHOLDER);
                if !det.is_empty() {
                    user.push(' ');
                    user.push_str(&describe_detections(det));
                }
            }
        }
    }
    if let Some(clause) = history_clause(history) {
        user.push('\n');
        user.push_str(&clause);
    }

    let record = ConversationRecord {
        instruction: instruction.to_string(),
        turns: vec![
            Turn {
                role: Role::System,
                content: SYSTEM_TEXT.to_string(),
            },
            Turn {
                role: Role::User,
                content: user,
            },
        ],
        image_slots: slots,
        placement_mode: mode,
    };
    record.validate()?;
    Ok(record)
}

/// A linearized turn: literal text runs and image runs with token counts.
#[derive(Clone, Debug, PartialEq)]
pub enum LayoutRun {
    Text(String),
    Image { slot: usize, tokens: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenLayout {
    pub runs: Vec<LayoutRun>,
}

impl TokenLayout {
    pub fn image_token_total(&self) -> usize {
        self.runs
            .iter()
            .map(|r| match r {
                LayoutRun::Image { tokens, .. } => *tokens,
                LayoutRun::Text(_) => 0,
            })
            .sum()
    }

    /// Image runs in order, as `(slot, tokens)` pairs.
    pub fn image_runs(&self) -> Vec<(usize, usize)> {
        self.runs
            .iter()
            .filter_map(|r| match r {
                LayoutRun::Image { slot, tokens } => Some((*slot, *tokens)),
                LayoutRun::Text(_) => None,
            })
            .collect()
    }

    /// True when every image run precedes every text run.
    pub fn images_first(&self) -> bool {
        let first_text = self
            .runs
            .iter()
            .position(|r| matches!(r, LayoutRun::Text(_)));
        let last_image = self
            .runs
            .iter()
            .rposition(|r| matches!(r, LayoutRun::Image { .. }));
        match (first_text, last_image) {
            (Some(t), Some(i)) => i < t,
            _ => true,
        }
    }
}

/// Deterministic linearization of the user turn, with `per_slot_tokens[i]`
/// image tokens at the i-th placeholder.
pub fn token_layout(
    rec: &ConversationRecord,
    per_slot_tokens: &[usize],
) -> Result<TokenLayout, PromptError> {
    if per_slot_tokens.len() != rec.image_slots.len() {
        return Err(PromptError::SlotCountMismatch {
            slots: rec.image_slots.len(),
            got: per_slot_tokens.len(),
        });
    }
    let user = rec.user_turn()?;
    let pieces: Vec<&str> = user.content.split(IMAGE_PLACEHOLDER).collect();
    if pieces.len() != rec.image_slots.len() + 1 {
        return Err(PromptError::UnresolvedPlaceholder {
            placeholders: pieces.len() - 1,
            slots: rec.image_slots.len(),
        });
    }
    let mut runs = Vec::new();
    for (slot, piece) in pieces.iter().enumerate() {
        if !piece.is_empty() {
            runs.push(LayoutRun::Text(piece.to_string()));
        }
        if slot < per_slot_tokens.len() {
            runs.push(LayoutRun::Image {
                slot,
                tokens: per_slot_tokens[slot],
            });
        }
    }
    Ok(TokenLayout { runs })
}

/// Writes records as JSON lines, one record per line.
pub fn write_dataset(records: &[ConversationRecord], path: &Path) -> Result<(), PromptError> {
    let io_err = |source| PromptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| PromptError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        out.write_all(line.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a JSON-lines dataset back; malformed lines report their 1-based
/// line number.
pub fn read_dataset(path: &Path) -> Result<Vec<ConversationRecord>, PromptError> {
    let file = File::open(path).map_err(|source| PromptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ConversationRecord =
            serde_json::from_str(&line).map_err(|e| PromptError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{Action, ActionAnswer};

    fn obj(name: &str, x: f64, y: f64) -> DetectedObject {
        DetectedObject {
            name: name.to_string(),
            x,
            y,
            color: None,
            shape: None,
        }
    }

    fn answer(xy: &[(f64, f64)]) -> ActionAnswer {
        ActionAnswer::new(
            xy.iter()
                .map(|&(x, y)| Action::new(x, y, 0.0).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn describe_is_deterministic_and_order_preserving() {
        assert_eq!(describe_detections(&[]), "");
        assert_eq!(
            describe_detections(&[obj("red block", 0.25, 0.75)]),
            "red block at (0.250, 0.750)."
        );
        let a = obj("a", 0.1, 0.2);
        let b = obj("b", 0.3, 0.4);
        let fwd = describe_detections(&[a.clone(), b.clone()]);
        let rev = describe_detections(&[b, a]);
        assert_eq!(fwd, "a at (0.100, 0.200). b at (0.300, 0.400).");
        assert_eq!(rev, "b at (0.300, 0.400). a at (0.100, 0.200).");
    }

    #[test]
    fn collection_prompt_without_history() {
        let rec = build_prompt(
            "Stack the blocks.",
            &[0],
            &[],
            &[],
            &[vec![obj("red block", 0.2, 0.3)]],
            PlacementMode::Collection,
        )
        .unwrap();
        let user = rec.user_turn().unwrap();
        assert!(user.content.starts_with("<image>\n"));
        assert!(!user.content.contains(HISTORY_PREFIX));
        assert!(rec.satisfies_collection_invariant());
        assert_eq!(rec.image_slots.len(), 1);
    }

    #[test]
    fn history_clause_lists_all_actions_in_order() {
        let h1 = answer(&[(0.1, 0.2), (0.3, 0.4)]);
        let h2 = answer(&[(0.5, 0.6), (0.7, 0.8)]);
        let rec = build_prompt(
            "Sort by color.",
            &[0, 1],
            &[0],
            &[h1, h2],
            &[vec![], vec![obj("disc", 0.9, 0.9)], vec![]],
            PlacementMode::Collection,
        )
        .unwrap();
        let user = &rec.user_turn().unwrap().content;
        let clause_at = user.find(HISTORY_PREFIX).unwrap();
        let clause = &user[clause_at + HISTORY_PREFIX.len()..];
        let entries: Vec<&str> = clause.split("; ").collect();
        assert_eq!(entries.len(), 4);
        assert!(entries[0].contains("(0.100, 0.200)"));
        assert!(entries[3].contains("(0.700, 0.800)"));
    }

    #[test]
    fn modes_share_placeholder_multiset_but_not_positions() {
        let detections = vec![vec![obj("block", 0.1, 0.1)], vec![obj("disc", 0.5, 0.5)], vec![]];
        let collection = build_prompt("Do it.", &[0, 1], &[0], &[], &detections, PlacementMode::Collection).unwrap();
        let interleaved = build_prompt("Do it.", &[0, 1], &[0], &[], &detections, PlacementMode::Interleaved).unwrap();
        assert_eq!(collection.image_slots, interleaved.image_slots);
        let count = |r: &ConversationRecord| {
            r.user_turn().unwrap().content.matches(IMAGE_PLACEHOLDER).count()
        };
        assert_eq!(count(&collection), count(&interleaved));
        assert!(collection.satisfies_collection_invariant());
        assert!(!interleaved.satisfies_collection_invariant());
    }

    #[test]
    fn build_prompt_rejects_bad_inputs() {
        assert!(matches!(
            build_prompt("x", &[], &[], &[], &[], PlacementMode::Collection),
            Err(PromptError::NoObservations)
        ));
        assert!(matches!(
            build_prompt("x", &[0], &[], &[], &[vec![], vec![]], PlacementMode::Collection),
            Err(PromptError::DetectionCountMismatch { slots: 1, got: 2 })
        ));
    }

    #[test]
    fn collection_layout_puts_image_runs_first() {
        let rec = build_prompt(
            "Inspect.",
            &[0, 1],
            &[],
            &[],
            &[vec![obj("b", 0.2, 0.2)], vec![]],
            PlacementMode::Collection,
        )
        .unwrap();
        let layout = token_layout(&rec, &[100, 60]).unwrap();
        assert_eq!(layout.image_runs(), vec![(0, 100), (1, 60)]);
        assert!(layout.images_first());
        assert_eq!(layout.image_token_total(), 160);
        match &layout.runs[0] {
            LayoutRun::Image { slot: 0, tokens: 100 } => {}
            other => panic!("expected leading image run, got {other:?}"),
        }
    }

    #[test]
    fn interleaved_layout_places_images_at_descriptions() {
        let rec = build_prompt(
            "Inspect.",
            &[0, 1],
            &[],
            &[],
            &[vec![obj("b", 0.2, 0.2)], vec![]],
            PlacementMode::Interleaved,
        )
        .unwrap();
        let layout = token_layout(&rec, &[10, 20]).unwrap();
        assert!(!layout.images_first());
        assert_eq!(layout.image_runs(), vec![(0, 10), (1, 20)]);
        assert_eq!(layout.image_token_total(), 30);
        assert!(matches!(layout.runs[0], LayoutRun::Text(_)));
    }

    #[test]
    fn token_layout_rejects_count_mismatch() {
        let rec = build_prompt("x", &[0], &[], &[], &[vec![]], PlacementMode::Collection).unwrap();
        assert!(matches!(
            token_layout(&rec, &[1, 2]),
            Err(PromptError::SlotCountMismatch { .. })
        ));
    }

    #[test]
    fn history_prefixes_nest_across_steps() {
        let mut history = Vec::new();
        let mut previous_clause = String::new();
        for step in 0..4 {
            let rec = build_prompt(
                "Tidy the table.",
                &[0],
                &[],
                &history,
                &[vec![]],
                PlacementMode::Collection,
            )
            .unwrap();
            let user = &rec.user_turn().unwrap().content;
            if step > 0 {
                let clause = user[user.find(HISTORY_PREFIX).unwrap()..].to_string();
                assert!(clause.starts_with(previous_clause.as_str()) || previous_clause.is_empty());
                previous_clause = clause;
            }
            history.push(answer(&[(0.1 * (step + 1) as f64, 0.5)]));
        }
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");

        write_dataset(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(read_dataset(&path).unwrap().is_empty());

        let records: Vec<ConversationRecord> = (0..3)
            .map(|i| {
                build_prompt(
                    &format!("Task {i}."),
                    &[0, 1],
                    &[0],
                    &[answer(&[(0.2, 0.2)])],
                    &[vec![obj("star", 0.4, 0.6)], vec![], vec![]],
                    if i % 2 == 0 { PlacementMode::Collection } else { PlacementMode::Interleaved },
                )
                .unwrap()
                .with_assistant_turn("Move to (0.500, 0.500) with rotation 0 degrees.")
            })
            .collect();
        write_dataset(&records, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), records);

        let mut text = std::fs::read_to_string(&path).unwrap();
        let cut = text.len() - 40;
        text.truncate(cut);
        std::fs::write(&path, text).unwrap();
        match read_dataset(&path) {
            Err(PromptError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn record_json_shape_matches_interface() {
        let rec = build_prompt("Go.", &[0], &[1], &[], &[vec![], vec![]], PlacementMode::Collection).unwrap();
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["mode"], "collection");
        assert_eq!(json["slots"][0]["kind"], "obs");
        assert_eq!(json["slots"][1]["kind"], "goal");
        assert_eq!(json["turns"][0]["role"], "system");
        assert!(json["instruction"].is_string());
    }
}
