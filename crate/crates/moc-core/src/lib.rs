//! Run-length compression of multi-observation frame sequences, with the
//! surrounding machinery needed to measure it end to end: a bit-exact
//! frame container, a desk-scale attention encoder with verified
//! gradients, a round-trippable action text grammar, memory-bearing
//! prompt records, an affine image-to-workspace calibration and a
//! deterministic tabletop manipulation loop driven by a scripted oracle.

pub mod action;
pub mod calib;
pub mod encoder;
pub mod frames;
pub mod moc;
pub mod prompt;
pub mod sim;

pub use action::{extract, serialize, Action, ActionAnswer, ActionError};
pub use calib::{CalibError, CalibrationMap, WorkspaceAction};
pub use encoder::{
    bench_forward, embed, encode, grad_check, init_params, EncoderError, EncoderParams,
    ForwardTiming, GradReport, TokenEmbeddings,
};
pub use frames::{
    from_patches, load_fsq, save_fsq, to_patches, FrameError, FrameSequence, PatchSequence,
};
pub use moc::{
    compress, detect_static, expand, stats, CompressedTokens, CompressionStats, MocError, Norm,
    StaticMask,
};
pub use prompt::{
    build_prompt, describe_detections, read_dataset, token_layout, write_dataset,
    ConversationRecord, DetectedObject, PlacementMode, PromptError, TokenLayout,
};
pub use sim::{
    is_success, observe, oracle_policy, reset, run_batch, run_episode, EpisodeResult, SimError,
    SimState, TaskGoal, TaskKind,
};
