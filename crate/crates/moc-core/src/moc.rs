//! Multi-observation compression over patch grids.
//!
//! A patch is *static* when its distance to the same-location patch in the
//! previous frame falls strictly below a threshold `epsilon`. Maximal runs
//! of consecutive static patches are replaced by the patch that first
//! appeared, annotated with the run length, so a downstream encoder can
//! still tell how many frames each kept patch represents.
//!
//! Comparison is chained (each frame against its immediate predecessor),
//! so the payload of a run of length L may drift from the later frames it
//! stands in for by at most `(L-1) * epsilon` under the Linf norm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::PatchSequence;

#[derive(Debug, Error)]
pub enum MocError {
    #[error("epsilon must be a finite value >= 0, got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid token dims n={n} gh={gh} gw={gw} p={p} c={c}")]
    InvalidDims {
        n: usize,
        gh: usize,
        gw: usize,
        p: usize,
        c: usize,
    },
    #[error("token {index} payload length {got}, expected {expected}")]
    PayloadLength {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("token {index} lies outside the grid or frame range")]
    TokenOutOfRange { index: usize },
    #[error("run coverage overlap at frame {frame}, cell ({x}, {y})")]
    CoverageOverlap { frame: usize, x: usize, y: usize },
    #[error("run coverage gap at frame {frame}, cell ({x}, {y})")]
    CoverageGap { frame: usize, x: usize, y: usize },
}

/// Distance between two same-location patch vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// Maximum absolute per-element difference. The default: the threshold
    /// keeps a per-pixel meaning independent of patch size.
    Linf,
    /// Root mean square of the per-element differences.
    L2Mean,
}

impl Norm {
    pub fn distance(&self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Norm::Linf => a
                .iter()
                .zip(b)
                .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
                .fold(0.0, f64::max),
            Norm::L2Mean => {
                let sum: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let d = f64::from(*x) - f64::from(*y);
                        d * d
                    })
                    .sum();
                (sum / a.len() as f64).sqrt()
            }
        }
    }
}

/// Per-patch static flags. `mask[i][y][x]` is true when the patch at
/// `(x, y)` in frame `i` is static relative to frame `i-1`; frame 0 is
/// always all-false.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticMask {
    n: usize,
    gh: usize,
    gw: usize,
    mask: Vec<bool>,
}

impl StaticMask {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gh(&self) -> usize {
        self.gh
    }

    pub fn gw(&self) -> usize {
        self.gw
    }

    pub fn is_static(&self, frame: usize, y: usize, x: usize) -> bool {
        self.mask[(frame * self.gh + y) * self.gw + x]
    }

    /// Number of static (dropped) patches.
    pub fn static_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// One maximal run of consecutive static patches at a fixed grid cell,
/// represented by the patch that first appeared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpan {
    /// Frame index of the run's first (kept) patch.
    pub first_frame: usize,
    pub x: usize,
    pub y: usize,
    /// Number of consecutive frames the kept patch represents, >= 1.
    pub len: usize,
}

/// The run-length structure of a mask: one entry per kept patch, in
/// `(first_frame, y, x)` ascending order. Runs at a fixed cell tile
/// `[0, N)` exactly, so the lengths always sum to `n*gh*gw`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLengthMask {
    n: usize,
    gh: usize,
    gw: usize,
    runs: Vec<RunSpan>,
}

impl RunLengthMask {
    pub fn runs(&self) -> &[RunSpan] {
        &self.runs
    }

    pub fn total_coverage(&self) -> usize {
        self.runs.iter().map(|r| r.len).sum()
    }
}

/// Dimensions shared by a compressed token stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDims {
    pub n: usize,
    pub gh: usize,
    pub gw: usize,
    pub p: usize,
    pub c: usize,
}

/// A kept patch plus its placement metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    #[serde(rename = "f")]
    pub first_frame: usize,
    pub x: usize,
    pub y: usize,
    #[serde(rename = "run")]
    pub run_length: usize,
    pub payload: Vec<f32>,
}

/// Output of the compressor: kept patches in `(first_frame, y, x)` order
/// with per-token run lengths. Serializes to the JSON shape used by the
/// CLI `compress` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressedTokens {
    pub dims: TokenDims,
    pub epsilon: f64,
    pub norm: Norm,
    pub tokens: Vec<Token>,
}

impl CompressedTokens {
    pub fn kept_count(&self) -> usize {
        self.tokens.len()
    }

    /// Number of kept tokens whose run starts in each frame.
    pub fn tokens_per_frame(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.dims.n];
        for t in &self.tokens {
            counts[t.first_frame] += 1;
        }
        counts
    }
}

/// Simple compression summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub original_tokens: usize,
    pub kept_tokens: usize,
    pub reduction_fraction: f64,
}

fn check_epsilon(epsilon: f64) -> Result<(), MocError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(MocError::InvalidEpsilon(epsilon));
    }
    Ok(())
}

/// Flags patches whose distance to the previous frame's same-location patch
/// is strictly below `epsilon`. With `epsilon == 0` nothing is static.
pub fn detect_static(ps: &PatchSequence, epsilon: f64, norm: Norm) -> Result<StaticMask, MocError> {
    check_epsilon(epsilon)?;
    let (n, gh, gw) = (ps.n(), ps.gh(), ps.gw());
    let mut mask = vec![false; n * gh * gw];
    for frame in 1..n {
        for y in 0..gh {
            for x in 0..gw {
                let d = norm.distance(ps.patch(frame, y, x), ps.patch(frame - 1, y, x));
                mask[(frame * gh + y) * gw + x] = d < epsilon;
            }
        }
    }
    Ok(StaticMask { n, gh, gw, mask })
}

/// Collapses a static mask into per-cell maximal runs, ordered by
/// `(first_frame, y, x)`.
pub fn run_lengths(mask: &StaticMask) -> RunLengthMask {
    let (n, gh, gw) = (mask.n, mask.gh, mask.gw);
    // Bucket run starts by first frame so the flattened order is
    // (first_frame, y, x) without a sort.
    let mut buckets: Vec<Vec<RunSpan>> = vec![Vec::new(); n];
    for y in 0..gh {
        for x in 0..gw {
            let mut start = 0usize;
            while start < n {
                let mut end = start + 1;
                while end < n && mask.is_static(end, y, x) {
                    end += 1;
                }
                buckets[start].push(RunSpan {
                    first_frame: start,
                    x,
                    y,
                    len: end - start,
                });
                start = end;
            }
        }
    }
    let mut runs = Vec::new();
    for mut bucket in buckets {
        // Entries were pushed in (y, x) scan order per frame; keep it stable.
        bucket.sort_by_key(|r| (r.y, r.x));
        runs.extend(bucket);
    }
    RunLengthMask { n, gh, gw, runs }
}

/// Compresses a patch grid: one token per maximal static run, carrying the
/// run's first patch as payload.
pub fn compress(ps: &PatchSequence, epsilon: f64, norm: Norm) -> Result<CompressedTokens, MocError> {
    let mask = detect_static(ps, epsilon, norm)?;
    let rle = run_lengths(&mask);
    let tokens = rle
        .runs
        .iter()
        .map(|r| Token {
            first_frame: r.first_frame,
            x: r.x,
            y: r.y,
            run_length: r.len,
            payload: ps.patch(r.first_frame, r.y, r.x).to_vec(),
        })
        .collect();
    Ok(CompressedTokens {
        dims: TokenDims {
            n: ps.n(),
            gh: ps.gh(),
            gw: ps.gw(),
            p: ps.p(),
            c: ps.c(),
        },
        epsilon,
        norm,
        tokens,
    })
}

/// Reconstructs the full patch grid from a token stream by broadcasting
/// each payload across its run. Coverage gaps or overlaps are corruption
/// errors, so a successful expand certifies the run partition.
pub fn expand(ct: &CompressedTokens) -> Result<PatchSequence, MocError> {
    let TokenDims { n, gh, gw, p, c } = ct.dims;
    if n == 0 || gh == 0 || gw == 0 || p == 0 || !(c == 1 || c == 3) {
        return Err(MocError::InvalidDims { n, gh, gw, p, c });
    }
    let patch_len = p * p * c;
    let mut owner: Vec<Option<usize>> = vec![None; n * gh * gw];
    for (index, t) in ct.tokens.iter().enumerate() {
        if t.x >= gw || t.y >= gh || t.run_length == 0 || t.first_frame + t.run_length > n {
            return Err(MocError::TokenOutOfRange { index });
        }
        if t.payload.len() != patch_len {
            return Err(MocError::PayloadLength {
                index,
                expected: patch_len,
                got: t.payload.len(),
            });
        }
        for frame in t.first_frame..t.first_frame + t.run_length {
            let cell = (frame * gh + t.y) * gw + t.x;
            if owner[cell].is_some() {
                return Err(MocError::CoverageOverlap {
                    frame,
                    x: t.x,
                    y: t.y,
                });
            }
            owner[cell] = Some(index);
        }
    }
    let mut data = Vec::with_capacity(n * gh * gw * patch_len);
    for frame in 0..n {
        for y in 0..gh {
            for x in 0..gw {
                let cell = (frame * gh + y) * gw + x;
                match owner[cell] {
                    Some(index) => data.extend_from_slice(&ct.tokens[index].payload),
                    None => return Err(MocError::CoverageGap { frame, x, y }),
                }
            }
        }
    }
    PatchSequence::from_raw(n, gh, gw, p, c, data).map_err(|_| MocError::InvalidDims { n, gh, gw, p, c })
}

/// Token-count summary of a compressed stream.
pub fn stats(ct: &CompressedTokens) -> CompressionStats {
    let original = ct.dims.n * ct.dims.gh * ct.dims.gw;
    let kept = ct.tokens.len();
    CompressionStats {
        original_tokens: original,
        kept_tokens: kept,
        reduction_fraction: 1.0 - kept as f64 / original as f64,
    }
}
