//! Shared test support: an independent brute-force run-length encoder and
//! random patch-grid generators with controlled duplicate injection.

#![allow(dead_code)]

use moc_core::frames::PatchSequence;
use moc_core::moc::Norm;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A kept patch as the naive encoder sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveToken {
    pub first_frame: usize,
    pub x: usize,
    pub y: usize,
    pub run: usize,
    pub payload: Vec<f32>,
}

fn element_scan_static(a: &[f32], b: &[f32], epsilon: f64, norm: Norm) -> bool {
    match norm {
        Norm::Linf => a
            .iter()
            .zip(b)
            .all(|(x, y)| (f64::from(*x) - f64::from(*y)).abs() < epsilon),
        Norm::L2Mean => {
            let mut sum = 0.0f64;
            for (x, y) in a.iter().zip(b) {
                let d = f64::from(*x) - f64::from(*y);
                sum += d * d;
            }
            (sum / a.len() as f64).sqrt() < epsilon
        }
    }
}

/// Direct per-location run scan: walk each grid cell through time, cut a
/// run whenever the chained comparison exceeds epsilon, keep the first
/// patch of each run. Output sorted by `(first_frame, y, x)`.
pub fn naive_compress(ps: &PatchSequence, epsilon: f64, norm: Norm) -> Vec<NaiveToken> {
    let mut tokens = Vec::new();
    for y in 0..ps.gh() {
        for x in 0..ps.gw() {
            let mut start = 0usize;
            while start < ps.n() {
                let mut end = start + 1;
                while end < ps.n()
                    && element_scan_static(ps.patch(end, y, x), ps.patch(end - 1, y, x), epsilon, norm)
                {
                    end += 1;
                }
                tokens.push(NaiveToken {
                    first_frame: start,
                    x,
                    y,
                    run: end - start,
                    payload: ps.patch(start, y, x).to_vec(),
                });
                start = end;
            }
        }
    }
    tokens.sort_by_key(|t| (t.first_frame, t.y, t.x));
    tokens
}

/// Random grid whose patches are fresh, exact duplicates of the previous
/// frame, or near-duplicates jittered well inside `epsilon`, so every run
/// structure shows up.
pub fn random_grid_with_dups(
    rng: &mut ChaCha8Rng,
    n: usize,
    gh: usize,
    gw: usize,
    p: usize,
    epsilon: f64,
) -> PatchSequence {
    let patch_len = p * p;
    let mut frames: Vec<Vec<f32>> = Vec::new();
    for f in 0..n {
        let mut frame = Vec::with_capacity(gh * gw * patch_len);
        for cell in 0..gh * gw {
            let choice = if f == 0 { 0 } else { rng.random_range(0..10) };
            match choice {
                // Exact duplicate of the previous frame's patch.
                1..=3 => {
                    let prev = &frames[f - 1];
                    frame.extend_from_slice(&prev[cell * patch_len..(cell + 1) * patch_len]);
                }
                // Near-duplicate: jitter each element by far less than
                // epsilon, keeping the chained comparison static.
                4..=6 if epsilon > 0.0 => {
                    let prev = frames[f - 1][cell * patch_len..(cell + 1) * patch_len].to_vec();
                    for v in prev {
                        let jitter = rng.random_range(-0.4 * epsilon..=0.4 * epsilon) as f32;
                        frame.push((v + jitter).clamp(0.0, 1.0));
                    }
                }
                // Fresh content, far from any small epsilon.
                _ => frame.extend((0..patch_len).map(|_| rng.random_range(0.1..=0.9f32))),
            }
        }
        frames.push(frame);
    }
    PatchSequence::from_raw(n, gh, gw, p, 1, frames.concat()).expect("generated dims are consistent")
}
