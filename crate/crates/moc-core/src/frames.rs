//! Frame sequences, the FSQ on-disk container and the patch-grid
//! decomposition used by the compressor.
//!
//! A [`FrameSequence`] holds N frames of H x W x C float32 intensities in
//! `[0, 1]`, stored frame-major, row-major, channel-interleaved. The FSQ
//! container is little-endian and bit-exact: `load_fsq(save_fsq(s)) == s`
//! for every finite value, including `-0.0`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Magic bytes opening every FSQ file.
pub const FSQ_MAGIC: [u8; 4] = *b"FSQ1";

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("invalid dimensions n={n} h={h} w={w} c={c} (need n,h,w >= 1, c in {{1,3}}, n*h*w*c < 2^32)")]
    InvalidDims { n: usize, h: usize, w: usize, c: usize },
    #[error("intensity {value} at flat index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f32 },
    #[error("data length {got} does not match n*h*w*c = {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not an FSQ file")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated payload, expected {expected} float32 values, got {got}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("{path}: trailing bytes after payload")]
    TrailingData { path: PathBuf },
    #[error("patch size {p} does not divide h={h} and w={w}")]
    PatchSize { p: usize, h: usize, w: usize },
}

/// N ordered RGB (or grayscale) frames with one shared (H, W, C).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl FrameSequence {
    /// Builds a sequence from flat frame-major, row-major, channel-interleaved
    /// data, validating dimensions and the `[0, 1]` intensity range.
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self, FrameError> {
        if n == 0 || h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(FrameError::InvalidDims { n, h, w, c });
        }
        let expected = n
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(c))
            .filter(|&v| v < u32::MAX as usize)
            .ok_or(FrameError::InvalidDims { n, h, w, c })?;
        if data.len() != expected {
            return Err(FrameError::DataLength {
                expected,
                got: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(FrameError::ValueOutOfRange { index, value });
            }
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn value_count(&self) -> usize {
        self.data.len()
    }

    /// Flat slice of frame `i`.
    pub fn frame(&self, i: usize) -> &[f32] {
        let len = self.h * self.w * self.c;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn get(&self, frame: usize, row: usize, col: usize, ch: usize) -> f32 {
        self.data[((frame * self.h + row) * self.w + col) * self.c + ch]
    }
}

/// Patch-grid view of a sequence: N x Gh x Gw patches, each a vector of
/// `p*p*c` values in row-major patch order, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    n: usize,
    gh: usize,
    gw: usize,
    p: usize,
    c: usize,
    data: Vec<f32>,
}

impl PatchSequence {
    /// Builds a patch grid from raw data laid out patch-major in
    /// `(frame, y, x)` raster order. Intended for synthetic test inputs;
    /// real grids come from [`to_patches`].
    pub fn from_raw(
        n: usize,
        gh: usize,
        gw: usize,
        p: usize,
        c: usize,
        data: Vec<f32>,
    ) -> Result<Self, FrameError> {
        if n == 0 || gh == 0 || gw == 0 || p == 0 || !(c == 1 || c == 3) {
            return Err(FrameError::InvalidDims {
                n,
                h: gh * p,
                w: gw * p,
                c,
            });
        }
        let expected = n * gh * gw * p * p * c;
        if data.len() != expected {
            return Err(FrameError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            n,
            gh,
            gw,
            p,
            c,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gh(&self) -> usize {
        self.gh
    }

    pub fn gw(&self) -> usize {
        self.gw
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn c(&self) -> usize {
        self.c
    }

    /// Length of one patch vector, `p*p*c`.
    pub fn patch_len(&self) -> usize {
        self.p * self.p * self.c
    }

    /// Total number of patches, `n*gh*gw`.
    pub fn patch_count(&self) -> usize {
        self.n * self.gh * self.gw
    }

    pub fn patch(&self, frame: usize, y: usize, x: usize) -> &[f32] {
        let len = self.patch_len();
        let idx = (frame * self.gh + y) * self.gw + x;
        &self.data[idx * len..(idx + 1) * len]
    }
}

/// Writes `seq` to `path` in the FSQ container format: magic `FSQ1`,
/// u32 LE n/h/w/c, then the raw float32 payload. No padding, no compression.
pub fn save_fsq(seq: &FrameSequence, path: &Path) -> Result<(), FrameError> {
    let io_err = |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    out.write_all(&FSQ_MAGIC).map_err(io_err)?;
    for dim in [seq.n, seq.h, seq.w, seq.c] {
        out.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    }
    for &v in &seq.data {
        out.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads an FSQ container back into a [`FrameSequence`].
///
/// Bad magic, short payloads, trailing bytes and out-of-range values are
/// reported as distinct error kinds.
pub fn load_fsq(path: &Path) -> Result<FrameSequence, FrameError> {
    let io_err = |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut input = BufReader::new(file);

    let mut magic = [0u8; 4];
    if input.read_exact(&mut magic).is_err() || magic != FSQ_MAGIC {
        return Err(FrameError::BadMagic {
            path: path.to_path_buf(),
        });
    }

    let mut dims = [0usize; 4];
    let mut buf4 = [0u8; 4];
    for dim in dims.iter_mut() {
        input.read_exact(&mut buf4).map_err(|_| FrameError::Truncated {
            path: path.to_path_buf(),
            expected: 0,
            got: 0,
        })?;
        *dim = u32::from_le_bytes(buf4) as usize;
    }
    let [n, h, w, c] = dims;
    if n == 0 || h == 0 || w == 0 || !(c == 1 || c == 3) {
        return Err(FrameError::InvalidDims { n, h, w, c });
    }

    let expected = n * h * w * c;
    let mut data = Vec::with_capacity(expected);
    while data.len() < expected {
        match input.read_exact(&mut buf4) {
            Ok(()) => data.push(f32::from_le_bytes(buf4)),
            Err(_) => {
                return Err(FrameError::Truncated {
                    path: path.to_path_buf(),
                    expected,
                    got: data.len(),
                })
            }
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(io_err)? != 0 {
        return Err(FrameError::TrailingData {
            path: path.to_path_buf(),
        });
    }

    FrameSequence::new(n, h, w, c, data)
}

/// Cuts a sequence into a patch grid. `p` must divide both H and W.
///
/// Patches are emitted in `(frame, y, x)` raster order; within a patch,
/// pixels are row-major and channel-interleaved, matching the norm the
/// compressor computes over patch vectors.
pub fn to_patches(seq: &FrameSequence, p: usize) -> Result<PatchSequence, FrameError> {
    if p == 0 || !seq.h.is_multiple_of(p) || !seq.w.is_multiple_of(p) {
        return Err(FrameError::PatchSize {
            p,
            h: seq.h,
            w: seq.w,
        });
    }
    let gh = seq.h / p;
    let gw = seq.w / p;
    let mut data = Vec::with_capacity(seq.value_count());
    for frame in 0..seq.n {
        for y in 0..gh {
            for x in 0..gw {
                for r in 0..p {
                    let row = y * p + r;
                    let base = ((frame * seq.h + row) * seq.w + x * p) * seq.c;
                    data.extend_from_slice(&seq.data[base..base + p * seq.c]);
                }
            }
        }
    }
    Ok(PatchSequence {
        n: seq.n,
        gh,
        gw,
        p,
        c: seq.c,
        data,
    })
}

/// Exact inverse of [`to_patches`].
pub fn from_patches(ps: &PatchSequence) -> FrameSequence {
    let h = ps.gh * ps.p;
    let w = ps.gw * ps.p;
    let mut data = vec![0.0f32; ps.n * h * w * ps.c];
    for frame in 0..ps.n {
        for y in 0..ps.gh {
            for x in 0..ps.gw {
                let patch = ps.patch(frame, y, x);
                for r in 0..ps.p {
                    let row = y * ps.p + r;
                    let dst = ((frame * h + row) * w + x * ps.p) * ps.c;
                    let src = r * ps.p * ps.c;
                    data[dst..dst + ps.p * ps.c].copy_from_slice(&patch[src..src + ps.p * ps.c]);
                }
            }
        }
    }
    FrameSequence {
        n: ps.n,
        h,
        w,
        c: ps.c,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> FrameSequence {
        let data: Vec<f32> = (0..n * h * w * c).map(|_| rng.random_range(0.0..=1.0)).collect();
        FrameSequence::new(n, h, w, c, data).unwrap()
    }

    #[test]
    fn new_rejects_bad_dims_and_values() {
        assert!(matches!(
            FrameSequence::new(0, 2, 2, 1, vec![]),
            Err(FrameError::InvalidDims { .. })
        ));
        assert!(matches!(
            FrameSequence::new(1, 2, 2, 2, vec![0.0; 8]),
            Err(FrameError::InvalidDims { .. })
        ));
        assert!(matches!(
            FrameSequence::new(1, 2, 2, 1, vec![0.0; 3]),
            Err(FrameError::DataLength { .. })
        ));
        assert!(matches!(
            FrameSequence::new(1, 2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]),
            Err(FrameError::ValueOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            FrameSequence::new(1, 2, 2, 1, vec![0.0, f32::NAN, 0.0, 0.0]),
            Err(FrameError::ValueOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn save_zero_sequence_writes_expected_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.fsq");
        let seq = FrameSequence::new(1, 2, 2, 1, vec![0.0; 4]).unwrap();
        save_fsq(&seq, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"FSQ1");
        for dim in [1u32, 2, 2, 1] {
            expected.extend_from_slice(&dim.to_le_bytes());
        }
        expected.extend_from_slice(&[0u8; 16]);
        assert_eq!(bytes, expected);
        assert_eq!(load_fsq(&path).unwrap(), seq);
    }

    #[test]
    fn save_to_unwritable_path_errors() {
        let seq = FrameSequence::new(1, 1, 1, 1, vec![0.5]).unwrap();
        let err = save_fsq(&seq, Path::new("/nonexistent-dir/sub/x.fsq")).unwrap_err();
        assert!(matches!(err, FrameError::Io { .. }));
    }

    #[test]
    fn fsq_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..100 {
            let n = rng.random_range(1..5);
            let h = rng.random_range(1..9);
            let w = rng.random_range(1..9);
            let c = if rng.random_range(0..2) == 0 { 1 } else { 3 };
            let seq = random_sequence(&mut rng, n, h, w, c);
            let path = dir.path().join(format!("rt{i}.fsq"));
            save_fsq(&seq, &path).unwrap();
            let back = load_fsq(&path).unwrap();
            assert_eq!(back.n(), seq.n());
            let same_bits = back
                .data()
                .iter()
                .zip(seq.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "payload bits changed in round trip");
        }
    }

    #[test]
    fn fsq_preserves_special_value_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("special.fsq");
        let values = vec![0.0f32, -0.0, 1.0, f32::MIN_POSITIVE, 1.0e-40, 0.5];
        let seq = FrameSequence::new(1, 2, 3, 1, values.clone()).unwrap();
        save_fsq(&seq, &path).unwrap();
        let back = load_fsq(&path).unwrap();
        for (a, b) in back.data().iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // -0.0 must survive as -0.0, not 0.0.
        assert_eq!(back.data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn load_rejects_bad_magic_truncation_and_trailing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fsq");

        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_fsq(&path), Err(FrameError::BadMagic { .. })));

        let seq = FrameSequence::new(1, 2, 2, 1, vec![0.25; 4]).unwrap();
        save_fsq(&seq, &path).unwrap();
        let full = std::fs::read(&path).unwrap();

        std::fs::write(&path, &full[..full.len() - 4]).unwrap();
        assert!(matches!(
            load_fsq(&path),
            Err(FrameError::Truncated { expected: 4, got: 3, .. })
        ));

        let mut extended = full.clone();
        extended.push(0);
        std::fs::write(&path, &extended).unwrap();
        assert!(matches!(load_fsq(&path), Err(FrameError::TrailingData { .. })));

        let mut out_of_range = full.clone();
        let bad = 2.0f32.to_le_bytes();
        let last = out_of_range.len() - 4;
        out_of_range[last..].copy_from_slice(&bad);
        std::fs::write(&path, &out_of_range).unwrap();
        assert!(matches!(
            load_fsq(&path),
            Err(FrameError::ValueOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn single_patch_covers_whole_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = random_sequence(&mut rng, 1, 16, 16, 1);
        let ps = to_patches(&seq, 16).unwrap();
        assert_eq!((ps.n(), ps.gh(), ps.gw()), (1, 1, 1));
        assert_eq!(ps.patch(0, 0, 0).len(), 256);
        assert_eq!(ps.patch(0, 0, 0), seq.data());
    }

    #[test]
    fn patch_grid_shape_for_rgb() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = random_sequence(&mut rng, 2, 32, 32, 3);
        let ps = to_patches(&seq, 16).unwrap();
        assert_eq!((ps.n(), ps.gh(), ps.gw()), (2, 2, 2));
        assert_eq!(ps.patch_len(), 768);
        assert_eq!(ps.patch_count(), 8);
    }

    #[test]
    fn non_divisible_patch_size_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = random_sequence(&mut rng, 1, 10, 10, 1);
        assert!(matches!(to_patches(&seq, 3), Err(FrameError::PatchSize { .. })));
        assert!(matches!(to_patches(&seq, 0), Err(FrameError::PatchSize { .. })));
    }

    #[test]
    fn patch_round_trip_over_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = [1, 2, 4][rng.random_range(0..3)];
            let gh = rng.random_range(1..4);
            let gw = rng.random_range(1..4);
            let n = rng.random_range(1..4);
            let c = if rng.random_range(0..2) == 0 { 1 } else { 3 };
            let seq = random_sequence(&mut rng, n, gh * p, gw * p, c);
            let back = from_patches(&to_patches(&seq, p).unwrap());
            assert_eq!(back, seq);
        }
    }

    proptest! {
        #[test]
        fn prop_patch_round_trip(
            n in 1usize..4,
            gh in 1usize..4,
            gw in 1usize..4,
            p in 1usize..4,
            c in prop::sample::select(vec![1usize, 3]),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n * gh * p * gw * p * c)
                .map(|_| rng.random_range(0.0..=1.0))
                .collect();
            let seq = FrameSequence::new(n, gh * p, gw * p, c, data).unwrap();
            let back = from_patches(&to_patches(&seq, p).unwrap());
            prop_assert_eq!(back, seq);
        }
    }
}
