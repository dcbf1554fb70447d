//! Desk-scale attention encoder over compressed token streams.
//!
//! Embedding composes three terms per kept token: a linear projection of
//! the patch payload, a position embedding for the spatial cell of first
//! appearance, and a learnable length embedding indexed by run length
//! (row 0 = run length 1). The encoder stack is B blocks of single-head
//! softmax self-attention and a GELU feed-forward, residual adds, no
//! normalization layers, so all-zero parameters pass the input through
//! unchanged.
//!
//! Everything runs in f64: [`grad_check`] compares hand-derived gradients
//! of a sum-of-squares loss against central finite differences, which
//! would drown in f32 rounding noise.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::moc::CompressedTokens;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("dimension must be >= 1: {0}")]
    ZeroDim(&'static str),
    #[error("token {index} run length {run} exceeds the length table capacity {n_max}")]
    RunLengthCapacity {
        index: usize,
        run: usize,
        n_max: usize,
    },
    #[error("token {index} cell ({x}, {y}) lies outside the {gh}x{gw} grid")]
    TokenOutsideGrid {
        index: usize,
        x: usize,
        y: usize,
        gh: usize,
        gw: usize,
    },
    #[error("token {index} payload length {got} does not match the projection input {expected}")]
    PayloadDim {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite value produced in block {block}")]
    NonFinite { block: usize },
    #[error("gradient check instance too large: tokens={tokens} (max 32), d={d} (max 16)")]
    InstanceTooLarge { tokens: usize, d: usize },
    #[error("repeats must be >= 1")]
    ZeroRepeats,
    #[error("compressed token count {k_comp} exceeds full count {k_full}")]
    BenchSizes { k_full: usize, k_comp: usize },
}

/// Dense row-major f64 matrix, just big enough for this crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn fill_uniform(&mut self, rng: &mut ChaCha8Rng, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = rng.random_range(lo..hi);
        }
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// `self * other^T`
    pub fn matmul_bt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut sum = 0.0;
                for k in 0..self.cols {
                    sum += self.data[i * self.cols + k] * other.data[j * other.cols + k];
                }
                out.data[i * other.rows + j] = sum;
            }
        }
        out
    }

    /// `self^T * other`
    pub fn matmul_at(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// One attention block: single-head self-attention followed by a 2-layer
/// feed-forward of width 4d, both with residual connections.
#[derive(Clone, Debug)]
pub struct AttnBlock {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

/// All encoder parameters.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// `(p*p*c) x d` payload projection.
    pub proj: Matrix,
    /// `(gh*gw) x d` position table, indexed by the cell of first appearance.
    pub pos_table: Matrix,
    /// `n_max x d` length table; row `r` is the embedding for run length `r+1`.
    pub len_table: Matrix,
    pub blocks: Vec<AttnBlock>,
    pub dim: usize,
    pub n_max: usize,
    pub gh: usize,
    pub gw: usize,
    pub patch_dim: usize,
}

/// One row per compressed token, `K x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbeddings {
    mat: Matrix,
}

impl TokenEmbeddings {
    pub fn from_matrix(mat: Matrix) -> Self {
        Self { mat }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn token_count(&self) -> usize {
        self.mat.rows()
    }
}

/// Deterministic uniform init in `[-0.02, 0.02]`.
pub fn init_params(
    d: usize,
    n_max: usize,
    grid: (usize, usize),
    patch_dim: usize,
    blocks: usize,
    seed: u64,
) -> Result<EncoderParams, EncoderError> {
    let (gh, gw) = grid;
    for (value, name) in [
        (d, "d"),
        (n_max, "n_max"),
        (gh, "gh"),
        (gw, "gw"),
        (patch_dim, "patch_dim"),
        (blocks, "blocks"),
    ] {
        if value == 0 {
            return Err(EncoderError::ZeroDim(name));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |rows, cols| {
        let mut m = Matrix::zeros(rows, cols);
        m.fill_uniform(&mut rng, -0.02, 0.02);
        m
    };
    let proj = fill(patch_dim, d);
    let pos_table = fill(gh * gw, d);
    let len_table = fill(n_max, d);
    let blocks = (0..blocks)
        .map(|_| AttnBlock {
            wq: fill(d, d),
            wk: fill(d, d),
            wv: fill(d, d),
            wo: fill(d, d),
            w1: fill(d, 4 * d),
            w2: fill(4 * d, d),
        })
        .collect();
    Ok(EncoderParams {
        proj,
        pos_table,
        len_table,
        blocks,
        dim: d,
        n_max,
        gh,
        gw,
        patch_dim,
    })
}

/// Per-token embedding:
/// `row_k = payload_k * proj + pos_table[y*gw + x] + len_table[run - 1]`.
pub fn embed(ct: &CompressedTokens, params: &EncoderParams) -> Result<TokenEmbeddings, EncoderError> {
    let d = params.dim;
    let mut mat = Matrix::zeros(ct.tokens.len(), d);
    for (index, token) in ct.tokens.iter().enumerate() {
        if token.run_length == 0 || token.run_length > params.n_max {
            return Err(EncoderError::RunLengthCapacity {
                index,
                run: token.run_length,
                n_max: params.n_max,
            });
        }
        if token.x >= params.gw || token.y >= params.gh {
            return Err(EncoderError::TokenOutsideGrid {
                index,
                x: token.x,
                y: token.y,
                gh: params.gh,
                gw: params.gw,
            });
        }
        if token.payload.len() != params.patch_dim {
            return Err(EncoderError::PayloadDim {
                index,
                expected: params.patch_dim,
                got: token.payload.len(),
            });
        }
        let pos = params.pos_table.row(token.y * params.gw + token.x);
        let len = params.len_table.row(token.run_length - 1);
        let row = mat.row_mut(index);
        for (j, r) in row.iter_mut().enumerate() {
            let mut proj_term = 0.0;
            for (a, &p) in token.payload.iter().enumerate() {
                proj_term += f64::from(p) * params.proj.get(a, j);
            }
            *r = proj_term + pos[j] + len[j];
        }
    }
    Ok(TokenEmbeddings { mat })
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}

fn softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct BlockCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
    z: Matrix,
}

/// Lean forward pass for one block; intermediates are dropped as soon as
/// they are consumed so benchmark timings reflect inference cost only.
fn block_forward(x: &Matrix, block: &AttnBlock, scale: f64) -> Matrix {
    let q = x.matmul(&block.wq);
    let k = x.matmul(&block.wk);
    let mut attn = q.matmul_bt(&k);
    drop((q, k));
    attn.scale(scale);
    softmax_rows(&mut attn);
    let v = x.matmul(&block.wv);
    let o = attn.matmul(&v).matmul(&block.wo);
    let mut x1 = x.clone();
    x1.add_assign(&o);
    let mut f = x1.matmul(&block.w1);
    for v in &mut f.data {
        *v = gelu(*v);
    }
    let u = f.matmul(&block.w2);
    x1.add_assign(&u);
    x1
}

fn block_forward_cached(x: &Matrix, block: &AttnBlock, scale: f64) -> (Matrix, BlockCache) {
    let q = x.matmul(&block.wq);
    let k = x.matmul(&block.wk);
    let v = x.matmul(&block.wv);
    let mut attn = q.matmul_bt(&k);
    attn.scale(scale);
    softmax_rows(&mut attn);
    let o = attn.matmul(&v).matmul(&block.wo);
    let mut x1 = x.clone();
    x1.add_assign(&o);
    let z = x1.matmul(&block.w1);
    let mut f = z.clone();
    for v in &mut f.data {
        *v = gelu(*v);
    }
    let u = f.matmul(&block.w2);
    let mut y = x1;
    y.add_assign(&u);
    let cache = BlockCache { q, k, v, attn, z };
    (y, cache)
}

/// Gradient of a block's output w.r.t. its input.
fn block_backward(grad_y: &Matrix, block: &AttnBlock, cache: &BlockCache, scale: f64) -> Matrix {
    // Feed-forward path.
    let grad_f = grad_y.matmul_bt(&block.w2);
    let mut grad_z = grad_f;
    for (g, z) in grad_z.data.iter_mut().zip(&cache.z.data) {
        *g *= gelu_prime(*z);
    }
    let mut grad_x1 = grad_y.clone();
    grad_x1.add_assign(&grad_z.matmul_bt(&block.w1));

    // Attention path.
    let grad_o = &grad_x1;
    let grad_h = grad_o.matmul_bt(&block.wo);
    let grad_attn = grad_h.matmul_bt(&cache.v);
    let grad_v = cache.attn.matmul_at(&grad_h);
    // Softmax backward per row: dS = A .* (dA - sum(dA .* A)).
    let mut grad_s = Matrix::zeros(grad_attn.rows(), grad_attn.cols());
    for i in 0..grad_attn.rows() {
        let a = cache.attn.row(i);
        let da = grad_attn.row(i);
        let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        let out = grad_s.row_mut(i);
        for j in 0..a.len() {
            out[j] = a[j] * (da[j] - dot);
        }
    }
    grad_s.scale(scale);
    let grad_q = grad_s.matmul(&cache.k);
    let grad_k = grad_s.matmul_at(&cache.q);

    let mut grad_x = grad_x1;
    grad_x.add_assign(&grad_q.matmul_bt(&block.wq));
    grad_x.add_assign(&grad_k.matmul_bt(&block.wk));
    grad_x.add_assign(&grad_v.matmul_bt(&block.wv));
    grad_x
}

fn forward_with_caches(
    emb: &TokenEmbeddings,
    params: &EncoderParams,
) -> Result<(Matrix, Vec<BlockCache>), EncoderError> {
    if emb.mat.cols() != params.dim {
        return Err(EncoderError::ShapeMismatch("embedding width != model dim"));
    }
    let scale = 1.0 / (params.dim as f64).sqrt();
    let mut x = emb.mat.clone();
    let mut caches = Vec::with_capacity(params.blocks.len());
    for (index, block) in params.blocks.iter().enumerate() {
        let (y, cache) = block_forward_cached(&x, block, scale);
        if !y.is_finite() {
            return Err(EncoderError::NonFinite { block: index });
        }
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

/// Runs the block stack over the embeddings, returning `K x d` features.
pub fn encode(emb: &TokenEmbeddings, params: &EncoderParams) -> Result<Matrix, EncoderError> {
    if emb.mat.cols() != params.dim {
        return Err(EncoderError::ShapeMismatch("embedding width != model dim"));
    }
    let scale = 1.0 / (params.dim as f64).sqrt();
    let mut x = emb.mat.clone();
    for (index, block) in params.blocks.iter().enumerate() {
        x = block_forward(&x, block, scale);
        if !x.is_finite() {
            return Err(EncoderError::NonFinite { block: index });
        }
    }
    Ok(x)
}

/// Sum-of-squares loss over the encoded features.
pub fn feature_loss(features: &Matrix) -> f64 {
    features.data().iter().map(|v| v * v).sum()
}

/// Where a gradient coordinate lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    Proj,
    LenTable,
}

/// The single worst coordinate seen by a gradient check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GradWorst {
    pub target: GradTarget,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of one gradient check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GradReport {
    pub passed: bool,
    pub tol: f64,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradWorst>,
}

/// Test hook: additive corruption of one analytic gradient coordinate,
/// used to prove the check actually detects mismatches.
#[derive(Clone, Copy, Debug)]
pub struct GradCorruption {
    pub target: GradTarget,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

/// Analytic gradients of the sum-of-squares feature loss w.r.t. `proj`
/// and `len_table`.
fn analytic_grads(
    ct: &CompressedTokens,
    params: &EncoderParams,
) -> Result<(Matrix, Matrix), EncoderError> {
    let emb = embed(ct, params)?;
    let (features, caches) = forward_with_caches(&emb, params)?;
    let scale = 1.0 / (params.dim as f64).sqrt();

    let mut grad = features.clone();
    grad.scale(2.0);
    for (block, cache) in params.blocks.iter().zip(&caches).rev() {
        grad = block_backward(&grad, block, cache, scale);
    }

    // Payload matrix, K x patch_dim.
    let mut payloads = Matrix::zeros(ct.tokens.len(), params.patch_dim);
    for (i, token) in ct.tokens.iter().enumerate() {
        for (j, &p) in token.payload.iter().enumerate() {
            payloads.set(i, j, f64::from(p));
        }
    }
    let grad_proj = payloads.matmul_at(&grad);
    let mut grad_len = Matrix::zeros(params.n_max, params.dim);
    for (i, token) in ct.tokens.iter().enumerate() {
        let row = grad.row(i).to_vec();
        let dst = grad_len.row_mut(token.run_length - 1);
        for (d, s) in dst.iter_mut().zip(row) {
            *d += s;
        }
    }
    Ok((grad_proj, grad_len))
}

fn loss_for(ct: &CompressedTokens, params: &EncoderParams) -> Result<f64, EncoderError> {
    let emb = embed(ct, params)?;
    Ok(feature_loss(&encode(&emb, params)?))
}

const FD_STEP: f64 = 1e-4;

fn select_target(params: &mut EncoderParams, target: GradTarget) -> &mut Matrix {
    match target {
        GradTarget::Proj => &mut params.proj,
        GradTarget::LenTable => &mut params.len_table,
    }
}

/// Checks the analytic gradients of the sum-of-squares loss against
/// central finite differences (step 1e-4). A pass means the maximum
/// relative error over every `proj` and `len_table` coordinate is at most
/// `tol`; a mismatch yields a failing report naming the worst coordinate.
pub fn grad_check(
    ct: &CompressedTokens,
    params: &EncoderParams,
    tol: f64,
) -> Result<GradReport, EncoderError> {
    grad_check_with_corruption(ct, params, tol, None)
}

pub fn grad_check_with_corruption(
    ct: &CompressedTokens,
    params: &EncoderParams,
    tol: f64,
    corruption: Option<GradCorruption>,
) -> Result<GradReport, EncoderError> {
    if ct.tokens.len() > 32 || params.dim > 16 {
        return Err(EncoderError::InstanceTooLarge {
            tokens: ct.tokens.len(),
            d: params.dim,
        });
    }
    let (mut grad_proj, mut grad_len) = analytic_grads(ct, params)?;
    if let Some(c) = corruption {
        let m = match c.target {
            GradTarget::Proj => &mut grad_proj,
            GradTarget::LenTable => &mut grad_len,
        };
        let v = m.get(c.row, c.col);
        m.set(c.row, c.col, v + c.delta);
    }

    let mut report = GradReport {
        passed: true,
        tol,
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut scratch = params.clone();
    let check = |target: GradTarget,
                     analytic: &Matrix,
                     scratch: &mut EncoderParams,
                     report: &mut GradReport|
     -> Result<(), EncoderError> {
        for i in 0..analytic.rows() {
            for j in 0..analytic.cols() {
                let original = select_target(scratch, target).get(i, j);
                select_target(scratch, target).set(i, j, original + FD_STEP);
                let plus = loss_for(ct, scratch)?;
                select_target(scratch, target).set(i, j, original - FD_STEP);
                let minus = loss_for(ct, scratch)?;
                select_target(scratch, target).set(i, j, original);

                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let a = analytic.get(i, j);
                let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                report.checked += 1;
                if rel_err > report.max_rel_err {
                    report.max_rel_err = rel_err;
                    report.worst = Some(GradWorst {
                        target,
                        row: i,
                        col: j,
                        analytic: a,
                        numeric,
                        rel_err,
                    });
                }
            }
        }
        Ok(())
    };
    check(GradTarget::Proj, &grad_proj, &mut scratch, &mut report)?;
    check(GradTarget::LenTable, &grad_len, &mut scratch, &mut report)?;
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}

/// Wall-clock comparison of the forward pass at two sequence lengths.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ForwardTiming {
    pub k_full: usize,
    pub k_comp: usize,
    pub repeats: usize,
    pub mean_full_ms: f64,
    pub mean_comp_ms: f64,
    pub median_full_ms: f64,
    pub median_comp_ms: f64,
    /// `median_full / median_comp`.
    pub speedup: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn time_forward(params: &EncoderParams, k: usize, repeats: usize) -> Result<Vec<f64>, EncoderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE);
    let mut input = Matrix::zeros(k, params.dim);
    input.fill_uniform(&mut rng, -1.0, 1.0);
    let emb = TokenEmbeddings { mat: input };
    // One warmup pass outside the timed region.
    let _ = encode(&emb, params)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = encode(&emb, params)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(&out);
    }
    Ok(times)
}

/// Times the forward pass on a full token stream against a compressed one
/// of the same width, median over `repeats`.
pub fn bench_forward(
    params: &EncoderParams,
    k_full: usize,
    k_comp: usize,
    repeats: usize,
) -> Result<ForwardTiming, EncoderError> {
    if repeats == 0 {
        return Err(EncoderError::ZeroRepeats);
    }
    if k_comp > k_full {
        return Err(EncoderError::BenchSizes { k_full, k_comp });
    }
    if k_full == 0 || k_comp == 0 {
        return Err(EncoderError::ZeroDim("bench token count"));
    }
    let full = time_forward(params, k_full, repeats)?;
    let comp = time_forward(params, k_comp, repeats)?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let median_full_ms = median(full.clone());
    let median_comp_ms = median(comp.clone());
    Ok(ForwardTiming {
        k_full,
        k_comp,
        repeats,
        mean_full_ms: mean(&full),
        mean_comp_ms: mean(&comp),
        median_full_ms,
        median_comp_ms,
        speedup: median_full_ms / median_comp_ms,
    })
}
