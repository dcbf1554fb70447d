//! `moc` command line: compression runs, forward-pass benchmarks, episode
//! evaluation batches and gradient checks.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or format problem, 3 verification
//! failure.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use moc_core::encoder;
use moc_core::frames;
use moc_core::moc;
use moc_core::prompt::{build_prompt, token_layout, PlacementMode};
use moc_core::sim::{run_episode, EpisodeResult, TaskKind};

use report::{Report, ReportRow};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Debug)]
enum CliError {
    Io(String),
    Verify(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Verify(m) => m,
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Parser)]
#[command(name = "moc", version, about = "Multi-observation compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress an FSQ frame sequence into a token stream.
    Compress(CompressArgs),
    /// Run episodes and benchmark encoder forward time, full vs compressed.
    Bench(BenchArgs),
    /// Run episode batches and report success rates.
    Sim(SimArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum NormArg {
    Linf,
    L2mean,
}

impl From<NormArg> for moc::Norm {
    fn from(value: NormArg) -> Self {
        match value {
            NormArg::Linf => moc::Norm::Linf,
            NormArg::L2mean => moc::Norm::L2Mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Rearrange,
    Reasoning,
    Constraint,
    All,
}

impl TaskArg {
    fn kinds(self) -> Vec<TaskKind> {
        match self {
            TaskArg::Rearrange => vec![TaskKind::Rearrange],
            TaskArg::Reasoning => vec![TaskKind::Reasoning],
            TaskArg::Constraint => vec![TaskKind::Constraint],
            TaskArg::All => TaskKind::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct CompressArgs {
    /// Input FSQ file.
    #[arg(long)]
    input: PathBuf,
    /// Static-patch threshold.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Patch edge in pixels.
    #[arg(long, default_value_t = 16)]
    patch: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Linf)]
    norm: NormArg,
    /// Output JSON token file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Episodes per task kind.
    #[arg(long, default_value_t = 8)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timing repeats per measurement (median reported).
    #[arg(long, default_value_t = 21)]
    repeats: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long = "max-steps", default_value_t = 24)]
    max_steps: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Encoder width.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Encoder depth.
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// Output CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON dump of the raw per-kind timing pairs.
    #[arg(long = "timing-json")]
    timing_json: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Episodes per task kind.
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-steps", default_value_t = 24)]
    max_steps: usize,
    /// Output CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Optional directory for per-episode JSON + FSQ dumps.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Maximum relative error accepted.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Number of random instances.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Optional JSON report path (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test hook: corrupt one analytic coordinate to prove detection.
    #[arg(long, hide = true, default_value_t = false)]
    inject_corruption: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Compress(args) => cmd_compress(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Sim(args) => cmd_sim(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_compress(args: &CompressArgs) -> Result<(), CliError> {
    let sequence = frames::load_fsq(&args.input).map_err(io_err)?;
    let patches = frames::to_patches(&sequence, args.patch).map_err(io_err)?;
    let tokens = moc::compress(&patches, args.epsilon, args.norm.into()).map_err(io_err)?;
    let stats = moc::stats(&tokens);
    let json = serde_json::to_string(&tokens).map_err(io_err)?;
    std::fs::write(&args.out, json).map_err(|e| io_err(format!("{}: {e}", args.out.display())))?;
    println!(
        "kept {} of {} tokens, reduction {:.3}",
        stats.kept_tokens, stats.original_tokens, stats.reduction_fraction
    );
    Ok(())
}

/// Episodes for one kind, seeded `seed + index`, fanned out over workers.
fn episode_batch(
    kind: TaskKind,
    seed: u64,
    episodes: usize,
    noise: f64,
    max_steps: usize,
) -> Result<Vec<EpisodeResult>, CliError> {
    (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(kind, seed + i as u64, noise, max_steps).map_err(io_err))
        .collect()
}

struct BatchSummary {
    episodes: usize,
    success_rate: f64,
    mean_steps: f64,
    mean_reduction: f64,
    mean_full_tokens: f64,
    mean_kept_tokens: f64,
}

fn summarize(
    results: &[EpisodeResult],
    epsilon: f64,
) -> Result<(BatchSummary, Vec<moc::CompressedTokens>), CliError> {
    let mut succeeded = 0usize;
    let mut steps = 0usize;
    let mut reduction = 0.0f64;
    let mut full = 0.0f64;
    let mut kept = 0.0f64;
    let mut streams = Vec::with_capacity(results.len());
    for r in results {
        let patches = frames::to_patches(&r.frames, 16).map_err(io_err)?;
        let tokens = moc::compress(&patches, epsilon, moc::Norm::Linf).map_err(io_err)?;
        let stats = moc::stats(&tokens);
        succeeded += usize::from(r.success);
        steps += r.steps;
        reduction += stats.reduction_fraction;
        full += stats.original_tokens as f64;
        kept += stats.kept_tokens as f64;
        streams.push(tokens);
    }
    let n = results.len().max(1) as f64;
    Ok((
        BatchSummary {
            episodes: results.len(),
            success_rate: succeeded as f64 / n,
            mean_steps: steps as f64 / n,
            mean_reduction: reduction / n,
            mean_full_tokens: full / n,
            mean_kept_tokens: kept / n,
        },
        streams,
    ))
}

/// Image-token totals (kept, full) for one episode's prompt record. Both
/// placement modes are laid out; they must agree on the totals since the
/// mode only moves runs around.
fn layout_totals(
    result: &EpisodeResult,
    tokens: &moc::CompressedTokens,
) -> Result<(usize, usize), CliError> {
    let slots: Vec<usize> = (0..result.frames.n()).collect();
    let detections = vec![Vec::new(); slots.len()];
    let kept_per_frame = tokens.tokens_per_frame();
    let full_per_frame = vec![tokens.dims.gh * tokens.dims.gw; slots.len()];

    let collection = build_prompt(
        &result.instruction,
        &slots,
        &[],
        &result.answers,
        &detections,
        PlacementMode::Collection,
    )
    .map_err(io_err)?;
    let interleaved = build_prompt(
        &result.instruction,
        &slots,
        &[],
        &result.answers,
        &detections,
        PlacementMode::Interleaved,
    )
    .map_err(io_err)?;

    let kept_collection = token_layout(&collection, &kept_per_frame)
        .map_err(io_err)?
        .image_token_total();
    let kept_interleaved = token_layout(&interleaved, &kept_per_frame)
        .map_err(io_err)?
        .image_token_total();
    if kept_collection != kept_interleaved {
        return Err(CliError::Verify(format!(
            "placement modes disagree on image token totals: {kept_collection} vs {kept_interleaved}"
        )));
    }
    let full_total = token_layout(&collection, &full_per_frame)
        .map_err(io_err)?
        .image_token_total();
    Ok((kept_collection, full_total))
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let mut report = Report::new();
    let mut timings: Vec<(String, encoder::ForwardTiming)> = Vec::new();
    if args.episodes > 0 {
        let params = encoder::init_params(args.dim, 64, (4, 4), 16 * 16 * 3, args.blocks, args.seed)
            .map_err(io_err)?;
        for kind in TaskKind::ALL {
            let results = episode_batch(kind, args.seed, args.episodes, args.noise, args.max_steps)?;
            let (summary, streams) = summarize(&results, args.epsilon)?;
            for (r, t) in results.iter().zip(&streams) {
                let (kept_total, full_total) = layout_totals(r, t)?;
                if kept_total != t.kept_count()
                    || full_total != t.dims.n * t.dims.gh * t.dims.gw
                {
                    return Err(CliError::Verify(
                        "layout totals disagree with the token stream".into(),
                    ));
                }
            }
            let k_full = summary.mean_full_tokens.round().max(1.0) as usize;
            let k_comp = summary.mean_kept_tokens.round().max(1.0) as usize;
            let timing =
                encoder::bench_forward(&params, k_full, k_comp, args.repeats).map_err(io_err)?;
            report.push(ReportRow {
                task: kind.name().to_string(),
                episodes: summary.episodes,
                success_rate: summary.success_rate,
                mean_steps: summary.mean_steps,
                token_reduction: summary.mean_reduction,
                timing: Some((timing.median_full_ms, timing.median_comp_ms, timing.speedup)),
            });
            timings.push((kind.name().to_string(), timing));
        }
    }
    report.write_csv(&args.out).map_err(io_err)?;
    if let Some(path) = &args.timing_json {
        let json: serde_json::Map<String, serde_json::Value> = timings
            .iter()
            .map(|(kind, t)| (kind.clone(), serde_json::to_value(t).expect("timing serializes")))
            .collect();
        let text = serde_json::to_string_pretty(&json).map_err(io_err)?;
        std::fs::write(path, text).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_sim(args: &SimArgs) -> Result<(), CliError> {
    let mut report = Report::new();
    for kind in args.task.kinds() {
        let results = episode_batch(kind, args.seed, args.episodes, args.noise, args.max_steps)?;
        if let Some(dir) = &args.dump {
            std::fs::create_dir_all(dir).map_err(|e| io_err(format!("{}: {e}", dir.display())))?;
            for r in &results {
                let base = dir.join(format!("{}_{:05}", kind.name(), r.seed));
                r.save(&base).map_err(io_err)?;
            }
        }
        let (summary, _) = summarize(&results, 1e-5)?;
        report.push(ReportRow {
            task: kind.name().to_string(),
            episodes: summary.episodes,
            success_rate: summary.success_rate,
            mean_steps: summary.mean_steps,
            token_reduction: summary.mean_reduction,
            timing: None,
        });
    }
    report.write_csv(&args.out).map_err(io_err)?;
    print!("{}", report.to_csv());
    Ok(())
}

/// Small random token stream with mixed run lengths plus matching encoder
/// parameters, seeded per instance.
fn gradcheck_instance(seed: u64) -> (moc_core::CompressedTokens, moc_core::EncoderParams) {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (n, gh, gw, p) = (3usize, 2usize, 2usize, 2usize);
    let mut frames_data: Vec<Vec<f32>> = Vec::new();
    for f in 0..n {
        let mut frame = Vec::new();
        for cell in 0..gh * gw {
            if f > 0 && rng.random_range(0..2) == 0 {
                let prev = &frames_data[f - 1];
                frame.extend_from_slice(&prev[cell * p * p..(cell + 1) * p * p]);
            } else {
                frame.extend((0..p * p).map(|_| rng.random_range(0.0..=1.0f32)));
            }
        }
        frames_data.push(frame);
    }
    let ps = frames::PatchSequence::from_raw(n, gh, gw, p, 1, frames_data.concat())
        .expect("synthetic grid dims are consistent");
    let ct = moc::compress(&ps, 1e-5, moc::Norm::Linf).expect("epsilon is valid");
    let params = encoder::init_params(8, 4, (gh, gw), p * p, 2, seed).expect("dims are nonzero");
    (ct, params)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    use moc_core::encoder::{grad_check_with_corruption, GradCorruption, GradTarget};

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..args.seeds {
        let (ct, params) = gradcheck_instance(seed);
        let corruption = (args.inject_corruption && seed == 0).then_some(GradCorruption {
            target: GradTarget::Proj,
            row: 0,
            col: 0,
            delta: 0.5,
        });
        let report =
            grad_check_with_corruption(&ct, &params, args.tol, corruption).map_err(io_err)?;
        if !report.passed {
            failures.push(seed);
        }
        reports.push(serde_json::json!({ "seed": seed, "report": report }));
    }
    let summary = serde_json::json!({
        "tol": args.tol,
        "seeds": args.seeds,
        "failing_seeds": failures,
        "passed": failures.is_empty(),
        "checks": reports,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(io_err)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| io_err(format!("{}: {e}", path.display())))?
        }
        None => println!("{text}"),
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!(
            "gradient check failed for seeds {failures:?}"
        )))
    }
}
