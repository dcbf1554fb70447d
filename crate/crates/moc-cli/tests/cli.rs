//! End-to-end tests against the compiled binary: exit codes, the golden
//! report for a pinned seed, and the dump -> compress pipeline.

use std::process::{Command, Output};

use moc_core::frames::{save_fsq, FrameSequence};

fn moc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn sim_report_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let run = moc(&[
        "sim", "--task", "all", "--episodes", "5", "--seed", "7", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    let expected = include_str!("golden/sim_all_e5_s7.csv");
    let written = std::fs::read_to_string(&out).unwrap();
    assert_eq!(written, expected, "CSV deviates from the golden report");
    assert_eq!(stdout(&run), expected);
}

#[test]
fn compress_reports_reduction_for_identical_frames() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("static.fsq");
    let out = dir.path().join("tokens.json");
    let frame: Vec<f32> = (0..32 * 32).map(|i| (i % 7) as f32 / 10.0).collect();
    let data: Vec<f32> = frame.iter().copied().cycle().take(3 * 32 * 32).collect();
    let seq = FrameSequence::new(3, 32, 32, 1, data).unwrap();
    save_fsq(&seq, &input).unwrap();

    let run = moc(&[
        "compress", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    assert!(
        stdout(&run).contains("reduction 0.667"),
        "stdout: {}",
        stdout(&run)
    );
    let tokens: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(tokens["tokens"].as_array().unwrap().len(), 4);
    assert_eq!(tokens["epsilon"], 1e-5);
    assert_eq!(tokens["tokens"][0]["run"], 3);
}

#[test]
fn dump_then_compress_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("episodes");
    let csv = dir.path().join("sim.csv");
    let run = moc(&[
        "sim", "--task", "reasoning", "--episodes", "1", "--seed", "3",
        "--out", csv.to_str().unwrap(),
        "--dump", dump.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let fsq = dump.join("reasoning_00003.fsq");
    assert!(fsq.exists());
    assert!(dump.join("reasoning_00003.json").exists());

    let tokens = dir.path().join("tokens.json");
    let run = moc(&[
        "compress", "--input", fsq.to_str().unwrap(), "--out", tokens.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    assert!(stdout(&run).starts_with("kept "));
}

#[test]
fn bench_emits_timing_columns_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let timing = dir.path().join("timing.json");
    let run = moc(&[
        "bench", "--episodes", "2", "--repeats", "7", "--out", out.to_str().unwrap(),
        "--timing-json", timing.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        let speedup: f64 = fields[7].parse().expect("speedup parses");
        assert!(speedup >= 1.3, "compressed stream not faster: {line}");
    }
    let pairs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&timing).unwrap()).unwrap();
    for kind in ["rearrange", "reasoning", "constraint"] {
        assert!(pairs[kind]["median_full_ms"].as_f64().unwrap() > 0.0);
        assert!(pairs[kind]["k_comp"].as_u64().unwrap() <= pairs[kind]["k_full"].as_u64().unwrap());
    }
}

#[test]
fn bench_with_zero_episodes_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let run = moc(&["bench", "--episodes", "0", "--out", out.to_str().unwrap()]);
    assert!(run.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        text.trim_end(),
        "task,episodes,success_rate,mean_steps,token_reduction,t_full_ms,t_comp_ms,speedup"
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    // 2: missing input file.
    let run = moc(&["compress", "--input", "/nonexistent.fsq", "--out", "/tmp/x.json"]);
    assert_eq!(run.status.code(), Some(2));

    // 2: malformed FSQ payload.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fsq");
    std::fs::write(&bad, b"NOPE").unwrap();
    let run = moc(&[
        "compress", "--input", bad.to_str().unwrap(), "--out",
        dir.path().join("x.json").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));

    // 1: unknown task kind.
    let run = moc(&["sim", "--task", "juggling", "--out", "/tmp/x.csv"]);
    assert_eq!(run.status.code(), Some(1));

    // 1: unknown flag.
    let run = moc(&["bench", "--frobnicate"]);
    assert_eq!(run.status.code(), Some(1));

    // 0: help.
    let run = moc(&["--help"]);
    assert_eq!(run.status.code(), Some(0));
}

#[test]
fn gradcheck_exit_codes() {
    let run = moc(&["gradcheck", "--seeds", "3"]);
    assert_eq!(run.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(report["passed"], true);

    // Injected corruption must be caught: exit 3 with the seed listed.
    let run = moc(&["gradcheck", "--seeds", "3", "--inject-corruption"]);
    assert_eq!(run.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["failing_seeds"][0], 0);
    let worst = &report["checks"][0]["report"]["worst"];
    assert_eq!(worst["target"], "proj");

    // Degenerate tolerance: nothing passes.
    let run = moc(&["gradcheck", "--seeds", "2", "--tol", "0"]);
    assert_eq!(run.status.code(), Some(3));
}
