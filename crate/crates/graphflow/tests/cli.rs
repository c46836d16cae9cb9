//! End-to-end checks of the command-line surface: exit codes, byte-level
//! determinism of every artifact, and the failure messages operators see.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphflow::io::read_dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should launch")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "expected success for {:?}\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Short training run so CLI tests stay in the seconds range.
const TINY_TOML: &str = "[train]\nsteps = 6\nbatch = 2\nlog_every = 3\n";

const TWO_NODE_GRAPH: &str = r#"{
  "nodes": [
    {"category": "bed", "style": 1, "modality": "both"},
    {"category": "chair", "style": 0, "modality": "both"}
  ],
  "edges": [[0, 1, "left-of"]]
}"#;

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn gen_data_is_deterministic_and_reports_stats() {
    let dir = tempfile::tempdir().unwrap();
    let a = p(dir.path(), "a.gfsd");
    let b = p(dir.path(), "b.gfsd");
    let c = p(dir.path(), "c.gfsd");

    let out = ok(&["gen-data", "--count", "8", "--seed", "3", "--out", s(&a)]);
    let stats = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stats.contains("scenes"), "stats should mention scene count: {stats}");
    assert!(stats.contains("left/right"), "stats should break edges down by family: {stats}");

    ok(&["gen-data", "--count", "8", "--seed", "3", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "same seed, same bytes");

    ok(&["gen-data", "--count", "8", "--seed", "4", "--out", s(&c)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap(), "different seed, different data");
}

#[test]
fn gen_data_count_zero_writes_a_readable_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "empty.gfsd");
    ok(&["gen-data", "--count", "0", "--out", s(&out)]);
    let ds = read_dataset(&out).unwrap();
    assert!(ds.samples.is_empty());
}

#[test]
fn unknown_config_keys_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "bad.toml");
    let out_file = p(dir.path(), "never.gfsd");
    write(&cfg, "[train]\nstepz = 5\n");

    let out = run(&["gen-data", "--count", "2", "--out", s(&out_file), "--config", s(&cfg)]);
    assert_eq!(code(&out), 1, "config mistakes are usage errors");
    assert!(stderr(&out).contains("stepz"), "message should name the bad key: {}", stderr(&out));
    assert!(!out_file.exists(), "no artifact should appear on a rejected config");
}

#[test]
fn train_without_codec_points_at_pretrain_codec() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "d.gfsd");
    let cfg = p(dir.path(), "t.toml");
    write(&cfg, TINY_TOML);
    ok(&["gen-data", "--count", "2", "--seed", "1", "--out", s(&data)]);

    let out = run(&[
        "train", "--branch", "shape", "--data", s(&data),
        "--out", s(&p(dir.path(), "never.ckpt")), "--config", s(&cfg),
    ]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("pretrain-codec"),
        "error should name the command that fixes it: {}",
        stderr(&out)
    );
}

#[test]
fn sample_render_pipeline_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = p(d, "d.gfsd");
    let cfg = p(d, "t.toml");
    let ckpt = p(d, "layout.ckpt");
    let graph = p(d, "g.json");
    write(&cfg, TINY_TOML);
    write(&graph, TWO_NODE_GRAPH);

    ok(&["gen-data", "--count", "4", "--seed", "1", "--out", s(&data), "--config", s(&cfg)]);
    ok(&["train", "--branch", "layout", "--data", s(&data), "--out", s(&ckpt), "--config", s(&cfg)]);

    let scene1 = p(d, "one.gfas");
    let scene2 = p(d, "two.gfas");
    let sample = |out_path: &Path| {
        ok(&[
            "sample", "--graph", s(&graph), "--layout-ckpt", s(&ckpt),
            "--k", "3", "--seed", "9", "--out", s(out_path),
        ])
    };
    let report = sample(&scene1);
    sample(&scene2);
    assert_eq!(fs::read(&scene1).unwrap(), fs::read(&scene2).unwrap(), "same flags, same scene");
    let text = String::from_utf8_lossy(&report.stdout).into_owned();
    assert!(text.contains("left-of"), "sample should report each requested relation: {text}");
    assert!(text.contains("degenerate-shapes"), "sample should count empty shapes: {text}");

    let svg1 = p(d, "one.svg");
    let svg2 = p(d, "two.svg");
    ok(&["render", "--scene", s(&scene1), "--out", s(&svg1)]);
    ok(&["render", "--scene", s(&scene1), "--out", s(&svg2)]);
    let body = fs::read_to_string(&svg1).unwrap();
    assert_eq!(body, fs::read_to_string(&svg2).unwrap());
    assert!(body.starts_with("<svg"), "render should emit a standalone svg");
    assert!(body.contains("bed") && body.contains("chair"), "nodes should be labelled");
}

#[test]
fn pausing_and_resuming_training_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = p(d, "d.gfsd");
    let cfg = p(d, "t.toml");
    write(&cfg, TINY_TOML);
    ok(&["gen-data", "--count", "4", "--seed", "2", "--out", s(&data), "--config", s(&cfg)]);

    let straight = p(d, "straight.ckpt");
    ok(&["train", "--branch", "layout", "--data", s(&data), "--out", s(&straight), "--config", s(&cfg)]);

    let paused = p(d, "paused.ckpt");
    ok(&[
        "train", "--branch", "layout", "--data", s(&data), "--out", s(&paused),
        "--config", s(&cfg), "--stop-after", "3",
    ]);
    assert_ne!(
        fs::read(&straight).unwrap(),
        fs::read(&paused).unwrap(),
        "the pause point is a genuinely earlier state"
    );
    ok(&[
        "train", "--branch", "layout", "--data", s(&data), "--out", s(&paused),
        "--config", s(&cfg), "--resume", s(&paused),
    ]);
    assert_eq!(
        fs::read(&straight).unwrap(),
        fs::read(&paused).unwrap(),
        "resumed run must land on the same bytes as the uninterrupted one"
    );
}

#[test]
fn checkpoint_branch_tags_are_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = p(d, "d.gfsd");
    let cfg = p(d, "t.toml");
    let ckpt = p(d, "layout.ckpt");
    let graph = p(d, "g.json");
    write(&cfg, TINY_TOML);
    write(&graph, TWO_NODE_GRAPH);
    ok(&["gen-data", "--count", "2", "--seed", "1", "--out", s(&data), "--config", s(&cfg)]);
    ok(&["train", "--branch", "layout", "--data", s(&data), "--out", s(&ckpt), "--config", s(&cfg)]);

    // A layout checkpoint handed to the shape slot is an operator error.
    let out = run(&[
        "sample", "--graph", s(&graph), "--layout-ckpt", s(&ckpt),
        "--shape-ckpt", s(&ckpt), "--out", s(&p(d, "never.gfas")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("checkpoint-branch"), "got: {}", stderr(&out));
}

#[test]
fn config_fingerprint_mismatch_requires_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = p(d, "d.gfsd");
    let cfg = p(d, "t.toml");
    let other = p(d, "other.toml");
    let ckpt = p(d, "layout.ckpt");
    write(&cfg, TINY_TOML);
    write(&other, "[train]\nsteps = 8\nbatch = 2\nlog_every = 4\n");
    ok(&["gen-data", "--count", "2", "--seed", "1", "--out", s(&data), "--config", s(&cfg)]);
    ok(&["train", "--branch", "layout", "--data", s(&data), "--out", s(&ckpt), "--config", s(&cfg)]);

    let resumed = p(d, "resumed.ckpt");
    let out = run(&[
        "train", "--branch", "layout", "--data", s(&data), "--out", s(&resumed),
        "--config", s(&other), "--resume", s(&ckpt),
    ]);
    assert_eq!(code(&out), 2, "silent config drift must not pass");
    assert!(stderr(&out).contains("--force"), "message should offer the override: {}", stderr(&out));

    ok(&[
        "train", "--branch", "layout", "--data", s(&data), "--out", s(&resumed),
        "--config", s(&other), "--resume", s(&ckpt), "--force",
    ]);
}

#[test]
fn oracle_eval_scores_ground_truth_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = p(d, "d.gfsd");
    let tsv = p(d, "report.tsv");
    ok(&["gen-data", "--count", "5", "--seed", "7", "--out", s(&data)]);
    ok(&["eval", "--oracle", "--data", s(&data), "--out", s(&tsv)]);

    let report = fs::read_to_string(&tsv).unwrap();
    let mut rates = 0;
    for line in report.lines() {
        for field in line.split('\t').skip(1) {
            if let Ok(v) = field.parse::<f64>() {
                if line.starts_with("scenes:") {
                    continue;
                }
                assert_eq!(v, 1.0, "oracle data must score perfectly, got {v} in: {line}");
                rates += 1;
            }
        }
    }
    assert!(rates > 0, "report should contain satisfaction rates:\n{report}");
}

#[test]
fn exit_codes_separate_usage_from_internal_errors() {
    // Help and version are successes.
    assert_eq!(code(&run(&["--help"])), 0);
    // Clap-level misuse.
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["gen-data"])), 1, "missing required --out");
    // Domain-level usage error: dataset path that does not exist.
    let out = run(&["eval", "--oracle", "--data", "/no/such/file.gfsd", "--out", "/tmp/x.tsv"]);
    assert_eq!(code(&out), 2, "io failures are runtime, not usage, errors");
    assert!(stderr(&out).contains("/no/such/file.gfsd"), "got: {}", stderr(&out));
}
