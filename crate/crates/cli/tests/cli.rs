use std::path::{Path, PathBuf};
use std::process::Command;

use grasplab::env::TraceRecord;
use grasplab_cli::config::{strip_comments, RunConfig};
use grasplab_cli::render::{active_contacts, parse_trace};

const SMALL: &str = r#"{
  // tiny budget so every command runs in seconds
  "seed": 5,
  "dataset": { "n_pregrasps": 10 },
  "episode": { "horizon": 40 },
  "trpo": { "iterations": 2, "batch_timesteps": 80 },
  /* frames every 5 steps */
  "render": { "every": 5 }
}
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grasplab"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let o = bin().args(args).output().unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    dataset: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.json");
    std::fs::write(&config, SMALL).unwrap();
    let out = root.join("data");
    let (code, _, err) = run(&["dataset", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    Fixture { _dir: dir, dataset: out.join("dataset.json"), root, config }
}

#[test]
fn comments_are_stripped_outside_strings() {
    let text = "{\n  \"a\": \"x // not a comment /* nor this */\", // trailing\n  /* block\n  */ \"b\": 2\n}";
    let v: serde_json::Value = serde_json::from_str(&strip_comments(text)).unwrap();
    assert_eq!(v["a"], "x // not a comment /* nor this */");
    assert_eq!(v["b"], 2);
    assert_eq!(strip_comments(text).lines().count(), text.lines().count());
    assert_eq!(strip_comments(r#""esc \" // still string""#), r#""esc \" // still string""#);
}

#[test]
fn every_default_survives_a_round_trip() {
    let d = RunConfig::default();
    let back = RunConfig::parse(&serde_json::to_string(&d).unwrap()).unwrap();
    assert_eq!(back, d);
    assert_eq!(RunConfig::parse("{}").unwrap(), d);
    d.clone().resolve().validate().unwrap();
}

#[test]
fn dataset_is_reproducible_and_config_is_copied_verbatim() {
    let f = fixture();
    let again = f.root.join("again");
    assert_eq!(run(&["dataset", "--config", s(&f.config), "--out", s(&again)]).0, 0);
    assert_eq!(std::fs::read(&f.dataset).unwrap(), std::fs::read(again.join("dataset.json")).unwrap());
    assert_eq!(std::fs::read_to_string(again.join("config.json")).unwrap(), SMALL);
    let file: grasplab::scene::DatasetFile = serde_json::from_slice(&std::fs::read(&f.dataset).unwrap()).unwrap();
    assert_eq!(file.datasets.len(), 5);
    assert!(file.datasets.iter().all(|d| d.pregrasps.len() == 10));

    let other = f.root.join("other");
    assert_eq!(run(&["dataset", "--config", s(&f.config), "--seed", "6", "--out", s(&other)]).0, 0);
    assert_ne!(std::fs::read(&f.dataset).unwrap(), std::fs::read(other.join("dataset.json")).unwrap());
}

#[test]
fn validation_errors_name_the_field_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{ "dataset": { "split_ratio": 1.5 } }"#).unwrap();
    let (code, _, err) = run(&["dataset", "--config", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 1);
    assert!(err.contains("dataset.split_ratio"), "{err}");

    std::fs::write(&bad, "{\n  \"episode\": { \"horizn\": 5 }\n}").unwrap();
    let (code, _, err) = run(&["dataset", "--config", s(&bad)]);
    assert_eq!(code, 1);
    assert!(err.contains("horizn") && err.contains("line 2"), "{err}");

    let (code, _, _) = run(&["dataset", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(code, 2);
    assert_eq!(run(&["no-such-command"]).0, 1);
}

#[test]
fn train_smoke_run_resume_and_mismatch() {
    let f = fixture();
    let before = std::fs::read(&f.dataset).unwrap();
    let out = f.root.join("train");
    let (code, _, err) = run(&["train", "--config", s(&f.config), "--dataset", s(&f.dataset), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let ckpts: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("checkpoint_"))
        .collect();
    assert_eq!(ckpts, vec!["checkpoint_00002.json"]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("iteration,timesteps,mean_return,success_rate,"));

    let ck = out.join("checkpoint_00002.json");
    let (code, _, err) =
        run(&["train", "--config", s(&f.config), "--dataset", s(&f.dataset), "--out", s(&out), "--resume", s(&ck)]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let its: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(its, vec!["1", "2", "3", "4"]);
    assert!(out.join("checkpoint_00004.json").exists());

    let no_contacts = f.root.join("nc.json");
    std::fs::write(&no_contacts, SMALL.replace("\"horizon\": 40", "\"horizon\": 40, \"contact_feedback\": false")).unwrap();
    let (code, _, err) = run(&["train", "--config", s(&no_contacts), "--dataset", s(&f.dataset), "--out", s(&out), "--resume", s(&ck)]);
    assert_eq!(code, 1);
    assert!(err.contains("contact_feedback"), "{err}");

    let (code, _, _) = run(&["train", "--config", s(&f.config), "--dataset", s(&f.dataset), "--object", "hammer", "--out", s(&out)]);
    assert_eq!(code, 1);
    assert_eq!(std::fs::read(&f.dataset).unwrap(), before);
}

#[test]
fn training_log_is_bit_identical_across_runs() {
    let f = fixture();
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let out = f.root.join(name);
        assert_eq!(run(&["train", "--config", s(&f.config), "--dataset", s(&f.dataset), "--out", s(&out)]).0, 0);
        logs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn baseline_fills_only_the_baseline_columns() {
    let f = fixture();
    let out = f.root.join("base");
    let (code, stdout, err) = run(&["baseline", "--config", s(&f.config), "--dataset", s(&f.dataset), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("P>0.5"));
    let csv = std::fs::read_to_string(out.join("baseline.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "object,P>0.5,CT,¬C,C");
    for l in lines {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), 5);
        for v in &cells[1..3] {
            let p: f64 = v.parse().unwrap();
            assert!((0.0..=100.0).contains(&p));
        }
        assert_eq!(&cells[3..], &["", ""]);
    }
    let raw = std::fs::read_to_string(out.join("baseline_raw.jsonl")).unwrap();
    // 5 objects × 3 test pre-grasps × 2 baselines.
    assert_eq!(raw.lines().count(), 30);
}

#[test]
fn eval_of_an_untrained_checkpoint_and_rendering() {
    let f = fixture();
    let train_out = f.root.join("t0");
    let zero = f.root.join("zero.json");
    std::fs::write(&zero, SMALL.replace("\"iterations\": 2", "\"iterations\": 0")).unwrap();
    assert_eq!(run(&["train", "--config", s(&zero), "--dataset", s(&f.dataset), "--out", s(&train_out)]).0, 0);
    let ck = train_out.join("checkpoint_00000.json");
    assert!(ck.exists());

    let out = f.root.join("eval");
    let (code, _, err) = run(&[
        "eval", "--config", s(&f.config), "--dataset", s(&f.dataset), "--checkpoint", s(&ck), "--object", "disk", "--traces",
        "--out", s(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "disk");
    let p: f64 = row[4].parse().unwrap();
    assert!((0.0..=100.0).contains(&p));

    let traces: Vec<PathBuf> = std::fs::read_dir(out.join("traces")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(traces.len(), 3);
    let trace = &traces[0];
    let records: Vec<TraceRecord> = parse_trace(&std::fs::read_to_string(trace).unwrap()).unwrap();
    assert_eq!(records.len(), 40);

    let frames_out = f.root.join("frames");
    let (code, _, err) = run(&["render", "--config", s(&f.config), "--trace", s(trace), "--every", "3", "--out", s(&frames_out)]);
    assert_eq!(code, 0, "{err}");
    let mut frames: Vec<PathBuf> = std::fs::read_dir(frames_out.join("frames")).unwrap().map(|e| e.unwrap().path()).collect();
    frames.sort();
    assert_eq!(frames.len(), 40usize.div_ceil(3));
    for (frame, record) in frames.iter().zip(records.iter().step_by(3)) {
        let svg = std::fs::read_to_string(frame).unwrap();
        let arrows = svg.matches("class=\"force\"").count();
        let sensed = record.contact_forces.iter().any(|f| *f != 0.0);
        assert_eq!(arrows > 0, sensed, "step {}", record.step);
        assert_eq!(arrows, active_contacts(record).len());
        if arrows > 0 {
            assert!(record.n_contacts > 0);
        }
    }
    // Same input, same bytes.
    let again = f.root.join("frames2");
    assert_eq!(run(&["render", "--config", s(&f.config), "--trace", s(trace), "--every", "3", "--out", s(&again)]).0, 0);
    assert_eq!(std::fs::read(&frames[0]).unwrap(), std::fs::read(again.join("frames").join(frames[0].file_name().unwrap())).unwrap());

    // A checkpoint with the wrong observation size is rejected.
    let nc = f.root.join("nc.json");
    std::fs::write(&nc, SMALL.replace("\"horizon\": 40", "\"horizon\": 40, \"contact_feedback\": false")).unwrap();
    let (code, _, _) = run(&["eval", "--config", s(&nc), "--dataset", s(&f.dataset), "--checkpoint", s(&ck), "--out", s(&out)]);
    assert_eq!(code, 1);
}

#[test]
fn render_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let (code, stdout, _) = run(&["render", "--trace", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 0);
    assert!(stdout.contains("wrote 0 frames"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "\n{\"step\": 1}\n").unwrap();
    let (code, _, err) = run(&["render", "--trace", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 1);
    assert!(err.contains("trace line 2"), "{err}");
}

#[test]
fn experiment_command_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.json");
    std::fs::write(
        &cfg,
        r#"{
  "objects": [ { "kind": "disk" } ],
  "episode": { "horizon": 10 },
  "trpo": { "iterations": 1, "batch_timesteps": 20 },
  "experiment": { "n_pregrasps": 4, "seeds": [0], "physics_score": { "trials": 3 } }
}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let (code, stdout, err) = run(&["experiment", "--config", s(&cfg), "--category", "multi-pregrasp-noise", "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("C,N"));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "object,P>0.5,CT,\"¬C,¬N\",\"C,¬N\",\"¬C,N\",\"C,N\"");
    assert!(out.join("results_raw.jsonl").exists() && out.join("results.txt").exists());
}
