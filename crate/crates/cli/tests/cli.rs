//! End-to-end tests of the `feedbench` binary: every subcommand, plus the
//! exit-code contract (0 ok, 2 config, 3 leakage, 4 gateway exhaustion).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use feedbench_core::fixtures;
use feedbench_core::runner;
use feedbench_core::tasks::{build_partition, CaseSet};
use serde_json::json;
use tempfile::TempDir;

fn feedbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feedbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_cases(dir: &Path) -> PathBuf {
    let mut lines = String::new();
    for ds in ["alpha", "beta"] {
        for i in 0..10 {
            let mut case = fixtures::f1_case(&format!("{ds}-{i}"), ds);
            case.query = format!("question {i} of {ds}?");
            case.eval.gold = Some(format!("answer {i} {ds}"));
            lines.push_str(&serde_json::to_string(&case).unwrap());
            lines.push('\n');
        }
    }
    let path = dir.join("cases.jsonl");
    std::fs::write(&path, lines).unwrap();
    path
}

fn write_spec(dir: &Path, name: &str, protocol: &str, out_dir: &str) -> PathBuf {
    let spec = json!({
        "protocol": protocol,
        "partition": {"name": "cli", "datasets": ["alpha", "beta"], "seed": 11},
        "system": {"kind": "bm25-m"},
        "gateway": {"kind": "mock", "replies": {"system": "answer 1 alpha"}},
        "cases": dir.join("cases.jsonl"),
        "output_dir": dir.join(out_dir),
        "workers": 2,
        "seeds": {"shuffle": 5, "action": 7}
    });
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

#[test]
fn run_executes_an_on_policy_spec() {
    let tmp = TempDir::new().unwrap();
    write_cases(tmp.path());
    let spec = write_spec(tmp.path(), "spec.json", "on_policy", "out");

    let out = feedbench(&["run", "--spec", spec.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("overall normalized mean"), "{text}");
    assert!(text.contains("report hash"), "{text}");
    assert!(tmp.path().join("out/report.json").exists());
    assert!(tmp.path().join("out/sessions.jsonl").exists());
    assert!(tmp.path().join("out/manifest.json").exists());
}

#[test]
fn simulate_then_replay_off_policy() {
    let tmp = TempDir::new().unwrap();
    write_cases(tmp.path());
    let mut spec_value: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(write_spec(tmp.path(), "spec.json", "off_policy", "out")).unwrap(),
    )
    .unwrap();
    let log_path = tmp.path().join("generated.jsonl");
    spec_value["feedback_log"] = json!(log_path);
    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, serde_json::to_string_pretty(&spec_value).unwrap()).unwrap();

    let sim = feedbench(&[
        "simulate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        log_path.to_str().unwrap(),
    ]);
    assert_eq!(
        sim.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&sim.stderr)
    );
    assert!(stdout(&sim).contains("sessions"), "{}", stdout(&sim));
    assert!(log_path.exists());

    let run = feedbench(&["run", "--spec", spec.to_str().unwrap()]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout(&run).contains("overall normalized mean"));
}

#[test]
fn evaluate_scores_the_corpus_only_baseline() {
    let tmp = TempDir::new().unwrap();
    write_cases(tmp.path());
    let spec = write_spec(tmp.path(), "spec.json", "on_policy", "out");

    let out = feedbench(&["evaluate", "--spec", spec.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("overall normalized mean"));
    assert!(tmp.path().join("out/report.json").exists());
}

#[test]
fn report_compares_runs_with_z_scores() {
    let tmp = TempDir::new().unwrap();
    write_cases(tmp.path());
    for out_dir in ["out-a", "out-b"] {
        let spec = write_spec(tmp.path(), &format!("{out_dir}.json"), "on_policy", out_dir);
        let run = feedbench(&["run", "--spec", spec.to_str().unwrap()]);
        assert_eq!(
            run.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&run.stderr)
        );
    }

    let a = tmp.path().join("out-a/report.json");
    let b = tmp.path().join("out-b/report.json");
    let out = feedbench(&["report", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("out-a") && text.contains("out-b"), "{text}");
    assert!(text.contains("alpha") && text.contains("beta"), "{text}");
    assert!(text.contains("overall"), "{text}");
    assert!(text.contains("(z "), "{text}");
}

#[test]
fn calibrate_prints_the_action_table() {
    let out = feedbench(&["calibrate"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("like") && text.contains("dislike"), "{text}");
    assert!(text.contains("c_like"), "{text}");
    // ten grid rows, one per satisfaction grade, all in percent
    let rows = text
        .lines()
        .filter(|l| {
            l.trim_start()
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_digit())
        })
        .count();
    assert!(rows >= 10, "{text}");
    assert!(text.contains("15.09"), "{text}");
    assert!(text.contains("binary model"), "{text}");
}

#[test]
fn unparseable_spec_exits_2() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("broken.json");
    std::fs::write(&spec, "{ not json").unwrap();
    let out = feedbench(&["run", "--spec", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn unknown_system_kind_exits_2() {
    let tmp = TempDir::new().unwrap();
    write_cases(tmp.path());
    let spec = write_spec(tmp.path(), "spec.json", "on_policy", "out");
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&spec).unwrap()).unwrap();
    value["system"]["kind"] = json!("holographic");
    std::fs::write(&spec, serde_json::to_string(&value).unwrap()).unwrap();

    let out = feedbench(&["run", "--spec", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn leaked_feedback_log_exits_3() {
    let tmp = TempDir::new().unwrap();
    write_cases(tmp.path());
    let spec_path = write_spec(tmp.path(), "spec.json", "off_policy", "out");

    // find a test-split id by rebuilding the same partition the run will use
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&spec_path).unwrap()).unwrap();
    let log_path = tmp.path().join("leaky.jsonl");
    value["feedback_log"] = json!(log_path);
    std::fs::write(&spec_path, serde_json::to_string(&value).unwrap()).unwrap();
    let spec = runner::load_spec(&spec_path).unwrap();
    let cases = CaseSet::load_jsonl(&spec.cases).unwrap();
    let partition = build_partition(&cases, &spec.partition).unwrap();
    let leaked = fixtures::minimal_session(&partition.test_ids()[0], "alpha");
    std::fs::write(
        &log_path,
        format!("{}\n", serde_json::to_string(&leaked).unwrap()),
    )
    .unwrap();

    let out = feedbench(&["run", "--spec", spec_path.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_report_file_exits_2() {
    let out = feedbench(&["report", "/nonexistent/report.json"]);
    assert_eq!(out.status.code(), Some(2));
}
