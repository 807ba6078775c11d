//! Signal handling (finish in-flight work, write a partial marker) and the
//! split → stats chain through the binary.

use std::process::{Command, Stdio};

use procforge_core::hash::content_hash;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_procforge")
}

#[cfg(unix)]
#[test]
fn sigint_finishes_in_flight_jobs_and_writes_marker() {
    let dir = tempfile::tempdir().unwrap();

    // 50 jobs at 200ms scripted latency each: plenty of runway to interrupt
    let mut jobs = Vec::new();
    let mut fixtures = Vec::new();
    for i in 0..50 {
        let body = format!("theorem slow{i} : {i} = {i} := by\n  rfl");
        fixtures.push(serde_json::json!({
            "body_hash": content_hash(&body),
            "latency_ms": 200,
        }));
        jobs.push(serde_json::json!({
            "candidate_id": format!("c{i:02}"),
            "env": "",
            "body": body,
            "timeout_ms": 10_000,
        }));
    }
    let jobs_path = dir.path().join("jobs.jsonl");
    let fixtures_path = dir.path().join("fixtures.jsonl");
    let out_path = dir.path().join("results.jsonl");
    std::fs::write(
        &jobs_path,
        jobs.iter().map(|j| j.to_string()).collect::<Vec<_>>().join("\n") + "\n",
    )
    .unwrap();
    std::fs::write(
        &fixtures_path,
        fixtures.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("\n") + "\n",
    )
    .unwrap();

    let child = Command::new(binary())
        .args([
            "compile",
            "--jobs",
            jobs_path.to_str().unwrap(),
            "--backend",
            "mock",
            "--fixtures",
            fixtures_path.to_str().unwrap(),
            "--workers",
            "2",
            "--out",
            out_path.to_str().unwrap(),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();

    std::thread::sleep(std::time::Duration::from_millis(700));
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGINT);
    }
    let output = child.wait_with_output().unwrap();
    assert!(
        output.status.success(),
        "graceful interrupt should still exit 0; stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    let summary: serde_json::Value =
        serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(summary["partial"], true);

    // the marker exists and the results file is still lossless
    assert!(out_path.with_extension("partial").exists());
    let lines = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(lines.lines().count(), 50, "one result per job regardless");
    // some jobs genuinely ran before the interrupt
    assert!(lines.contains("\"success\""));
    assert!(lines.contains("\"backend_error\""));
}

#[test]
fn split_then_grouped_stats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let mut rows = Vec::new();
    for i in 0..30 {
        let path = if i % 3 == 0 { "Mathlib/Algebra/Basic.lean" } else { "Mathlib/Algebra/Other.lean" };
        rows.push(
            serde_json::json!({
                "id": format!("{path}#{i}"),
                "source_path": path,
                "env": "import Mathlib",
                "statement": format!("theorem t{i} : {i} = {i}"),
                "proof": "by\n  rfl",
                "nl_question": format!("Question {i}?"),
                "nl_answer": format!("Answer {i}."),
            })
            .to_string(),
        );
    }
    std::fs::write(&corpus, rows.join("\n") + "\n").unwrap();

    let splits_dir = dir.path().join("splits");
    let output = Command::new(binary())
        .args([
            "split",
            "--input",
            corpus.to_str().unwrap(),
            "--ratios",
            "0.6,0.2,0.2",
            "--out-dir",
            splits_dir.to_str().unwrap(),
            "--seed",
            "7",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    for name in ["training", "random_test", "basic_test"] {
        assert!(splits_dir.join(format!("{name}.json")).exists());
    }
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(splits_dir.join("basic_test.json")).unwrap(),
    )
    .unwrap();
    let ids = manifest["ids"].as_array().unwrap();
    assert_eq!(ids.len(), 6);
    assert!(ids
        .iter()
        .all(|id| id.as_str().unwrap().contains("Basic.lean")));

    // identical seed, identical manifests
    let rerun_dir = dir.path().join("splits2");
    let output = Command::new(binary())
        .args([
            "split",
            "--input",
            corpus.to_str().unwrap(),
            "--ratios",
            "0.6,0.2,0.2",
            "--out-dir",
            rerun_dir.to_str().unwrap(),
            "--seed",
            "7",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    for name in ["training", "random_test", "basic_test"] {
        assert_eq!(
            std::fs::read(splits_dir.join(format!("{name}.json"))).unwrap(),
            std::fs::read(rerun_dir.join(format!("{name}.json"))).unwrap(),
        );
    }

    let output = Command::new(binary())
        .args([
            "stats",
            "--dataset",
            corpus.to_str().unwrap(),
            "--split-manifests",
            splits_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("training"));
    assert!(stdout.contains("basic_test"));
    let summary: serde_json::Value =
        serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let training_row = rows.iter().find(|r| r["split"] == "training").unwrap();
    assert_eq!(training_row["size"], 18);
}
