mod common;

use std::io::{BufRead, BufReader};
use std::process::Stdio;

use common::*;
use serde_json::{json, Value};

#[test]
fn help_and_bad_flags() {
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("stage1"));

    let o = bin().args(["ingest", "--frobnicate"]).output().unwrap();
    assert_eq!(code(&o), 1);

    let dir = tempfile::tempdir().unwrap();
    let o = run(&dir.path().join("run"), &["ingest", "--in", "/nonexistent/raw.jsonl"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn ingest_reports_every_rejection() {
    let f = Fixture::new(0);
    let bench_dir = f.dir.path().join("bench");
    std::fs::create_dir(&bench_dir).unwrap();
    let bench = "compute the sum of the first twenty prime numbers and explain each step of your method";
    write_lines(&bench_dir.join("math.jsonl"), &[json!({"prompt": bench}).to_string()]);

    let mut contaminated = record(3);
    contaminated["conversation"][0]["content"] = json!(format!("please {bench} thanks"));
    let mut null_chosen = record(4);
    null_chosen["chosen"] = Value::Null;
    let lines = vec![
        record(0).to_string(),
        record(1).to_string(),
        record(0).to_string(),
        "{not json".to_string(),
        null_chosen.to_string(),
        contaminated.to_string(),
    ];
    write_lines(&f.input, &lines);
    let bench_arg = bench_dir.to_str().unwrap();
    f.ok(&["ingest", "--in", f.input.to_str().unwrap(), "--benchmarks", bench_arg]);

    let rej = f.lines("reports/rejections.jsonl");
    let mut reasons: Vec<&str> = rej.iter().map(|r| r["reason"].as_str().unwrap()).collect();
    reasons.sort();
    assert_eq!(reasons, ["contaminated", "duplicate", "malformed", "null-content"]);
    let hit = rej.iter().find(|r| r["reason"] == "contaminated").unwrap();
    assert_eq!(hit["matched_window"].as_str().unwrap().split(' ').count(), 13);

    let m: Value = serde_json::from_str(&std::fs::read_to_string(f.path("manifests/ingest-0000.json")).unwrap()).unwrap();
    assert_eq!(m["notes"]["read"], 6);
    assert_eq!(m["notes"]["accepted"], 2);
    let total: u64 = m["counts_after"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 2);

    // Re-ingesting the same file adds nothing.
    f.ok(&["ingest", "--in", f.input.to_str().unwrap(), "--benchmarks", bench_arg]);
    let s = f.summary();
    let total: u64 = s["pools"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 2);
}

#[test]
fn dry_run_touches_nothing() {
    let f = Fixture::new(20);
    let out = f.ok(&["--dry-run", "ingest", "--in", f.input.to_str().unwrap()]);
    assert!(out.contains("ingest"));
    assert!(!f.rd.exists());
    f.ok(&["--dry-run", "stage1", "--iterations", "2", "--stub-judges"]);
    assert!(!f.rd.exists());
}

#[test]
fn config_digest_and_lock_guard_the_run() {
    let f = Fixture::new(50);
    f.ingest();

    let o = bin()
        .arg("--run-dir")
        .arg(&f.rd)
        .args(["--config", f.config.to_str().unwrap(), "--seed", "99", "embed"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    // Run-control keys may change freely.
    std::fs::write(&f.config, format!("{SMALL_CONFIG}iterations = 4\nbind = \"127.0.0.1:1\"\n")).unwrap();
    f.ok(&["embed"]);

    std::fs::write(f.path(".lock"), "1").unwrap();
    let o = f.run(&["embed"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lock"), "{}", stderr(&o));
    std::fs::remove_file(f.path(".lock")).unwrap();
}

#[test]
fn full_pipeline_with_stub_judges() {
    let f = Fixture::new(300);
    f.ingest();
    f.ok(&["embed"]);
    let o = f.run(&["stage1", "--iterations", "1"]);
    assert_eq!(code(&o), 1, "no judges configured");

    f.ok(&["stage1", "--iterations", "2", "--stub-judges"]);
    assert!(f.path("checkpoints/best.ckpt").exists());
    assert!(f.path("checkpoints/stage1-iter02.ckpt").exists());
    let s = f.summary();
    assert_eq!(s["stage1_iteration"], 2);
    assert!(s["pools"]["gold"].as_u64().unwrap() >= 10);

    // Asking for an iteration count already reached changes nothing.
    let pools = std::fs::read(f.path("ledgers/pools.jsonl")).unwrap();
    let out = f.ok(&["stage1", "--iterations", "2", "--stub-judges"]);
    assert!(out.contains("already at iteration 2"));
    assert_eq!(std::fs::read(f.path("ledgers/pools.jsonl")).unwrap(), pools);

    f.ok(&["stage2", "--stub-judges"]);
    assert!(f.path("checkpoints/gold.ckpt").exists());
    let s = f.summary();
    assert_eq!(s["pools"].get("unverified").and_then(Value::as_u64).unwrap_or(0), 0);
    assert!(s["stage2"]["input"].as_u64().unwrap() > 0);

    f.ok(&["recycle"]);
    f.ok(&["train", "--name", "final", "--include-recycled"]);
    assert!(f.path("checkpoints/final.ckpt").exists());

    let set = f.eval_set();
    let out = f.ok(&["eval", "--model", "final", "--set", set.to_str().unwrap(), "--emit-curves"]);
    assert!(!out.is_empty());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(f.path("reports/eval-heldout.json")).unwrap()).unwrap();
    assert!(report.is_object());
    let curve = std::fs::read_to_string(f.path("reports/curve-heldout.tsv")).unwrap();
    assert_eq!(curve.lines().next(), Some("n\thit_rate"));
    assert!(curve.lines().count() > 1);

    let bench_dir = f.dir.path().join("bench");
    std::fs::create_dir(&bench_dir).unwrap();
    write_lines(&bench_dir.join("b.jsonl"), &[json!({"prompt": "anything"}).to_string()]);
    let o = f.run(&["decontaminate", "--benchmarks", bench_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "decontamination after curation started");

    let m = std::fs::read_dir(f.path("manifests")).unwrap().count();
    assert!(m >= 7, "{m} manifests");
}

#[test]
fn decontaminate_before_curation_rebuilds_the_store() {
    let f = Fixture::new(30);
    f.ingest();
    let bench_dir = f.dir.path().join("bench");
    std::fs::create_dir(&bench_dir).unwrap();
    // "question 3 about rust" is short, so the whole prompt is one key.
    write_lines(&bench_dir.join("b.jsonl"), &[json!({"prompt": "Question 3 about rust"}).to_string()]);
    f.ok(&["decontaminate", "--benchmarks", bench_dir.to_str().unwrap()]);
    let s = f.summary();
    let total: u64 = s["pools"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 29);
    let rej = f.lines("reports/rejections.jsonl");
    assert_eq!(rej.iter().filter(|r| r["reason"] == "contaminated").count(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serve_takes_the_human_queue() {
    let f = Fixture::new(200);
    f.ingest();
    f.ok(&["embed"]);
    f.ok(&["stage1", "--iterations", "0", "--stub-judges", "--queue-humans"]);
    let queued = f.lines("queues/human.jsonl").len();
    assert!(queued >= 10, "{queued} queued");
    assert_eq!(f.summary()["human_verdicts"], 0);

    let mut child = bin()
        .arg("--run-dir")
        .arg(&f.rd)
        .args(["--config", f.config.to_str().unwrap(), "serve", "--bind", "127.0.0.1:0"])
        .env("PREFCURATE_SERVE_TOKEN", "tok")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    assert!(line.starts_with(&format!("serving {queued} tasks on ")), "{line}");
    let base = line.trim().rsplit(' ').next().unwrap().to_string();

    // A second writer is locked out while the server runs.
    let o = f.run(&["embed"]);
    assert_eq!(code(&o), 1);

    let client = reqwest::Client::new();
    let anon = client.get(format!("{base}/api/v1/stats")).send().await.unwrap();
    assert_eq!(anon.status(), 401);
    let mut done = 0;
    loop {
        let r = client
            .get(format!("{base}/api/v1/tasks/next?annotator=ann"))
            .bearer_auth("tok")
            .send()
            .await
            .unwrap();
        if r.status() == 204 {
            break;
        }
        assert_eq!(r.status(), 200);
        let task: Value = r.json().await.unwrap();
        let r = client
            .post(format!("{base}/api/v1/tasks/{}/verdict", task["task_id"].as_str().unwrap()))
            .bearer_auth("tok")
            .json(&json!({"annotator": "ann", "outcome": "confirm"}))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 201);
        done += 1;
    }
    assert_eq!(done, queued);

    let killed = std::process::Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(!f.path(".lock").exists());

    let s = f.summary();
    assert_eq!(s["human_verdicts"].as_u64().unwrap() as usize, queued);
    assert_eq!(s["human_queue_open"], 0);
    assert_eq!(f.lines("ledgers/audit.jsonl").len(), queued);

    // The verdicts are enough gold for Stage 1 to continue.
    f.ok(&["stage1", "--iterations", "1", "--stub-judges"]);
    assert_eq!(f.summary()["stage1_iteration"], 1);
}
