#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prefcurate"));
    c.env_remove("PREFCURATE_SERVE_TOKEN").env_remove("RUST_LOG");
    c
}

/// Runs the binary with `--run-dir <rd>` prepended to `args`.
pub fn run(rd: &Path, args: &[&str]) -> Output {
    bin().arg("--run-dir").arg(rd).args(args).output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Asserts success and returns stdout.
pub fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

const TOPICS: [&str; 6] = ["geometry", "cooking", "history", "rust", "tides", "poetry"];

/// A raw record whose stored label is right: the chosen answer uses the
/// "careful" vocabulary the hashing embedder can pick up.
pub fn record(i: usize) -> Value {
    let topic = TOPICS[i % TOPICS.len()];
    json!({
        "conversation": [{"role": "user", "content": format!("question {i} about {topic}")}],
        "chosen": format!("a careful correct sourced answer {i} on {topic}"),
        "rejected": format!("a sloppy wrong vague answer {i} on {topic}"),
        "source": "synthetic",
        "created_at": 1_700_000_000 + i as i64,
        "attributes": {
            "task_category": topic,
            "objectivity": if i.is_multiple_of(2) { "objective" } else { "subjective" },
            "controversiality": (["low", "medium", "high"][i % 3]),
            "desired_attributes": ["correctness"],
            "annotation_guideline": "prefer the correct answer",
        }
    })
}

pub fn write_lines(path: &Path, lines: &[String]) {
    let mut s = lines.join("\n");
    s.push('\n');
    std::fs::write(path, s).unwrap();
}

pub fn write_records(path: &Path, n: usize) {
    let lines: Vec<String> = (0..n).map(|i| record(i).to_string()).collect();
    write_lines(path, &lines);
}

/// A config small enough for a few hundred pairs to clear the gold minimum.
pub const SMALL_CONFIG: &str = "\
seed_fraction = 0.3
seed_human_fraction = 0.5
min_gold = 10
embed_dim = 64
epochs = 3
batch_size = 16
";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub rd: PathBuf,
    pub config: PathBuf,
    pub input: PathBuf,
}

impl Fixture {
    pub fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let rd = dir.path().join("run");
        let config = dir.path().join("run.toml");
        std::fs::write(&config, SMALL_CONFIG).unwrap();
        let input = dir.path().join("raw.jsonl");
        write_records(&input, n);
        Fixture { dir, rd, config, input }
    }

    /// Runs with this fixture's run dir and config.
    pub fn run(&self, args: &[&str]) -> Output {
        bin()
            .arg("--run-dir")
            .arg(&self.rd)
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .expect("binary runs")
    }

    pub fn ok(&self, args: &[&str]) -> String {
        ok(self.run(args))
    }

    pub fn ingest(&self) -> String {
        self.ok(&["ingest", "--in", self.input.to_str().unwrap()])
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.rd.join(rel)
    }

    pub fn lines(&self, rel: &str) -> Vec<Value> {
        let text = std::fs::read_to_string(self.path(rel)).unwrap_or_default();
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }

    /// The JSON summary `report` prints on its last line.
    pub fn summary(&self) -> Value {
        let out = self.ok(&["report"]);
        serde_json::from_str(out.lines().last().unwrap()).unwrap()
    }

    /// Writes a small eval file with pairwise and best-of-N records.
    pub fn eval_set(&self) -> PathBuf {
        let mut lines = Vec::new();
        for i in 0..40 {
            let r = record(10_000 + i);
            lines.push(
                json!({"category": "synthetic", "conversation": r["conversation"], "chosen": r["chosen"], "rejected": r["rejected"]})
                    .to_string(),
            );
        }
        for g in 0..10 {
            let r = record(20_000 + g);
            let mut candidates = vec![json!({"text": r["chosen"], "correct": true})];
            for k in 0..3 {
                candidates.push(json!({"text": format!("a sloppy wrong vague answer {g}-{k}"), "correct": false}));
            }
            lines.push(
                json!({"category": "bon", "prompt_group_id": format!("g{g}"), "conversation": r["conversation"], "candidates": candidates})
                    .to_string(),
            );
        }
        let p = self.dir.path().join("heldout.jsonl");
        write_lines(&p, &lines);
        p
    }
}
