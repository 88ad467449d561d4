//! End-to-end runs of the `protoflow` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

/// Oracle files come from an independent dense power iteration; the two
/// implementations sum in different orders.
const PAGERANK_TOL: f64 = 1e-9;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn toy() -> String {
    repo("data/toy.jsonl").display().to_string()
}

fn protoflow(args: &[&str]) -> Output {
    protoflow_env(args, None)
}

fn protoflow_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_protoflow"));
    cmd.args(args).env_remove("PROTOFLOW_SEED");
    if let Some(s) = seed {
        cmd.env("PROTOFLOW_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn ranks(text: &str) -> BTreeMap<String, f64> {
    text.lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["vertex"].as_str().unwrap().to_string(), v["value"].as_f64().unwrap())
        })
        .collect()
}

fn assert_close(got: &BTreeMap<String, f64>, want: &BTreeMap<String, f64>) {
    assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
    for (v, x) in want {
        assert!((got[v] - x).abs() <= PAGERANK_TOL, "{v}: {} vs {x}", got[v]);
    }
}

#[test]
fn toy_pagerank_matches_oracle() {
    let dir = TempDir::new().unwrap();
    for (at, oracle) in [("0:0", "toy-pagerank-0_0.jsonl"), ("1:*", "toy-pagerank-1_end.jsonl")] {
        let out = path(&dir, "ranks.jsonl");
        ok(protoflow(&["run", "--stream", &toy(), "--algo", "pagerank", "--at", at, "--iters", "50", "--out", &out]));
        let want = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(oracle)).unwrap();
        assert_close(&ranks(&fs::read_to_string(&out).unwrap()), &ranks(&want));
    }
}

#[test]
fn decreasing_epochs_fail_validation() {
    let dir = TempDir::new().unwrap();
    let stream = path(&dir, "bad.jsonl");
    fs::write(
        &stream,
        "{\"epoch\":1,\"op\":\"add_node\",\"id\":\"a\"}\n{\"epoch\":0,\"op\":\"add_node\",\"id\":\"b\"}\n",
    )
    .unwrap();
    let o = protoflow(&["validate", "--stream", &stream]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("EpochRegression"), "{}", stderr(&o));
    let ok_run = ok(protoflow(&["validate", "--stream", &toy()]));
    assert!(String::from_utf8_lossy(&ok_run.stdout).starts_with("ok: "));
}

#[test]
fn future_snapshot_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let o = protoflow(&["run", "--stream", &toy(), "--algo", "wcc", "--at", "9:0", "--out", &path(&dir, "x")]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("StreamEnded") || err.contains("SnapshotNotAvailable"), "{err}");
    let missing = protoflow(&["validate", "--stream", &path(&dir, "nope.jsonl")]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("IoError"));
}

#[test]
fn usage_errors_exit_2() {
    let toy = toy();
    let cases: Vec<Vec<&str>> = vec![
        vec![],
        vec!["frobnicate"],
        vec!["run", "--stream", &toy, "--algo", "sssp", "--at", "1:*", "--out", "x"],
        vec!["run", "--stream", &toy, "--state", &toy, "--algo", "wcc", "--at", "1:*", "--out", "x"],
        vec!["run", "--stream", &toy, "--algo", "nope", "--at", "1:*", "--out", "x"],
        vec!["run", "--stream", &toy, "--algo", "wcc", "--at", "one", "--out", "x"],
        vec!["gen", "--kind", "citation-growth", "--epochs", "-1"],
    ];
    for args in cases {
        assert_eq!(protoflow(&args).status.code(), Some(2), "{args:?}");
    }
    let bad_seed = protoflow_env(&["gen", "--kind", "citation-growth"], Some("abc"));
    assert_eq!(bad_seed.status.code(), Some(2));
    assert!(stderr(&bad_seed).contains("PROTOFLOW_SEED"));
}

#[test]
fn generated_citation_growth() {
    let dir = TempDir::new().unwrap();
    let a = path(&dir, "a.jsonl");
    let gen = |out: &str, epochs: &str, seed: Option<&str>| {
        ok(protoflow_env(&["gen", "--kind", "citation-growth", "--epochs", epochs, "--seed", "7", "--out", out], seed))
    };
    gen(&a, "3", None);
    ok(protoflow(&["validate", "--stream", &a]));
    let text = fs::read_to_string(&a).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let school_nodes: Vec<&Value> = records.iter().filter(|r| r["schema"] == "school@1").collect();
    assert!(!school_nodes.is_empty());
    assert!(school_nodes.iter().all(|r| r["epoch"] == 2));
    assert!(records.iter().any(|r| r["op"] == "declare" && r["name"] == "school" && r["epoch"] == 2));

    let b = path(&dir, "b.jsonl");
    gen(&b, "3", None);
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    // The environment seed wins over the flag.
    let c = path(&dir, "c.jsonl");
    let d = path(&dir, "d.jsonl");
    gen(&c, "3", Some("8"));
    ok(protoflow(&["gen", "--kind", "citation-growth", "--epochs", "3", "--seed", "8", "--out", &d]));
    assert_eq!(fs::read_to_string(&c).unwrap(), fs::read_to_string(&d).unwrap());
    assert_ne!(fs::read_to_string(&c).unwrap(), text);

    let empty = path(&dir, "empty.jsonl");
    gen(&empty, "0", None);
    let lines: Vec<Value> =
        fs::read_to_string(&empty).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|r| r["op"] == "declare"));
}

#[test]
fn bundled_stream_is_the_seed_7_generator_output() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "g.jsonl");
    let o = ok(protoflow(&["gen", "--kind", "citation-growth", "--epochs", "4", "--seed", "7", "--out", &out]));
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(repo("data/citation-growth.jsonl")).unwrap());
    assert!(stderr(&o).contains("a2 in epoch 2"));
}

#[test]
fn state_file_runs_like_the_stream() {
    let dir = TempDir::new().unwrap();
    let state = path(&dir, "toy.state");
    ok(protoflow(&["ingest", "--stream", &toy(), "--out", &state]));
    for algo in ["pagerank", "wcc", "wordcount"] {
        let (a, b) = (path(&dir, "a"), path(&dir, "b"));
        ok(protoflow(&["run", "--stream", &toy(), "--algo", algo, "--at", "2:*", "--out", &a]));
        ok(protoflow(&["run", "--state", &state, "--algo", algo, "--at", "2:*", "--out", &b]));
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "{algo}");
    }
    let tampered = fs::read_to_string(&state).unwrap().replacen("\"applied_at\":\"0:1\"", "\"applied_at\":\"0:5\"", 1);
    fs::write(&state, tampered).unwrap();
    let o = protoflow(&["run", "--state", &state, "--algo", "wcc", "--at", "2:*", "--out", &path(&dir, "c")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ParseError"), "{}", stderr(&o));
}

#[test]
fn sssp_and_snapshot_commands() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "d.jsonl");
    ok(protoflow(&["run", "--stream", &toy(), "--algo", "sssp", "--source", "a1", "--at", "2:*", "--out", &out]));
    let d = ranks(&fs::read_to_string(&out).unwrap());
    assert_eq!(d["a1"], 0.0);
    let fifo = path(&dir, "f.jsonl");
    ok(protoflow(&[
        "run",
        "--stream",
        &toy(),
        "--algo",
        "sssp",
        "--source",
        "a1",
        "--scheduler",
        "fifo",
        "--at",
        "2:*",
        "--out",
        &fifo,
    ]));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&fifo).unwrap());
    let snap = ok(protoflow(&["snapshot", "--stream", &toy(), "--at", "0:0"]));
    let rows = String::from_utf8(snap.stdout).unwrap();
    // The first mutation adds p1 with its title.
    assert_eq!(rows.lines().count(), 2, "{rows}");
    assert!(rows.contains("n/p1.title"));
}

#[test]
fn temporal_names_the_planted_gainer() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "series.jsonl");
    let stream = repo("data/citation-growth.jsonl").display().to_string();
    ok(protoflow(&["temporal", "--stream", &stream, "--from", "1:*", "--to", "3:*", "--out", &out]));
    let series: Vec<Value> =
        fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(series.len(), 3);
    let at2 = series.iter().find(|p| p["version"] == "2:*").unwrap();
    assert_eq!(at2["digest"]["top_gainer"], "a2");
}

#[test]
fn sim_output_is_independent_of_cluster_size() {
    let dir = TempDir::new().unwrap();
    let stream = repo("data/citation-growth.jsonl").display().to_string();
    let mut outputs = Vec::new();
    for machines in ["1", "4"] {
        let (metrics, out) = (path(&dir, &format!("m{machines}.json")), path(&dir, &format!("o{machines}.jsonl")));
        ok(protoflow(&[
            "sim",
            "--stream",
            &stream,
            "--machines",
            machines,
            "--seed",
            "3",
            "--metrics",
            &metrics,
            "--algo",
            "wcc",
            "--out",
            &out,
        ]));
        let m: Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
        assert_eq!(m["machines"], machines.parse::<u64>().unwrap());
        assert_eq!(m["monitors"]["unsafe_applies"], 0);
        outputs.push(fs::read(&out).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}
