use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn amd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amd"))
        .args(args)
        .env("AMD_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_zero_writes_empty_corpus() {
    let d = tempfile::tempdir().unwrap();
    let o = amd(&["gen", "--n", "0", "--out", p(d.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&d.path().join("graphs.json")), Value::Array(vec![]));
    assert_eq!(
        json(&d.path().join("gold-trees.json")),
        Value::Array(vec![])
    );
}

#[test]
fn gen_is_reproducible() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let o = amd(&["gen", "--n", "15", "--seed", "9", "--out", p(d.path())]);
        assert_eq!(code(&o), 0);
    }
    for f in ["graphs.json", "gold-trees.json", "manifest.json"] {
        assert_eq!(
            fs::read(d1.path().join(f)).unwrap(),
            fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn gold_trees_verify() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&amd(&[
            "gen",
            "--n",
            "20",
            "--seed",
            "4",
            "--out",
            p(d.path())
        ])),
        0
    );
    let report = d.path().join("verify.json");
    let o = amd(&[
        "verify",
        "--graphs",
        p(&d.path().join("graphs.json")),
        "--trees",
        p(&d.path().join("gold-trees.json")),
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&o), 0);
    let r = json(&report);
    assert_eq!(r["passed"], 20);
    assert_eq!(r["failed"], 0);
}

#[test]
fn empty_verify_passes() {
    let d = tempfile::tempdir().unwrap();
    let g = d.path().join("g.json");
    let t = d.path().join("t.json");
    fs::write(&g, "[]").unwrap();
    fs::write(&t, "[]").unwrap();
    let o = amd(&["verify", "--graphs", p(&g), "--trees", p(&t)]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["total"], 0);
    assert_eq!(r["instances"], Value::Array(vec![]));
}

/// Clears the first nested request found in any constant's type.
fn delete_one_request(tree: &mut Value) -> bool {
    let nodes = tree["nodes"].as_object_mut().unwrap();
    for node in nodes.values_mut() {
        let ty = node["type"].as_object_mut().unwrap();
        for req in ty.values_mut() {
            if req.as_object().is_some_and(|r| !r.is_empty()) {
                *req = Value::Object(Default::default());
                return true;
            }
        }
    }
    false
}

#[test]
fn deleted_request_fails_verification() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("run");
    assert_eq!(code(&amd(&["pipeline", "--demo", "--out", p(&out)])), 0);
    let mut trees = json(&out.join("trees.json"));
    let entry = trees
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .find(|e| e["id"] == "relative-clause")
        .unwrap();
    assert!(delete_one_request(&mut entry["tree"]));
    let broken = d.path().join("broken.json");
    fs::write(&broken, serde_json::to_string(&trees).unwrap()).unwrap();
    let report = d.path().join("report.json");
    let o = amd(&[
        "verify",
        "--graphs",
        p(&out.join("graphs.json")),
        "--trees",
        p(&broken),
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&o), 1);
    let r = json(&report);
    assert_eq!(r["failed"], 1);
    let bad = r["instances"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["verdict"] == "fail")
        .unwrap();
    assert_eq!(bad["id"], "relative-clause");
    assert!(bad["error"].as_str().unwrap().starts_with("NotWellTyped"));
}

#[test]
fn demo_pipeline_decomposes_all_three() {
    let d = tempfile::tempdir().unwrap();
    let o = amd(&["pipeline", "--demo", "--epochs", "2", "--out", p(d.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&d.path().join("manifest.json"));
    assert_eq!(m["counts"]["graphs"], 3);
    assert_eq!(m["counts"]["decomposed"], 3);
    assert_eq!(m["counts"]["skipped_empty_automaton"], 0);
    assert_eq!(m["counts"]["decoded"], 3);
    for f in ["theta.json", "best-trees.json", "scorer.json", "stats.json"] {
        assert!(d.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn two_sources_skip_the_three_slot_constant() {
    let d = tempfile::tempdir().unwrap();
    let o = amd(&["pipeline", "--demo", "--sources", "2", "--out", p(d.path())]);
    assert_eq!(code(&o), 2);
    let m = json(&d.path().join("manifest.json"));
    assert_eq!(m["counts"]["skipped_empty_automaton"], 1);
    let index = json(&d.path().join("automata/index.json"));
    let empty: Vec<&str> = index["entries"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["status"] == "empty")
        .map(|e| e["id"].as_str().unwrap())
        .collect();
    assert_eq!(empty, ["sparkle-and-glow"]);
}

#[test]
fn missing_input_is_a_failure() {
    let d = tempfile::tempdir().unwrap();
    let o = amd(&[
        "decompose",
        "--graphs",
        p(&d.path().join("absent.json")),
        "--out",
        p(&d.path().join("t.json")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn count_and_stats_print() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&amd(&["pipeline", "--demo", "--out", p(d.path())])), 0);
    let o = amd(&["count", "--automata", p(&d.path().join("automata"))]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text
        .lines()
        .all(|l| l.split('\t').nth(1).unwrap().parse::<u64>().unwrap() > 0));
    let o = amd(&["stats", "--trees", p(&d.path().join("best-trees.json"))]);
    assert_eq!(code(&o), 0);
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["trees"], 3);
}

#[test]
fn help_lists_every_subcommand() {
    let o = amd(&["--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in [
        "gen",
        "decompose",
        "build-automata",
        "count",
        "train-em",
        "train-joint",
        "viterbi",
        "verify",
        "stats",
        "pipeline",
    ] {
        assert!(text.contains(sub), "{sub}");
    }
}
