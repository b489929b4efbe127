use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn hetcausal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetcausal")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = hetcausal(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).expect("stderr is one JSON object")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A -> M1 -> M2 -> Y and M1 -> Y over `[X1, A, XA1, M1, M2, Y]`.
fn toy_graph(dir: &Path) -> std::path::PathBuf {
    let mut m = vec![vec![0.0; 6]; 6];
    m[1][3] = 1.0;
    m[3][4] = 1.0;
    m[3][5] = 1.0;
    m[4][5] = 1.0;
    m[1][5] = 0.5;
    let path = dir.join("toy.json");
    fs::write(&path, json!({"p": 1, "s": 2, "matrix": m}).to_string()).unwrap();
    path
}

#[test]
fn simulate_writes_data_truth_and_one_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("s1");
    ok(&["simulate", "--preset", "S1", "--seed", "1", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("data.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 501);
    assert_eq!(lines[0], "X1,X2,A,XA1,XA2,M1,M2,M3,M4,M5,M6,Y");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 12));
    assert_eq!(read_json(out.join("truth.json"))["s"], 6);
    let manifest = read_json(out.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    let manifests = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name() == "manifest.json").count();
    assert_eq!(manifests, 1);

    let s4 = tmp.path().join("s4");
    ok(&["simulate", "--preset", "S4", "--n", "20", "--out", s(&s4)]);
    let header = fs::read_to_string(s4.join("data.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 44);
}

#[test]
fn simulation_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--preset", "S2", "--seed", "4", "--out", s(&a)]);
    ok(&["simulate", "--preset", "S2", "--seed", "4", "--out", s(&b)]);
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = hetcausal(&["simulate", "--preset", "S9", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn discover_then_evaluate_recovers_s1() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    let disc = tmp.path().join("disc");
    let ev = tmp.path().join("eval");
    ok(&["simulate", "--preset", "S1", "--seed", "2", "--out", s(&sim)]);
    ok(&["discover", "--data", s(&sim.join("data.csv")), "--threshold", "0.4", "--out", s(&disc)]);
    let summary = read_json(disc.join("discover.json"));
    assert_eq!(summary["threshold"], 0.4);
    assert_eq!(summary["converged"], true);
    for f in ["raw.json", "thresholded.json", "graph.json", "manifest.json"] {
        assert!(disc.join(f).is_file(), "{f}");
    }
    ok(&["evaluate", "--est", s(&disc.join("graph.json")), "--truth", s(&sim.join("truth.json")), "--out", s(&ev)]);
    let report = read_json(ev.join("eval.json"));
    assert_eq!(report["shd"], 0);
    assert_eq!(report["tpr"], 1.0);

    let other = tmp.path().join("disc2");
    ok(&["discover", "--data", s(&sim.join("data.csv")), "--threshold", "0.25", "--out", s(&other)]);
    assert_eq!(read_json(other.join("discover.json"))["threshold"], 0.25);
}

#[test]
fn discover_rejects_an_empty_file() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = hetcausal(&["discover", "--data", s(&empty), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(error_json(&out)["error"], "parse");
}

#[test]
fn effects_of_a_toy_graph() {
    let tmp = TempDir::new().unwrap();
    let graph = toy_graph(tmp.path());
    let out = tmp.path().join("eff");
    ok(&["effects", "--graph", s(&graph), "--x", "0", "--x", "1", "--out", s(&out)]);
    let reports = read_json(out.join("effects.json"));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        // two unit-weight paths A -> M1 -> Y and A -> M1 -> M2 -> Y
        assert_eq!(r["hie"], 2.0);
        assert_eq!(r["hde"], 0.5);
        assert_eq!(r["hte"].as_f64().unwrap(), r["hde"].as_f64().unwrap() + r["hie"].as_f64().unwrap());
        assert_eq!(r["provenance"]["graph_source"], s(&graph));
    }
    let strip = |v: &Value| {
        let mut v = v.clone();
        v.as_object_mut().unwrap().remove("x");
        v
    };
    assert_eq!(strip(&reports[0]), strip(&reports[1]));
}

#[test]
fn effects_dispatch_on_graph_kind() {
    let tmp = TempDir::new().unwrap();
    let mut m = vec![vec![0.0; 5]; 5];
    m[1][3] = 1.0;
    m[3][4] = 1.0;
    let xm = tmp.path().join("xm.json");
    fs::write(&xm, json!({"p": 1, "s": 1, "matrix": m, "gamma_xm": [[2.0]]}).to_string()).unwrap();
    let out = tmp.path().join("xm");
    ok(&["effects", "--graph", s(&xm), "--x", "1", "--out", s(&out)]);
    assert_eq!(read_json(out.join("effects.json"))[0]["hie"], 3.0);

    let links = json!([{"block": "Y.m", "kind": "polynomial", "degree": 2}]);
    let fun = tmp.path().join("fun.json");
    fs::write(&fun, json!({"p": 1, "s": 1, "matrix": m, "links": links}).to_string()).unwrap();
    let missing_a = hetcausal(&["effects", "--graph", s(&fun), "--x", "0", "--out", s(&tmp.path().join("f0"))]);
    assert_eq!(error_json(&missing_a)["error"], "usage");
    let out = tmp.path().join("f1");
    ok(&["effects", "--graph", s(&fun), "--x", "0", "--a", "1.5", "--out", s(&out)]);
    let r = &read_json(out.join("effects.json"))[0];
    // m = a, y = m^2, so d y / d a = 2a
    assert!((r["hie"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(r["a"], 1.5);

    let wrong = hetcausal(&["effects", "--graph", s(&xm), "--x", "1,2", "--out", s(&tmp.path().join("w"))]);
    assert!(!wrong.status.success());
}

#[test]
fn bootstrap_is_reproducible_and_symmetric_for_gaussian() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--preset", "S1", "--seed", "3", "--n", "150", "--out", s(&sim)]);
    let data = sim.join("data.csv");
    let run = |name: &str, method: &str, k: &str, threads: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "bootstrap", "--data", s(&data), "--x", "1,0", "--K", k, "--method", method, "--seed", "5", "--threads", threads,
            "--out", s(&out),
        ]);
        read_json(out.join("ci.json"))
    };
    let a = run("a", "percentile", "6", "1");
    let b = run("b", "percentile", "6", "2");
    assert_eq!(a["records"], b["records"]);
    let two = run("two", "percentile", "2", "1");
    for r in two["records"].as_array().unwrap() {
        assert!(r["lo"].as_f64().unwrap() <= r["hi"].as_f64().unwrap());
        assert_eq!(r["K"], 2);
    }
    let g = run("g", "gaussian", "6", "1");
    for r in g["records"].as_array().unwrap() {
        let (lo, pt, hi) = (r["lo"].as_f64().unwrap(), r["point"].as_f64().unwrap(), r["hi"].as_f64().unwrap());
        assert!(((pt - lo) - (hi - pt)).abs() < 1e-9);
    }
    let forest = fs::read_to_string(tmp.path().join("g").join("forest.csv")).unwrap();
    assert!(forest.starts_with("name,x,point,lo,hi\nhte,1;0,"));
}

#[test]
fn evaluate_identical_graphs_and_bad_paths() {
    let tmp = TempDir::new().unwrap();
    let graph = toy_graph(tmp.path());
    let out = tmp.path().join("ev");
    ok(&["evaluate", "--est", s(&graph), "--truth", s(&graph), "--out", s(&out)]);
    let r = read_json(out.join("eval.json"));
    assert_eq!((r["shd"].as_u64(), r["fdr"].as_f64(), r["tpr"].as_f64()), (Some(0), Some(0.0), Some(1.0)));
    let bad = hetcausal(&["evaluate", "--est", "/nonexistent/g.json", "--truth", s(&graph), "--out", s(&out)]);
    assert_eq!(error_json(&bad)["error"], "io");
}

#[test]
fn replicate_tabulates_each_seed() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("rep");
    ok(&["replicate", "--preset", "S1", "--seeds", "1..3", "--out", s(&out)]);
    let table = read_json(out.join("table.json"));
    let seeds: Vec<u64> = table["rows"].as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![1, 2, 3]);
    assert_eq!(fs::read_to_string(out.join("table.csv")).unwrap().lines().count(), 4);
    let bad = hetcausal(&["replicate", "--preset", "S1", "--seeds", "3..1", "--out", s(&out)]);
    assert_eq!(error_json(&bad)["error"], "usage");
}

#[test]
fn dot_export() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.json");
    fs::write(&empty, json!({"p": 1, "s": 1, "matrix": vec![vec![0.0; 5]; 5]}).to_string()).unwrap();
    let out = tmp.path().join("d0");
    ok(&["export-dot", "--graph", s(&empty), "--out", s(&out)]);
    let dot = fs::read_to_string(out.join("graph.dot")).unwrap();
    assert!(dot.starts_with("digraph") && !dot.contains("->"));

    let mut m = vec![vec![0.0; 5]; 5];
    m[2][3] = 1.0;
    let one = tmp.path().join("one.json");
    fs::write(&one, json!({"p": 1, "s": 1, "matrix": m}).to_string()).unwrap();
    let out = tmp.path().join("d1");
    ok(&["export-dot", "--graph", s(&one), "--out", s(&out)]);
    let dot = fs::read_to_string(out.join("graph.dot")).unwrap();
    let edges: Vec<&str> = dot.lines().filter(|l| l.contains("->")).collect();
    assert_eq!(edges, vec!["  \"XA1\" -> \"M1\" [label=\"1.000\", color=red];"]);

    let (p0, p1) = (tmp.path().join("h0"), tmp.path().join("h1"));
    ok(&["export-dot", "--graph", s(&one), "--x", "0.5", "--out", s(&p0)]);
    ok(&["export-dot", "--graph", s(&one), "--x", "2", "--out", s(&p1)]);
    let a = fs::read_to_string(p0.join("hcg.dot")).unwrap();
    let b = fs::read_to_string(p1.join("hcg.dot")).unwrap();
    assert!(a.contains("\"A\" -> \"M1\" [label=\"0.500\"") && b.contains("\"A\" -> \"M1\" [label=\"2.000\""));
}

#[test]
fn pipeline_round_trip_matches_truth_effects() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    let disc = tmp.path().join("disc");
    ok(&["simulate", "--preset", "S1", "--seed", "5", "--out", s(&sim)]);
    ok(&["discover", "--data", s(&sim.join("data.csv")), "--out", s(&disc)]);
    let (te, ee) = (tmp.path().join("te"), tmp.path().join("ee"));
    ok(&["effects", "--graph", s(&sim.join("truth.json")), "--x", "1,1", "--out", s(&te)]);
    ok(&["effects", "--graph", s(&disc.join("graph.json")), "--x", "1,1", "--out", s(&ee)]);
    let (t, e) = (read_json(te.join("effects.json")), read_json(ee.join("effects.json")));
    for key in ["hde", "hie"] {
        let diff = (t[0][key].as_f64().unwrap() - e[0][key].as_f64().unwrap()).abs();
        assert!(diff < 0.2, "{key} differs by {diff}");
    }
}
