use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use blockmatch::cli::{read_pair_stats, summarize, MetricsReport, RunConfig};
use blockmatch::mbr::SchedulePlan;
use blockmatch::retrieval::ViewGraph;
use serde_json::Value;

fn bm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockmatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = bm(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

const SMALL: [&str; 10] = [
    "--images",
    "100",
    "--band",
    "3",
    "--points",
    "200",
    "--top-n",
    "6",
    "--size-blk",
    "10",
];

#[test]
fn run_matches_every_retrieved_pair() {
    let t = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--out", "o", "--gpu-memory-units", "6000"];
    args.extend(SMALL);
    let summary = ok(t.path(), &args);
    let report: MetricsReport =
        serde_json::from_str(&fs::read_to_string(t.path().join("o/metrics.json")).unwrap())
            .unwrap();
    let g =
        ViewGraph::from_matrix_market(&fs::read_to_string(t.path().join("o/graph.mtx")).unwrap())
            .unwrap();
    assert_eq!(report.metrics.pairs_matched, g.edge_count());
    assert_eq!(report.graph_pairs, g.edge_count());
    assert_eq!(summary["pairs_matched"], g.edge_count());
    assert_eq!(report.size_gpu, 30);
    assert!(report.bandwidth_after <= report.bandwidth_before);
    let stats = read_pair_stats(&t.path().join("o/pair_stats.jsonl")).unwrap();
    assert_eq!(stats.len(), g.edge_count());
    let s = ok(t.path(), &["stats", "o/pair_stats.jsonl", "--out", "o"]);
    let expected = serde_json::to_value(summarize(&stats)).unwrap();
    assert_eq!(s, expected);
    assert_eq!(s["inliers"], report.metrics.verified_matches);
}

#[test]
fn staged_commands_agree_with_run_and_are_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    let with = |extra: &[&'static str]| {
        let mut v: Vec<&str> = extra.to_vec();
        v.extend(SMALL);
        v.extend(["--gpu-memory-units", "6000"]);
        v
    };
    ok(p, &with(&["gen", "--out", "feats"]));
    ok(
        p,
        &with(&["retrieve", "--features", "feats", "--out", "g.mtx"]),
    );
    let sched = ok(
        p,
        &with(&[
            "schedule",
            "--graph",
            "g.mtx",
            "--features",
            "feats",
            "--out",
            "plan.json",
        ]),
    );
    assert_eq!(sched["size_gpu"], 30);
    for out in ["a", "b"] {
        ok(
            p,
            &with(&[
                "match",
                "--features",
                "feats",
                "--graph",
                "g.mtx",
                "--plan",
                "plan.json",
                "--out",
                out,
                "--occupancy",
            ]),
        );
    }
    for f in [
        "matches.txt",
        "metrics.json",
        "pair_stats.jsonl",
        "occupancy.csv",
    ] {
        let a = fs::read(p.join("a").join(f)).unwrap();
        let b = fs::read(p.join("b").join(f)).unwrap();
        assert!(!a.is_empty());
        let strip = |x: Vec<u8>| {
            String::from_utf8(x)
                .unwrap()
                .replace("\"out_dir\":\"b\"", "\"out_dir\":\"a\"")
                .replace("\"out_dir\": \"b\"", "\"out_dir\": \"a\"")
        };
        assert_eq!(strip(a), strip(b), "{f}");
    }
    ok(p, &with(&["run", "--features", "feats", "--out", "r"]));
    let matched = fs::read_to_string(p.join("a/matches.txt")).unwrap();
    let run = fs::read_to_string(p.join("r/matches.txt")).unwrap();
    let body = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("# config"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&matched), body(&run));
    let plan: Value =
        serde_json::from_str(&fs::read_to_string(p.join("plan.json")).unwrap()).unwrap();
    let plan: SchedulePlan = serde_json::from_value(plan["plan"].clone()).unwrap();
    let run_plan: Value =
        serde_json::from_str(&fs::read_to_string(p.join("r/plan.json")).unwrap()).unwrap();
    assert_eq!(
        serde_json::from_value::<SchedulePlan>(run_plan["plan"].clone()).unwrap(),
        plan
    );
}

#[test]
fn echoed_config_reproduces_the_run() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    let mut args = vec![
        "run",
        "--out",
        "first",
        "--seed",
        "42",
        "--gpu-memory-units",
        "6000",
    ];
    args.extend(SMALL);
    ok(p, &args);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(p.join("first/metrics.json")).unwrap()).unwrap();
    let mut cfg: RunConfig = serde_json::from_value(report["config"].clone()).unwrap();
    cfg.paths.out_dir = "second".into();
    fs::write(p.join("echo.json"), cfg.to_json()).unwrap();
    ok(p, &["run", "--config", "echo.json"]);
    let a = fs::read_to_string(p.join("first/matches.txt")).unwrap();
    let b = fs::read_to_string(p.join("second/matches.txt")).unwrap();
    assert_eq!(
        a.replace("\"out_dir\":\"first\"", "\"out_dir\":\"second\""),
        b
    );
}

#[test]
fn edgeless_graph_schedules_to_nothing() {
    let t = tempfile::tempdir().unwrap();
    let g = ViewGraph::from_pairs((0..5).collect(), Vec::new()).unwrap();
    fs::write(t.path().join("empty.mtx"), g.to_matrix_market()).unwrap();
    let s = ok(
        t.path(),
        &[
            "schedule",
            "--graph",
            "empty.mtx",
            "--out",
            "plan.json",
            "--size-blk",
            "2",
        ],
    );
    assert_eq!(s["blocks"], 0);
    assert_eq!(s["bandwidth_before"], 0);
    assert_eq!(s["bandwidth_after"], 0);
}

#[test]
fn compare_reports_four_strategies() {
    let t = tempfile::tempdir().unwrap();
    let pairs: Vec<(u64, u64)> = (0..40u64)
        .flat_map(|i| (i + 1..(i + 4).min(40)).map(move |j| (i, j)))
        .collect();
    let g = ViewGraph::from_pairs((0..40).collect(), pairs).unwrap();
    fs::write(t.path().join("g.mtx"), g.to_matrix_market()).unwrap();
    let s = ok(
        t.path(),
        &[
            "compare",
            "--graph",
            "g.mtx",
            "--out",
            "c",
            "--size-blk",
            "4",
            "--gpu-memory-units",
            "6000",
            "--points",
            "500",
        ],
    );
    let rows = s["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let csv = fs::read_to_string(t.path().join("c/compare.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap();
    assert!(header.contains("uploads") && header.contains("utilization_proxy"));
    assert_eq!(lines.count(), 4);
    for r in rows {
        assert_eq!(r["pairs"], g.edge_count());
    }
}

#[test]
fn errors_are_json_with_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let out = bm(t.path(), &["run", "--ratio", "2.0"]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "config");

    fs::write(t.path().join("bad.json"), r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(
        bm(t.path(), &["config", "--config", "bad.json"])
            .status
            .code(),
        Some(2)
    );

    let out = bm(t.path(), &["match", "--graph", "missing.mtx"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["error"]["message"].is_string());

    fs::write(
        t.path().join("g.mtx"),
        "%%MatrixMarket matrix coordinate pattern symmetric\n3 3 1\n2 1\n",
    )
    .unwrap();
    let out = bm(
        t.path(),
        &[
            "schedule",
            "--graph",
            "g.mtx",
            "--size-blk",
            "300",
            "--gpu-memory-units",
            "1000",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "mbr");
}

#[test]
fn config_command_prints_resolved_defaults() {
    let t = tempfile::tempdir().unwrap();
    let v = ok(t.path(), &["config", "--seed", "3"]);
    let c: RunConfig = serde_json::from_value(v).unwrap();
    assert_eq!(c.seed, 3);
    assert_eq!(c, c.resolved());
    assert_eq!(c.engine.hash.ratio, 0.5);
    assert_eq!(c.schedule.size_blk, 400);
}
