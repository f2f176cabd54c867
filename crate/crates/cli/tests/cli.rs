use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn unroll(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unroll")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = unroll(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn suite_is_deterministic_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let out = ok(&["suite", "--kind", "generation", "--seed", "1", "--size", "40", "--out", p(&a)]);
    ok(&["suite", "--kind", "generation", "--seed", "1", "--size", "40", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let atoms: usize = out
        .lines()
        .filter_map(|l| l.strip_prefix("atoms "))
        .map(|l| l.rsplit(' ').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(atoms, 40);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("s.json");
    assert_eq!(unroll(&["suite", "--kind", "spatial", "--size", "0", "--out", p(&f)]).status.code(), Some(2));
    assert_eq!(unroll(&["suite", "--kind", "bogus", "--out", p(&f)]).status.code(), Some(2));
    assert_eq!(unroll(&["frobnicate"]).status.code(), Some(2));
    assert!(!f.exists());
}

#[test]
fn run_writes_traces_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("s.json");
    ok(&["suite", "--kind", "counting", "--seed", "4", "--size", "10", "--out", p(&suite)]);
    let (o1, o2) = (dir.path().join("r1"), dir.path().join("r2"));
    let s1 = ok(&["run", "--suite", p(&suite), "-p", "direct,combined", "--out", p(&o1)]);
    let s2 = ok(&["--jobs", "1", "run", "--suite", p(&suite), "-p", "direct,combined", "--out", p(&o2)]);
    assert_eq!(fs::read_dir(o1.join("traces/direct")).unwrap().count(), 10);
    let answers = fs::read_to_string(o1.join("answers/direct.jsonl")).unwrap();
    assert_eq!(answers.lines().count(), 10);
    // Digest column covers every final hash; thread count must not matter.
    let digests = |s: &str| -> Vec<String> { s.lines().skip(1).take(2).map(|l| l.rsplit(' ').next().unwrap().to_string()).collect() };
    assert_eq!(digests(&s1), digests(&s2));
    let t = o1.join("traces/combined/counting-0003.trace");
    let replayed = ok(&["replay", "--reexecute", p(&t)]);
    assert!(replayed.contains("re-executed"));
}

#[test]
fn unknown_pipeline_lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("s.json");
    ok(&["suite", "--kind", "counting", "--size", "2", "--out", p(&suite)]);
    let out = unroll(&["run", "--suite", p(&suite), "-p", "warp_drive", "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("plus_nvs_visual") && err.contains("direct"), "{err}");
}

#[test]
fn transcripts_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("s.json");
    ok(&["suite", "--kind", "spatial", "--seed", "2", "--size", "3", "--out", p(&suite)]);
    let out = dir.path().join("o");
    ok(&["run", "--suite", p(&suite), "-p", "direct,plus_nvs_visual", "--out", p(&out)]);

    let empty = ok(&["trace", p(&out.join("traces/direct/spatial-0000.trace"))]);
    assert_eq!(empty.lines().count(), 2, "{empty}");
    assert!(empty.lines().nth(1).unwrap().starts_with("answer"));

    let full_path = out.join("traces/plus_nvs_visual/spatial-0000.trace");
    let full = ok(&["trace", p(&full_path)]);
    let remaining: Vec<u64> = full
        .lines()
        .filter(|l| l.trim_start().chars().next().is_some_and(|c| c.is_ascii_digit()) && l.contains("applied"))
        .map(|l| l.split_whitespace().nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(remaining.len(), 6);
    assert!(remaining.windows(2).all(|w| w[1] <= w[0]));

    let mut bytes = fs::read(&full_path).unwrap();
    let at = bytes.len() / 2;
    bytes[at] ^= 0x01;
    let bad = dir.path().join("bad.trace");
    fs::write(&bad, bytes).unwrap();
    let r = unroll(&["trace", p(&bad)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("step"));
    assert_eq!(unroll(&["replay", p(&bad)]).status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let body = serde_json::json!({
        "version": 1,
        "suite": {"name": "cfg", "kind": "spatial", "seed": 5, "size": 6},
        "pipelines": ["direct"],
        "policy": {"budget": 2048},
        "noise": {"estimate_pose": {"kind": "gaussian", "sigma": 0.05, "seed": 3}},
        "output_dir": p(&dir.path().join("from_config")),
    });
    fs::write(&cfg, body.to_string()).unwrap();
    let out = dir.path().join("flag_out");
    ok(&["ablate", "--config", p(&cfg), "-p", "direct,plus_pose_text", "--budget", "1024", "--out", p(&out)]);
    assert!(!dir.path().join("from_config").exists());
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["policy"]["budget"], 1024);
    assert_eq!(echoed["pipelines"].as_array().unwrap().len(), 2);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["config"], echoed);
    assert!(report["rows"][1]["rot_err_deg"].as_f64().unwrap() > 0.0);

    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"version": 1, "pipelinez": []}"#).unwrap();
    assert_eq!(unroll(&["ablate", "--config", p(&unknown)]).status.code(), Some(2));
}

#[test]
fn health_reports_unreachable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let out = unroll(&["health", "--url", &url, "--timeout-ms", "300"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("unhealthy"));
    assert_eq!(unroll(&["health"]).status.code(), Some(2));
}
