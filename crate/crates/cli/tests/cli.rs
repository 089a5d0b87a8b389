use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tta_core::synthetic::desk_image;

fn tta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tta"))
        .args(args)
        .env("TTA_WORKERS", "1")
        .output()
        .expect("run tta")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three desk images, a manifest and a built cache.
fn corpus(dir: &Path) -> PathBuf {
    let mut manifest = String::new();
    for id in 1..=3u64 {
        desk_image(id, 32, 32).save(&dir.join(format!("{id}.png"))).unwrap();
        manifest.push_str(&format!("{id}\t{id}.png\n"));
    }
    fs::write(dir.join("images.tsv"), manifest).unwrap();
    let cache = dir.join("features.ttac");
    let out = tta(&[
        "cache-build",
        "--manifest",
        s(&dir.join("images.tsv")),
        "--out",
        s(&cache),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("375 entries"), "{}", stdout(&out));
    cache
}

#[test]
fn cache_build_reports_and_detects_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    let cache = corpus(dir.path());
    let bytes = fs::read(&cache).unwrap();
    let again = tta(&[
        "cache-build",
        "--manifest",
        s(&dir.path().join("images.tsv")),
        "--out",
        s(&cache),
    ]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("unchanged"), "{}", stdout(&again));
    assert_eq!(fs::read(&cache).unwrap(), bytes);
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let out = tta(&["cache-build", "--manifest", s(&missing), "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.tsv"), "{}", stderr(&out));

    let cache = corpus(dir.path());
    fs::write(dir.path().join("task.txt"), "K=2\n1\t2\n").unwrap();
    let out = tta(&[
        "eval",
        "--policy",
        s(&dir.path().join("missing.policy")),
        "--cache",
        s(&cache),
        "--task",
        s(&dir.path().join("task.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn search_eval_report_apply() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cache = corpus(d);
    fs::write(d.join("triplets.tsv"), "1\t2\t3\n2\t1\t3\n").unwrap();
    let run = |out: &Path| {
        tta(&[
            "search",
            "--cache",
            s(&cache),
            "--triplets",
            s(&d.join("triplets.tsv")),
            "--seed",
            "7",
            "--iterations",
            "24",
            "--out",
            s(out),
        ])
    };
    let first = run(&d.join("a"));
    assert!(first.status.success(), "{}", stderr(&first));
    let second = run(&d.join("b"));
    assert!(second.status.success());
    let log_a = fs::read(d.join("a/run.jsonl")).unwrap();
    assert_eq!(log_a, fs::read(d.join("b/run.jsonl")).unwrap());
    assert_eq!(String::from_utf8(log_a).unwrap().lines().count(), 25);
    for f in ["best.policy", "best.policy.meta.json", "final.policy", "controller.ttck"] {
        assert!(d.join("a").join(f).is_file(), "{f}");
    }

    fs::write(d.join("task.txt"), "K=2\n1\t2\n").unwrap();
    let report = d.join("eval.json");
    let out = tta(&[
        "eval",
        "--policy",
        s(&d.join("a/best.policy")),
        "--cache",
        s(&cache),
        "--task",
        s(&d.join("task.txt")),
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("MAP@2 without TTA"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["k"], 2);
    let map = json["with"][0]["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));

    let out = tta(&["report-occurrence", s(&d.join("a/run.jsonl"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let tsv = fs::read_to_string(d.join("a/run.jsonl.occurrence.tsv")).unwrap();
    let total: f64 = tsv.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let out = tta(&[
        "apply",
        "--policy",
        s(&d.join("a/final.policy")),
        "--cache",
        s(&cache),
        "--images",
        "1,3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2);
    let v: Vec<f64> = text.lines().next().unwrap().split('\t').skip(1).map(|x| x.parse().unwrap()).collect();
    assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
}

#[test]
fn zero_budget_writes_initial_sample() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cache = corpus(d);
    fs::write(d.join("t.tsv"), "1\t2\t3\n").unwrap();
    let out = tta(&[
        "search",
        "--cache",
        s(&cache),
        "--triplets",
        s(&d.join("t.tsv")),
        "--iterations",
        "0",
        "--out",
        s(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(d.join("run/final.policy")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(!d.join("run/best.policy").exists());
}

#[test]
fn baseline_only_policy_matches_without() {
    // Solarize at threshold 256 leaves every image unchanged.
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cache = corpus(d);
    fs::write(
        d.join("id.policy"),
        "Solarize: (10, 1), Solarize: (10, 1), Solarize: (10, 1), Solarize: (10, 1), \
         Solarize: (10, 1), Solarize: (10, 1), Solarize: (10, 1), Solarize: (10, 1)\n",
    )
    .unwrap();
    fs::write(d.join("task.txt"), "1\t2\n3\t2\n").unwrap();
    let report = d.join("r.json");
    let out = tta(&[
        "eval",
        "--policy",
        s(&d.join("id.policy")),
        "--cache",
        s(&cache),
        "--task",
        s(&d.join("task.txt")),
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let with = json["with"][0]["map"].as_f64().unwrap();
    let without = json["without"].as_f64().unwrap();
    assert!((with - without).abs() < 1e-12, "{with} vs {without}");
    assert_eq!(json["k"], 100);
}
