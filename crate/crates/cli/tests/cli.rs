use std::fs;
use std::process::{Command, Output};

fn capam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capam"))
        .args(args)
        .env_remove("CAPAM_SEED")
        .output()
        .unwrap()
}

#[test]
fn default_suite_has_96_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("suite");
    let o = capam(&[
        "generate",
        "--suite",
        "default",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 96);
    assert_eq!(names.iter().filter(|n| n.contains("_tight_")).count(), 48);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!capam(&[]).status.success());
    assert!(!capam(&["eval", "--instances", "x"]).status.success());
    assert!(!capam(&["generate", "--out", "/nonexistent/x"])
        .status
        .success());
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i");
    assert!(capam(&[
        "generate",
        "--tasks",
        "4",
        "--robots",
        "2",
        "--out",
        inst.to_str().unwrap()
    ])
    .status
    .success());
    let o = capam(&[
        "baseline",
        "--solver",
        "nope",
        "--instances",
        inst.to_str().unwrap(),
        "--out",
        "x.csv",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown solver"));
}

#[test]
fn env_seed_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(capam(&[
        "generate",
        "--tasks",
        "5",
        "--robots",
        "2",
        "--seed",
        "42",
        "--out",
        a.to_str().unwrap()
    ])
    .status
    .success());
    let o = Command::new(env!("CARGO_BIN_EXE_capam"))
        .args([
            "generate",
            "--tasks",
            "5",
            "--robots",
            "2",
            "--out",
            b.to_str().unwrap(),
        ])
        .env("CAPAM_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success());
    let f = "instance_t5_r2_0000.json";
    assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
}

#[test]
fn baseline_csv_has_the_benchmark_columns() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i");
    let csv = dir.path().join("o.csv");
    assert!(capam(&[
        "generate",
        "--tasks",
        "5",
        "--robots",
        "2",
        "--count",
        "3",
        "--out",
        inst.to_str().unwrap()
    ])
    .status
    .success());
    let o = capam(&[
        "baseline",
        "--solver",
        "oracle",
        "--instances",
        inst.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "suite,group,fraction,robots,tasks,solver,seed,f_cost,completion_pct,latency_ms"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn gradcheck_command_passes() {
    let o = capam(&["gradcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}
