use std::path::Path;
use std::process::{Command, Output};

use taskarith::checkpoint::load_tvf;

const PLAN: &str = "\
tasks = 2
pretrain_iterations = 30
pretrain_count = 256
iterations = 30
warmup = 3
train_count = 96
eval_count = 96
";

fn taskarith(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskarith"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn taskarith")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = taskarith(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Pre-trains, probes and fine-tunes two tasks in `dir`.
fn build_pipeline(dir: &Path) {
    std::fs::write(dir.join("plan.txt"), PLAN).unwrap();
    let c = ["--config", "plan.txt"];
    ok(dir, &[&c[..], &["--out", "pre.tvf", "pretrain"]].concat());
    for t in ["task0", "task1"] {
        let probe = format!("probe.{t}.tvf");
        let ft = format!("ft.{t}.tvf");
        let vec = format!("vec.{t}.tvf");
        ok(dir, &[&c[..], &["--out", &probe, "probe", "--pre", "pre.tvf", "--task", t]].concat());
        ok(
            dir,
            &[&c[..], &["--out", &ft, "finetune", "--pre", "pre.tvf", "--head", &probe, "--task", t]].concat(),
        );
        ok(dir, &["--out", &vec, "extract", "--ft", &ft, "--pre", "pre.tvf"]);
    }
}

#[test]
fn pipeline_merge_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    build_pipeline(d);

    ok(d, &["--out", "m0.tvf", "merge", "--pre", "pre.tvf", "--vector", "vec.task0.tvf", "--vector", "vec.task1.tvf", "--lambda", "0"]);
    let pre = load_tvf(d.join("pre.tvf")).unwrap();
    let merged = load_tvf(d.join("m0.tvf")).unwrap();
    assert_eq!(pre.encoder_hash(), merged.encoder_hash());

    let stdout = ok(
        d,
        &[
            "--config", "plan.txt", "--out", "search.csv", "search", "--pre", "pre.tvf",
            "--vector", "vec.task0.tvf", "--vector", "vec.task1.tvf",
            "--head", "ft.task0.head.tvf", "--head", "ft.task1.head.tvf", "--grid-default",
        ],
    );
    let lambdas: Vec<f64> = stdout
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(lambdas.len(), 21);
    assert_eq!(lambdas[0], 0.0);
    assert_eq!(lambdas[20], 1.0);
    assert!(d.join("search.csv").exists());

    let acc: f64 = ok(d, &["--config", "plan.txt", "eval", "--encoder", "ft.task0.tvf", "--head", "ft.task0.head.tvf", "--task", "task0"])
        .trim()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(taskarith(d, &[]).status.code(), Some(1));
    assert_eq!(taskarith(d, &["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(taskarith(d, &["merge"]).status.code(), Some(1));
    assert_eq!(taskarith(d, &["--help"]).status.code(), Some(0));

    let missing = taskarith(d, &["extract", "--ft", "a.tvf", "--pre", "b.tvf"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    assert_eq!(taskarith(d, &["--set", "nonsense", "verify-fixtures"]).status.code(), Some(2));
}

#[test]
fn fixtures_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let shipped = taskarith::fixtures::default_dir();
    ok(d, &["verify-fixtures", "--dir", shipped.to_str().unwrap()]);

    for (name, file, _) in taskarith::fixtures::FIXTURES {
        ok(d, &["--out", file, "make-fixture", name]);
    }
    std::fs::copy(shipped.join("MANIFEST"), d.join("MANIFEST")).unwrap();
    ok(d, &["verify-fixtures", "--dir", "."]);

    std::fs::write(d.join("tiny-report.csv"), "tampered\n").unwrap();
    assert_eq!(taskarith(d, &["verify-fixtures", "--dir", "."]).status.code(), Some(2));
}
