use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adasgd::harness::CSV_HEADER;

fn adasgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adasgd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_to(path: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    adasgd(&args)
}

#[test]
fn train_writes_header_plus_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let o = train_to(
        &csv,
        &["--synthetic", "200,5,1.0", "--optimizer", "ada-sgd", "--seed", "1", "--max-iters", "50"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 51);
    assert_eq!(lines[0], CSV_HEADER);
    let iters: Vec<usize> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, (0..50).collect::<Vec<_>>());
    // loss only every 10th iteration
    assert!(!lines[1].split(',').nth(3).unwrap().is_empty());
    assert!(lines[2].split(',').nth(3).unwrap().is_empty());
    let out = stdout(&o);
    assert!(out.contains("lambda=0.005"), "{out}");
    assert!(out.contains("iterations=50"), "{out}");
}

#[test]
fn identical_commands_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--synthetic", "300,4,1.0", "--optimizer", "ada-momentum", "--seed", "5", "--max-iters", "40"];
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(train_to(&a, &args).status.success());
    assert!(train_to(&b, &args).status.success());
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"synthetic": "100,3,1.0", "max_iters": 7, "seed": 2, "lambda": "auto"}"#).unwrap();
    let csv = dir.path().join("m.csv");
    let o = train_to(&csv, &["--config", cfg.to_str().unwrap(), "--max-iters", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 5);
    assert!(stdout(&o).contains("seed=2"));
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["train", "--bogus-flag"],
        vec!["train", "--synthetic", "100,3,1.0", "--p", "not-a-number"],
        vec!["train", "--synthetic", "100,3,1.0", "--optimizer", "newton"],
        vec!["train", "--synthetic", "100,3,1.0", "--optimizer", "sgd-fixed"],
        vec!["train", "--synthetic", "100,3"],
        vec!["train"],
        vec!["compare", "--variants", "", "--out-dir", "x", "--synthetic", "10,2,1.0"],
        vec!["markov", "--trials", "0"],
    ] {
        let o = adasgd(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn dataset_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.libsvm");
    fs::write(&bad, "+1 1:0.5\nnot a row\n").unwrap();
    let o = adasgd(&["train", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let missing = adasgd(&["train", "--data", "/nonexistent/file.libsvm"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn trains_on_libsvm_file() {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/ionosphere.libsvm");
    let o = adasgd(&["train", "--data", data, "--max-iters", "20"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("n=351 d=34"));
}

#[test]
fn check_passes_and_corruption_fails() {
    let ok = adasgd(&["check", "--synthetic", "300,5,1.0"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("PASS"));
    let bad = adasgd(&["check", "--synthetic", "300,5,1.0", "--corrupt-gradient"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

fn bounds_value(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {out}"))
        .parse()
        .unwrap()
}

#[test]
fn bounds_reproduce_hand_values() {
    let p = (2.0 / std::f64::consts::E).to_string();
    let o = adasgd(&["bounds", "--kappa", "1", "--n", "1", "--p", &p, "--eps", "0.5"]);
    assert!(o.status.success());
    assert_eq!(bounds_value(&stdout(&o), "hess_bound"), 64.0);

    let o = adasgd(&["bounds", "--m-lower", "1", "--m-upper", "4", "--nu", "0", "--eps", "0"]);
    assert!(o.status.success());
    assert_eq!(bounds_value(&stdout(&o), "rho_rate"), 0.75);

    let at = |k: &str| {
        let o = adasgd(&["bounds", "--kappa", k, "--n", "10", "--p", "0.1", "--eps", "0.1"]);
        bounds_value(&stdout(&o), "hess_bound")
    };
    let (one, two) = (at("3"), at("6"));
    assert!((two / one - 4.0).abs() < 1e-3, "{one} {two}");
}

#[test]
fn compare_writes_one_csv_per_run_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cmp");
    let o = adasgd(&[
        "compare",
        "--variants",
        "ada-sgd,sgd-fixed:ada-median",
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--synthetic",
        "300,4,1.0",
        "--max-iters",
        "30",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let csvs = fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() != "summary.csv")
        .count();
    assert_eq!(csvs, 2);
}

#[test]
fn markov_subcommand_reports_pass() {
    let o = adasgd(&["markov", "--trials", "300", "--seed", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
}
