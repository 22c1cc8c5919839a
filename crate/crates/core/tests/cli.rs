use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weighted-sobolev"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fibers_on_segment_are_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("segment.toml");
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = run(&["fibers", "--config", cfg.to_str().unwrap(), "--scales", "1/16,1/32,1/64", "--out", out]);
    assert_eq!(code, 0, "{err}");
    let header = std::fs::read_to_string(dir.path().join("fibers.csv")).unwrap();
    let cols: Vec<&str> = header.lines().next().unwrap().split(',').collect();
    let dim = cols.iter().position(|c| *c == "dim").unwrap();
    let rows = csv_rows(&dir.path().join("fibers.csv"));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[dim] == "1"));
    let meta = std::fs::read_to_string(dir.path().join("meta.txt")).unwrap();
    assert!(meta.contains("jitter"));
    assert!(meta.contains("cantor_truncation_bound"));
    assert!(meta.contains("unstable_mass_fraction"));
}

#[test]
fn heat_on_fat_cantor_has_zero_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("fat_cantor.toml");
    let args = [
        "heat", "--config", cfg.to_str().unwrap(), "--scales", "2^-8,2^-9", "--f", "cos(pi*x1)", "--t", "0.1", "--steps", "64",
        "--out", dir.path().to_str().unwrap(),
    ];
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let rows = csv_rows(&dir.path().join("heat.csv"));
    assert_eq!(rows.len(), 65);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn verify_default_suite_exits_zero_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let (code, out, err) = run(&["verify", "--seed", "7", "--out", d.path().to_str().unwrap()]);
        assert_eq!(code, 0, "{out}{err}");
    }
    for name in ["report.txt", "report.csv", "meta.txt"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let csv = std::fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert!(!csv.contains(",FAIL,") && !csv.contains(",ERROR,"));
}

#[test]
fn verify_suite_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("suite.toml");
    let (code, out, err) = run(&["verify", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn rejected_divergence_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("segment.toml");
    // a normal field along a segment has no divergence
    let args = ["divergence", "--config", cfg.to_str().unwrap(), "--scales", "1/16,1/32", "--f", "0,x1*(1-x1)", "--out"];
    let (code, out, _) = run(&[&args[..], &[dir.path().to_str().unwrap()]].concat());
    assert_eq!(code, 1, "{out}");
    let tangent = ["divergence", "--config", cfg.to_str().unwrap(), "--scales", "1/16,1/32", "--f", "x1*(1-x1),0", "--out"];
    let (code, out, _) = run(&[&tangent[..], &[dir.path().to_str().unwrap()]].concat());
    assert_eq!(code, 0, "{out}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let seg = config("segment.toml");
    let seg = seg.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["fibers", "--config", seg, "--scales", "1/32,1/16", "--out", out],
        vec!["mwug", "--config", seg, "--scales", "1/16", "--f", "x1 +", "--out", out],
        vec!["fibers", "--config", "/nonexistent.toml", "--scales", "1/16", "--out", out],
        vec!["fibers", "--scales", "1/16"],
        vec!["verify", "--trials", "0", "--out", out],
    ];
    for args in cases {
        let (code, _, err) = run(&args);
        assert_eq!(code, 2, "{args:?}: {err}");
    }
}

#[test]
fn oversized_grid_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let seg = config("segment.toml");
    let (code, _, err) = run(&["fibers", "--config", seg.to_str().unwrap(), "--scales", "2^-13", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn tensor_command_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = config("lebesgue_interval.toml");
    let b = config("ternary.toml");
    let args = ["tensor", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap(), "--scales", "1/27,1/81", "--out", dir.path().to_str().unwrap()];
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{out}{err}");
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.contains("tensor_fibers,PASS"));
    assert!(csv.contains("tensor_energy,PASS"));
}
