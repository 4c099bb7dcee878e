use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tanbr"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_demo_config() {
    let o = run(&["validate", "--config", demo_config().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok: gaussian-bump on K=4 V=2 T=600"));
}

#[test]
fn oracle_picks_first_vertex_on_linear_fixture() {
    let o = run(&["oracle", "--config", fixture("linear_e1.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("x* = [1.000000, 0.000000, 0.000000]"), "{text}");
    assert!(text.lines().any(|l| l == "value = 1"), "{text}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["run", "--config", "x.json", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_reports_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"env": "linear", "K": 3, "V": 1, "T": 5, "tree": {"smoothness_rho": 1.5}}"#).unwrap();
    let o = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("smoothness_rho"), "{err}");

    let o = run(&["validate", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    fs::write(
        &cfg,
        r#"{"env": "gaussian-bump", "K": 3, "V": 2, "T": 60, "seeds": [4, 5],
            "policies": ["tanbr", "nucb", "average", "fixed:2", "random"],
            "net": {"width": 8, "depth": 2}, "train": {"sgd_steps_per_round": 2}}"#,
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (ra, rb) = (read_dir(&a), read_dir(&b));
    assert!(ra.iter().any(|(n, _)| n == "tanbr_seed4.csv"));
    assert!(ra.iter().any(|(n, _)| n == "fixed-2_seed5.csv"));
    assert!(ra.iter().any(|(n, _)| n == "regret_summary.csv"));
    assert!(ra.iter().any(|(n, _)| n == "config.resolved.json"));
    assert!(!ra.iter().any(|(n, _)| n == "failures.csv"));
    assert_eq!(ra, rb);

    let c = dir.path().join("c");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed-override", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_dir(&c), ra);
}
