use std::path::Path;
use std::process::{Command, Output};

fn mgtlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgtlab")).args(args).current_dir(dir).output().unwrap()
}

const ROOTS: &str = include_str!("../scenarios/roots.toml");

#[test]
fn list_shows_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mgtlab(&["--list"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.contains("singular-limit"));
}

#[test]
fn run_writes_artifacts_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("r.toml"), ROOTS).unwrap();
    let first = mgtlab(&["run", "r.toml", "--out", "a"], tmp.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout).contains("[roots] PASS"));
    let dir = tmp.path().join("a/roots");
    for f in ["checks.csv", "summary.txt", "manifest.toml", "series.csv", "fits.csv"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let manifest = std::fs::read_to_string(dir.join("manifest.toml")).unwrap();
    assert!(manifest.contains("scenario_sha256"));
    mgtlab(&["run", "r.toml", "--out", "b"], tmp.path());
    for f in ["checks.csv", "series.csv", "fits.csv"] {
        assert_eq!(std::fs::read(dir.join(f)).unwrap(), std::fs::read(tmp.path().join("b/roots").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failing_check_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    // a slope no expansion reaches
    std::fs::write(tmp.path().join("r.toml"), ROOTS.replace("min_slope_lambda1 = 5.8", "min_slope_lambda1 = 9.0")).unwrap();
    let out = mgtlab(&["run", "r.toml", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn bad_config_exits_two_and_names_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("r.toml"), ROOTS.replace("points = 20", "points = 20\nbogus_key = 1")).unwrap();
    let out = mgtlab(&["run", "r.toml", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
    assert!(!tmp.path().join("o/roots").exists());

    std::fs::write(tmp.path().join("n.toml"), ROOTS.replace("tau = 0.5", "tau = -0.5")).unwrap();
    assert_eq!(mgtlab(&["run", "n.toml"], tmp.path()).status.code(), Some(2));
    assert_eq!(mgtlab(&["run", "missing.toml"], tmp.path()).status.code(), Some(2));
    assert_eq!(mgtlab(&["run"], tmp.path()).status.code(), Some(2));
}

#[test]
fn plots_are_emitted_from_series() {
    let tmp = tempfile::tempdir().unwrap();
    let src = include_str!("../scenarios/decay-rates.toml");
    let sc = mgt_lab::cli::Scenario::parse(src, "decay-rates").unwrap();
    mgt_lab::cli::run(&sc, src, tmp.path()).unwrap();
    let plots = tmp.path().join("decay-rates/plots");
    let gp: Vec<_> = std::fs::read_dir(&plots).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().extension().is_some_and(|x| x == "gp")).collect();
    assert!(!gp.is_empty());
    let empty = tempfile::tempdir().unwrap();
    assert!(mgt_lab::cli::emit_plots(empty.path()).is_err());
}
