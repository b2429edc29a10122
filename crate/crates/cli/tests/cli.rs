use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hho-brinkman"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn shipped_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/meshes/hexagonal")
}

fn csv_rows(dir: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(dir.join("errors.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "level,h,ndof_velocity,ndof_pressure,newton_iters,err_mu_r,err_nu,err_monitored,err_pressure_lr,rate_monitored"
    );
    lines
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn three_levels_give_three_rows_and_two_rates() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "--family",
        "triangular",
        "--levels",
        "3",
        "--k",
        "1",
        "--r",
        "2",
        "--mu",
        "1",
        "--nu",
        "1",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(out.path());
    assert_eq!(rows.len(), 3);
    let rates: Vec<&String> = rows
        .iter()
        .map(|r| &r[9])
        .filter(|r| !r.is_empty())
        .collect();
    assert_eq!(rates.len(), 2);
    assert!(rows.iter().all(|r| r[4] == "1"));
    for level in 0..3 {
        let f = fs::read_to_string(out.path().join(format!("friction_level{level}.csv"))).unwrap();
        assert!(f.starts_with("level,cell_id,h_T,C_f_T,regime\n"));
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("rate"), "{stdout}");
}

#[test]
fn exponent_at_most_one_is_a_usage_error() {
    let o = run(&["--r", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("r must exceed 1"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["--levels", "two"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn file_family_runs_on_the_shipped_meshes() {
    let out = tempfile::tempdir().unwrap();
    let dir = shipped_dir();
    let o = run(&[
        "--family",
        "file",
        "--mesh-dir",
        dir.to_str().unwrap(),
        "--levels",
        "2",
        "--k",
        "1",
        "--r",
        "3",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(out.path());
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| !r[7].is_empty()));
}

#[test]
fn file_family_without_enough_meshes_is_a_usage_error() {
    let dir = shipped_dir();
    let o = run(&[
        "--family",
        "file",
        "--mesh-dir",
        dir.to_str().unwrap(),
        "--levels",
        "9",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("study.toml");
    fs::write(
        &cfg,
        "family = \"hexagonal\"\nlevels = 2\nk = 0\nr = 3.0\nmu = 1.0\nnu = 1.0\n\n[solver]\ntol = 1e-10\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--r",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 2);
    // A linear problem takes exactly one Newton step.
    assert!(rows.iter().all(|r| r[4] == "1"), "{rows:?}");

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "levels = 2\nunknown_key = 1\n").unwrap();
    let o = run(&["--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_one() {
    let o = run(&[
        "--levels",
        "1",
        "--r",
        "4",
        "--mu",
        "1",
        "--nu",
        "0",
        "--max-iter",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn runs_are_bitwise_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&[
            "--family",
            "hexagonal",
            "--levels",
            "2",
            "--r",
            "3",
            "--mu",
            "1e-2",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    for name in ["errors.csv", "friction_level0.csv", "friction_level1.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
