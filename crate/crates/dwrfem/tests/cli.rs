//! End-to-end tests of the command line front end, driving the built
//! binary the way a user would.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dwrfem"))
}

fn repo_config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_RUN: &str = r#"
problem = "smooth_manufactured"
mode = "steady"
p_primal = 1
p_dual = 2

[stabilization]
shock_capturing = false

[goal]
kind = "volume_mean"

[adapt]
max_iters = 7

[mesh]
resolution = 4
"#;

#[test]
fn run_writes_artifacts_with_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let out_dir = dir.path().join("out");

    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--quiet", "--output-dir"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).is_empty(), "quiet run printed: {}", stdout(&out));

    let history = std::fs::read_to_string(out_dir.join("history.csv")).unwrap();
    let rows: Vec<&str> = history.lines().collect();
    // Header plus the initial solve plus seven adaptive iterations.
    assert_eq!(rows.len(), 1 + 8, "history:\n{history}");
    assert!(rows[0].starts_with("iter,dofs_at_T,"));

    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("status: completed"), "{summary}");

    for iter in 0..8 {
        let s = out_dir.join(format!("snapshots/solution_{iter:03}.vtk"));
        let z = out_dir.join(format!("snapshots/dual_{iter:03}.vtk"));
        assert!(s.exists(), "missing {s:?}");
        assert!(z.exists(), "missing {z:?}");
    }
    let body = std::fs::read_to_string(out_dir.join("snapshots/solution_000.vtk")).unwrap();
    assert!(body.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(body.contains("SCALARS solution double 1"));
    assert!(body.contains("SCALARS indicator double 1"));
}

#[test]
fn reruns_reproduce_history_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();

    let mut runs = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = bin()
            .args([
                "run",
                cfg.to_str().unwrap(),
                "--quiet",
                "--max-iters",
                "3",
                "--output-dir",
            ])
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        runs.push(std::fs::read(out_dir.join("history.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1], "history.csv differs between reruns");
}

#[test]
fn unknown_keys_abort_with_the_key_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = SMALL_RUN.replace("[adapt]\nmax_iters = 7", "[adapt]\nthetaspace = 0.4");
    std::fs::write(&cfg, text).unwrap();

    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--quiet"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("thetaspace"),
        "stderr does not cite the key: {}",
        stderr(&out)
    );
}

#[test]
fn validate_passes_bundled_configs_silently() {
    for name in [
        "smooth_volume_mean.toml",
        "tanh_weighted_l2.toml",
        "tanh_point_value.toml",
        "hump_terminal_mean.toml",
    ] {
        let out = bin().args(["validate", &repo_config(name)]).output().unwrap();
        assert!(out.status.success(), "{name}: {}", stdout(&out));
        assert!(stdout(&out).is_empty(), "{name}: {}", stdout(&out));
    }
}

#[test]
fn validate_reports_all_violations_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        r#"
problem = "tanh_layer"
mode = "steady"
p_primal = 2
p_dual = 2

[goal]
kind = "point_value_regularized"
x_e = [0.99, 0.5]
radius = 0.05
"#,
    )
    .unwrap();

    let out = bin().args(["validate", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let report = stdout(&out);
    assert!(report.contains("dual degree must exceed"), "{report}");
    assert!(report.contains("ball"), "{report}");
    assert_eq!(report.lines().count(), 2, "{report}");
}
