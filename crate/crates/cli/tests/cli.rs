//! End-to-end runs of the olpdg binary: exit codes, artifact layout,
//! determinism, and the verify round trip.

use std::path::Path;
use std::process::{Command, Output};

use olpdg_cli::format::save_game;
use olpdg_core::smartgrid::{default_scenario, to_nzdg};

fn olpdg(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_olpdg"));
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().expect("spawning olpdg")
}

fn golden_scenario_path() -> &'static Path {
    Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/smartgrid_default.toml"
    ))
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn smartgrid_default_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = olpdg(&["smartgrid", "--out"], &[dir.path()]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    // header plus one row per stage, 13 stages including the terminal one
    assert_eq!(line_count(&dir.path().join("trajectory.csv")), 14);
    assert_eq!(line_count(&dir.path().join("lcp.csv")), 61);
    assert_eq!(line_count(&dir.path().join("grid_series.csv")), 14);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["result"], "PASS");
    assert_eq!(report["certified"], true);
    assert_eq!(report["lcp"]["dim"], 60);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("result: PASS"), "{summary}");
    assert!(dir.path().join("scenario.toml").exists());
}

#[test]
fn solve_accepts_scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = olpdg(
        &["solve", "--input"],
        &[golden_scenario_path(), Path::new("--out"), dir.path()],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(dir.path().join("trajectory.csv").exists());
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = olpdg(&["smartgrid", "--seed", "7", "--out"], &[dir.path()]);
        assert_eq!(out.status.code(), Some(0), "{out:?}");
    }
    for name in ["trajectory.csv", "lcp.csv", "grid_series.csv"] {
        let left = std::fs::read(a.path().join(name)).unwrap();
        let right = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}

#[test]
fn verify_reproduces_solve_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let solve = olpdg(
        &["solve", "--input"],
        &[golden_scenario_path(), Path::new("--out"), dir.path()],
    );
    assert_eq!(solve.status.code(), Some(0), "{solve:?}");
    // verify overwrites report.json in place, so capture solve's numbers first
    let solved = read_json(&dir.path().join("report.json"));
    let solve_res = solved["kkt"]["max_residual"].as_f64().unwrap();

    let verify = olpdg(
        &["verify", "--input"],
        &[golden_scenario_path(), Path::new("--out"), dir.path()],
    );
    assert_eq!(verify.status.code(), Some(0), "{verify:?}");
    let verified = read_json(&dir.path().join("report.json"));
    assert_eq!(verified["mode"], "verify");
    let verify_res = verified["kkt"]["max_residual"].as_f64().unwrap();
    assert!(
        (solve_res - verify_res).abs() <= 1e-12,
        "residual drift through the csv round trip: {solve_res} vs {verify_res}"
    );
}

#[test]
fn verify_flags_tampered_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let solve = olpdg(
        &["solve", "--input"],
        &[golden_scenario_path(), Path::new("--out"), dir.path()],
    );
    assert_eq!(solve.status.code(), Some(0), "{solve:?}");
    let path = dir.path().join("trajectory.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(str::to_string).collect();
    let u0: f64 = cells[7].parse().unwrap();
    cells[7] = format!("{:.16e}", u0 + 0.3);
    lines[5] = cells.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let verify = olpdg(
        &["verify", "--input"],
        &[golden_scenario_path(), Path::new("--out"), dir.path()],
    );
    assert_eq!(verify.status.code(), Some(2), "{verify:?}");
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["result"], "FAIL");
}

#[test]
fn check_rejects_non_potential_games() {
    let dir = tempfile::tempdir().unwrap();
    let mut game = to_nzdg(&default_scenario()).unwrap();
    // break the shared-state-cost condition for player 1 only
    game.q[0][0][(0, 0)] += 0.5;
    let input = dir.path().join("skewed.toml");
    save_game(&input, &game).unwrap();

    let check = olpdg(
        &["check", "--input"],
        &[&input, Path::new("--out"), &dir.path().join("check")],
    );
    assert_eq!(check.status.code(), Some(2), "{check:?}");
    let report = read_json(&dir.path().join("check/report.json"));
    assert_eq!(report["result"], "FAIL");
    assert_eq!(report["potential"]["is_potential"], false);

    let solve = olpdg(
        &["solve", "--input"],
        &[&input, Path::new("--out"), &dir.path().join("solve")],
    );
    assert_eq!(solve.status.code(), Some(2), "{solve:?}");
}

#[test]
fn sweep_writes_per_scale_runs_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = olpdg(
        &[
            "sweep",
            "--param",
            "a2",
            "--scale",
            "0.8,1.0,1.2",
            "--out",
        ],
        &[dir.path()],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    for name in ["a2_0.8", "a2_1", "a2_1.2"] {
        let sub = dir.path().join(name);
        assert!(sub.join("trajectory.csv").exists(), "missing {name}");
        assert!(sub.join("report.json").exists(), "missing {name}");
    }
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut rows = table.lines();
    assert_eq!(rows.next(), Some("scale,total_storage1,total_storage2,certified"));
    let totals: Vec<f64> = rows
        .map(|line| line.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 3);
    assert!(
        totals[0] < totals[1] && totals[1] < totals[2],
        "storage should grow with the incentive: {totals:?}"
    );
}

#[test]
fn hard_errors_exit_one_and_leave_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("mangled.toml");
    std::fs::write(&input, "schema = 1\nkind = \"game\"\n").unwrap();
    let out = olpdg(
        &["solve", "--input"],
        &[&input, Path::new("--out"), &dir.path().join("run")],
    );
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage load"), "{stderr}");
    let report = read_json(&dir.path().join("run/report.json"));
    assert_eq!(report["result"], "ERROR at stage load");
    assert_eq!(report["error"]["stage"], "load");
}
