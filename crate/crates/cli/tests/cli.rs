use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn apsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = apsim(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn csv_rows(dir: &Path, name: &str) -> Vec<Vec<String>> {
    read(dir, name)
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn simulate_writes_four_day_window() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    ok(&["simulate", "-o", path(&out)]);
    let rows = csv_rows(&out, "trajectory.csv");
    assert_eq!(rows.len(), 1 + 4 * 288);
    let header = &rows[0];
    for col in [
        "cgm_mmol_l",
        "carb_g_min",
        "exercise_intensity",
        "basal_mu_min",
        "bolus_mu_min",
    ] {
        assert!(header.iter().any(|h| h == col), "{col}");
    }
    assert_eq!(rows[1][0], (28 * 1440).to_string());
    for name in [
        "manifest.toml",
        "report.json",
        "patient.toml",
        "scenario.events",
        "controller_state.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let snap = read(&out, "controller_state.json");
    assert!(snap.starts_with("{\"version\":1,\"i_basal\":"));
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = |o| {
        vec![
            "simulate",
            "--subject",
            "2",
            "--days",
            "2",
            "--start-day",
            "3",
            "-o",
            o,
        ]
    };
    ok(&args(path(&a)));
    ok(&args(path(&b)));
    for name in [
        "trajectory.csv",
        "report.json",
        "manifest.toml",
        "scenario.events",
    ] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
}

#[test]
fn simulate_replays_event_file() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "simulate",
        "--days",
        "1",
        "--start-day",
        "0",
        "-o",
        path(&a),
    ]);
    let events = a.join("scenario.events");
    ok(&[
        "simulate",
        "--days",
        "1",
        "--start-day",
        "0",
        "--events",
        path(&events),
        "-o",
        path(&b),
    ]);
    assert_eq!(read(&a, "trajectory.csv"), read(&b, "trajectory.csv"));
}

#[test]
fn unknown_key_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "[trial]\nweeks = 2\nwarmup_weeks = 1\nbogus_key = 3\n",
    )
    .unwrap();
    let out = apsim(&[
        "trial",
        "--config",
        path(&cfg),
        "-o",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_key"), "{err}");
}

#[test]
fn controller_file_unknown_key_is_named() {
    let tmp = TempDir::new().unwrap();
    let ctl = tmp.path().join("ctl.toml");
    fs::write(&ctl, "k_p_ma = 0.2\nkp = 1.0\n").unwrap();
    let out = apsim(&[
        "simulate",
        "--controller",
        path(&ctl),
        "-o",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`kp`"));
}

#[test]
fn invalid_value_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let out = apsim(&[
        "trial",
        "--weeks",
        "4",
        "--warmup-weeks",
        "4",
        "-o",
        path(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup_weeks"));
}

#[test]
fn missing_steady_state_exits_with_simulation_code() {
    let tmp = TempDir::new().unwrap();
    let patient = tmp.path().join("patient.toml");
    let text = apsim::patient::NOMINAL_PATIENT_TOML;
    let edited: String = text
        .lines()
        .map(|l| {
            if l.trim_start().starts_with("renal_rate") {
                "renal_rate = 0.0"
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    assert_ne!(edited, text.trim_end());
    fs::write(&patient, edited).unwrap();
    let out = apsim(&[
        "simulate",
        "--patient",
        path(&patient),
        "-o",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn trial_window_and_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("t");
    let stdout = ok(&[
        "trial",
        "--subjects",
        "10",
        "--weeks",
        "6",
        "--warmup-weeks",
        "4",
        "-o",
        path(&out),
    ])
    .stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("TIR (normoglycemia)"));
    let subjects = csv_rows(&out, "subjects.csv");
    assert_eq!(subjects.len(), 1 + 10 + 1);
    let col = |name: &str| subjects[0].iter().position(|h| h == name).unwrap();
    for row in &subjects[1..11] {
        assert_eq!(row[col("status")], "ok");
        assert_eq!(row[col("eval_steps")], (2 * 7 * 288).to_string());
    }
    assert_eq!(subjects[11][0], "aggregate");
    assert!(!subjects[11][col("tir_pct")].is_empty());
    let targets = csv_rows(&out, "targets.csv");
    assert_eq!(targets.len(), 12);
    assert_eq!(targets[1][0], "Average glucose");
    assert_eq!(targets[6][0], "TIR (normoglycemia)");
    assert_eq!(targets[11][0], "All targets");
    assert_eq!(csv_rows(&out, "cdf.csv").len(), 1 + 251);
    assert_eq!(csv_rows(&out, "tir_box.csv").len(), 1 + 5);
    for name in [
        "summary.json",
        "tdd_histogram.csv",
        "population.toml",
        "manifest.toml",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn trial_outputs_independent_of_workers_and_reproducible_from_manifest() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    let base = [
        "trial",
        "--subjects",
        "6",
        "--weeks",
        "2",
        "--warmup-weeks",
        "1",
    ];
    ok(&[&base[..], &["--workers", "1", "-o", path(&a)]].concat());
    ok(&[&base[..], &["--workers", "4", "-o", path(&b)]].concat());
    let manifest = a.join("manifest.toml");
    ok(&["trial", "--config", path(&manifest), "-o", path(&c)]);
    for name in [
        "summary.json",
        "subjects.csv",
        "targets.csv",
        "cdf.csv",
        "tdd_histogram.csv",
        "tir_box.csv",
        "population.toml",
    ] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
        assert_eq!(read(&a, name), read(&c, name), "{name}");
    }
}

#[test]
fn population_file_drives_trial() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let base = ["trial", "--weeks", "2", "--warmup-weeks", "1"];
    ok(&[&base[..], &["--subjects", "3", "-o", path(&a)]].concat());
    let pop = a.join("population.toml");
    ok(&[&base[..], &["--population", path(&pop), "-o", path(&b)]].concat());
    assert_eq!(read(&a, "summary.json"), read(&b, "summary.json"));
}

#[test]
fn partial_failure_exit_code_and_error_rows() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("t");
    // A directory where subject 1's trajectory file should go.
    fs::create_dir_all(out.join("trajectories/trajectory_000001.csv")).unwrap();
    let res = apsim(&[
        "trial",
        "--subjects",
        "3",
        "--weeks",
        "2",
        "--warmup-weeks",
        "1",
        "--trajectories",
        "-o",
        path(&out),
    ]);
    assert_eq!(
        res.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let rows = csv_rows(&out, "subjects.csv");
    assert_eq!(rows[1][1], "ok");
    assert_eq!(rows[2][1], "failed");
    assert_eq!(rows[3][1], "ok");
    assert_eq!(rows[4][1], "2/3");
    assert!(out.join("trajectories/trajectory_000000.csv").is_file());
    let traj = csv_rows(&out.join("trajectories"), "trajectory_000002.csv");
    assert_eq!(traj.len(), 1 + 2 * 7 * 288);
}

#[test]
fn report_rebuilds_identical_plot_files() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "trial",
        "--subjects",
        "4",
        "--weeks",
        "2",
        "--warmup-weeks",
        "1",
        "-o",
        path(&a),
    ]);
    let stdout = ok(&["report", "--input", path(&a), "-o", path(&b)]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("All targets"));
    for name in [
        "summary.json",
        "subjects.csv",
        "targets.csv",
        "cdf.csv",
        "tdd_histogram.csv",
        "tir_box.csv",
    ] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let missing = apsim(&["report", "--input", path(&tmp.path().join("nope"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn bolus_curve_six_subjects() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["bolus-curve", "-o", path(&a)]);
    let summary = csv_rows(&a, "bolus_summary.csv");
    assert_eq!(summary.len(), 7);
    for (i, row) in summary[1..].iter().enumerate() {
        assert_eq!(row[0], i.to_string());
        assert_eq!(row[1], "1", "subject {i} landscape/curve mismatch");
        let curve = csv_rows(&a, &format!("curve_{i:06}.csv"));
        assert_eq!(curve.len(), 31);
        assert_eq!(curve[1][0], "0");
        assert_eq!(curve[1][2], "0");
        let bolus: Vec<f64> = curve[1..].iter().map(|r| r[2].parse().unwrap()).collect();
        assert!(bolus.windows(2).all(|w| w[1] >= w[0]));
        let land = csv_rows(&a, &format!("landscape_{i:06}.csv"));
        assert_eq!(land.len(), 1 + 30 * 151);
    }
    ok(&[
        "bolus-curve",
        "--subjects",
        "4",
        "--meal-points",
        "4",
        "--workers",
        "3",
        "-o",
        path(&b),
    ]);
    let full = csv_rows(&a, "curve_000004.csv");
    let short = csv_rows(&b, "curve_000004.csv");
    assert_eq!(short.len(), 5);
    // 145 * 1 / 3 is not on the default grid; only meal 0 is shared.
    assert_eq!(short[1], full[1]);
}

#[test]
fn bolus_curve_rejects_unknown_subject() {
    let tmp = TempDir::new().unwrap();
    let pop_dir = tmp.path().join("p");
    ok(&[
        "trial",
        "--subjects",
        "2",
        "--weeks",
        "2",
        "--warmup-weeks",
        "1",
        "-o",
        path(&pop_dir),
    ]);
    let out = apsim(&[
        "bolus-curve",
        "--population",
        path(&pop_dir.join("population.toml")),
        "--subjects",
        "5",
        "-o",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("subject 5"));
}
