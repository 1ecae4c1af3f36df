use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn voltctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn static_run_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("static");
    let o = voltctl(&[
        "run",
        "--case",
        &data("case14.m"),
        "--scale",
        "3.1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("converged: true"));
    let table = fs::read_to_string(out.join("voltages_before_after.txt")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert!(rows[0].starts_with("bus"));
    assert!(rows[1].starts_with("before"));
    let after: Vec<f64> = rows[2].split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect();
    assert_eq!(after.len(), 14);
    assert_eq!((after[3], after[13]), (0.95, 0.95));

    // summary cost equals the sum of squares of the final trajectory row
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    let cost: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("cost: "))
        .unwrap()
        .parse()
        .unwrap();
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let header: Vec<&str> = traj.lines().next().unwrap().split(',').collect();
    let last: Vec<f64> = traj.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let sumsq: f64 = header
        .iter()
        .zip(&last)
        .filter(|(h, _)| h.starts_with("q_"))
        .map(|(_, q)| q * q)
        .sum();
    assert!((cost - sumsq).abs() < 1e-8, "{cost} vs {sumsq}");
}

#[test]
fn fault_run_reports_costs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fault");
    let o = voltctl(&[
        "run",
        "--scenario",
        "fault",
        "--case",
        "bundled:case14",
        "--scale",
        "3.1",
        "--plant",
        "linear",
        "--trip",
        "4:5@20000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    for key in ["pre_trip_cost:", "post_trip_cost:", "cost_ratio:", "trip: 4:5@20000"] {
        assert!(s.contains(key), "missing {key} in\n{s}");
    }
}

#[test]
fn config_file_is_read_relative_to_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(data("case14.m"), dir.path().join("grid.m")).unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "case = \"grid.m\"\nplant = \"linear\"\nload_scale = 2.0\noutput_dir = \"{}\"\n",
            dir.path().join("o").display()
        ),
    )
    .unwrap();
    let o = voltctl(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("o/trajectory.csv").exists());
}

#[test]
fn usage_and_config_errors_exit_two() {
    assert_eq!(voltctl(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(voltctl(&["run"]).status.code(), Some(2));
    assert_eq!(voltctl(&["run", "--case", "bundled:case14", "--trip", "4-5"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "case = \"bundled:case14\"\nvmaks = 1.1\n").unwrap();
    let o = voltctl(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vmaks"));
    let o = voltctl(&["run", "--case", "/nonexistent.m"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_three() {
    // tripping the only link to bus 8 islands it
    let dir = tempfile::tempdir().unwrap();
    let o = voltctl(&[
        "run",
        "--scenario",
        "fault",
        "--case",
        "bundled:case14",
        "--trip",
        "7:8@10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("island"));
}

#[test]
fn not_converged_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(
        &cfg,
        format!(
            "case = \"bundled:case14\"\nload_scale = 3.1\nplant = \"linear\"\nhorizon = 5.0\noutput_dir = \"{}\"\n",
            dir.path().join("o").display()
        ),
    )
    .unwrap();
    let o = voltctl(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("converged: false"));
}

#[test]
fn powerflow_and_sensitivity_print_csv() {
    let o = voltctl(&["powerflow", "--case", "bundled:case14"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.starts_with("bus,vm,va_deg\n1,1.06000000,0.000000\n"));
    assert_eq!(s.lines().count(), 15);

    let o = voltctl(&["sensitivity", "--case", "bundled:case30"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 25);
    assert_eq!(s.lines().next().unwrap().split(',').count(), 25);
}

#[test]
fn validate_prints_table() {
    let o = voltctl(&["validate", "--case", "bundled:case14"]);
    let s = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{s}");
    assert!(s.lines().count() >= 5);
    assert!(s.lines().all(|l| l.starts_with("PASS ")), "{s}");

    // far from the stock operating point the fixed linear model drifts
    let o = voltctl(&["validate", "--case", "bundled:case14", "--scale", "3.1"]);
    let s = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{s}");
    let fails: Vec<&str> = s.lines().filter(|l| l.starts_with("FAIL ")).collect();
    assert_eq!(fails.len(), 1, "{s}");
    assert!(fails[0].contains("finite differences"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = voltctl(&[
            "run",
            "--seedless",
            "--case",
            "bundled:case14",
            "--scale",
            "2.5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        ["trajectory.csv", "voltages_before_after.txt", "summary.txt"].map(|f| fs::read(out.join(f)).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}
