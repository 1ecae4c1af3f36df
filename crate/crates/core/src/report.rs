//! Output files for a finished run.
//!
//! - `trajectory.csv`: one row per sample with outputs, load-bus voltages,
//!   multiplier norms and cost
//! - `voltages_before_after.txt`: all-bus magnitudes without and with the
//!   controller, four decimals
//! - `summary.txt`: convergence, cost, binding constraints, violations
//! - `daily.csv`: per-hour figures, daily runs only
//!
//! Formatting is fixed so identical runs give identical bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::netcase::NetworkCase;
use crate::pdgd::Limits;
use crate::sim::{HourSummary, SimulationResult};

/// Distance to a limit within which a constraint is reported as binding.
pub const BINDING_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultCosts {
    pub from: usize,
    pub to: usize,
    pub at: f64,
    pub pre_cost: f64,
    pub post_cost: f64,
}

/// Optional sections of the report.
#[derive(Debug, Clone, Default)]
pub struct ReportExtras<'a> {
    /// All-bus voltages with no controller output.
    pub v_before: Option<DVector<f64>>,
    pub fault: Option<FaultCosts>,
    pub hours: Option<&'a [HourSummary]>,
    pub plant: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub trajectory: PathBuf,
    pub voltages: PathBuf,
    pub summary: PathBuf,
    pub daily: Option<PathBuf>,
}

fn norm(v: &DVector<f64>) -> f64 {
    v.norm()
}

/// Column names of `trajectory.csv`.
pub fn trajectory_header(result: &SimulationResult) -> Vec<String> {
    let p = &result.partition;
    let mut h = vec!["t".to_string()];
    h.extend(p.controlled_bus_ids().iter().map(|id| format!("q_{id}")));
    h.extend(p.load_bus_ids().iter().map(|id| format!("v_{id}")));
    h.extend(["lam_hi_norm", "lam_lo_norm", "mu_hi_norm", "mu_lo_norm", "cost"].map(String::from));
    h
}

pub fn write_trajectory<W: io::Write>(result: &SimulationResult, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(result))?;
    for s in &result.trajectory.samples {
        let mut row = vec![format!("{:.6}", s.t)];
        row.extend(s.state.q.iter().map(|x| format!("{x:.10}")));
        row.extend(s.v.iter().map(|x| format!("{x:.10}")));
        for m in [&s.state.lam_hi, &s.state.lam_lo, &s.state.mu_hi, &s.state.mu_lo] {
            row.push(format!("{:.10}", norm(m)));
        }
        row.push(format!("{:.12}", s.cost));
        w.write_record(&row)?;
    }
    w.flush()
}

fn voltage_row(label: &str, v: &DVector<f64>) -> String {
    let mut s = format!("{label:<8}");
    for x in v.iter() {
        s.push_str(&format!("{x:>8.4}"));
    }
    s.push('\n');
    s
}

pub fn voltages_table(case: &NetworkCase, before: Option<&DVector<f64>>, after: &DVector<f64>) -> String {
    let mut s = format!("{:<8}", "bus");
    for b in &case.buses {
        s.push_str(&format!("{:>8}", b.id));
    }
    s.push('\n');
    if let Some(v) = before {
        s.push_str(&voltage_row("before", v));
    }
    s.push_str(&voltage_row("after", after));
    s
}

/// Constraints within [`BINDING_TOL`] of their limit at the end of the run.
pub fn binding_constraints(result: &SimulationResult, limits: &Limits) -> Vec<String> {
    let p = &result.partition;
    let v = result.final_load_v();
    let q = &result.final_q;
    let mut out = Vec::new();
    for (j, id) in p.load_bus_ids().iter().enumerate() {
        if (v[j] - limits.v_hi[j]).abs() <= BINDING_TOL {
            out.push(format!("v_hi@{id}"));
        }
        if (v[j] - limits.v_lo[j]).abs() <= BINDING_TOL {
            out.push(format!("v_lo@{id}"));
        }
    }
    for (i, id) in p.controlled_bus_ids().iter().enumerate() {
        if (q[i] - limits.q_hi[i]).abs() <= BINDING_TOL {
            out.push(format!("q_hi@{id}"));
        }
        if (q[i] - limits.q_lo[i]).abs() <= BINDING_TOL {
            out.push(format!("q_lo@{id}"));
        }
    }
    out
}

pub fn summary_text(result: &SimulationResult, case: &NetworkCase, limits: &Limits, extras: &ReportExtras<'_>) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| s.push_str(&format!("{k}: {v}\n"));
    line("case", case.name.clone());
    if let Some(p) = extras.plant {
        line("plant", p.to_string());
    }
    line("converged", result.converged.to_string());
    line("final_residual", format!("{:.3e}", result.final_residual));
    line("final_time", format!("{:.6}", result.trajectory.last().map_or(0.0, |x| x.t)));
    line("steps", format!("{} accepted, {} rejected", result.steps_accepted, result.steps_rejected));
    line("cost", format!("{:.12}", result.final_cost));
    let q: Vec<String> = result.final_q.iter().map(|x| format!("{x:.6}")).collect();
    line("final_q", q.join(" "));
    let binding = binding_constraints(result, limits);
    line("binding", if binding.is_empty() { "none".into() } else { binding.join(" ") });
    let fv = &result.final_violations;
    line(
        "final_violation",
        format!("v_over {:.3e} v_under {:.3e} q_over {:.3e} q_under {:.3e}", fv.v_over, fv.v_under, fv.q_over, fv.q_under),
    );
    let mv = &result.violations;
    line(
        "max_violation",
        format!("v_over {:.3e} v_under {:.3e} q_over {:.3e} q_under {:.3e}", mv.v_over, mv.v_under, mv.q_over, mv.q_under),
    );
    line("min_multiplier", format!("{:.3e}", mv.min_multiplier));
    if let Some(f) = &extras.fault {
        line("trip", format!("{}:{}@{}", f.from, f.to, f.at));
        line("pre_trip_cost", format!("{:.12}", f.pre_cost));
        line("post_trip_cost", format!("{:.12}", f.post_cost));
        line("cost_ratio", format!("{:.6}", f.post_cost / f.pre_cost));
    }
    s
}

/// Hourly CSV; voltage extremes are over load buses only.
pub fn daily_table<W: io::Write>(hours: &[HourSummary], load_rows: &[usize], out: W) -> io::Result<()> {
    let range = |v: &DVector<f64>| {
        let it = load_rows.iter().map(|&k| v[k]);
        (it.clone().fold(f64::INFINITY, f64::min), it.fold(f64::NEG_INFINITY, f64::max))
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "hour",
        "factor",
        "v_min_uncontrolled",
        "v_max_uncontrolled",
        "v_min_controlled",
        "v_max_controlled",
        "q_sum",
        "cost",
        "converged",
    ])?;
    for h in hours {
        let (un_lo, un_hi) = range(&h.v_uncontrolled);
        let (co_lo, co_hi) = range(&h.v_controlled);
        w.write_record([
            h.hour.to_string(),
            format!("{:.4}", h.factor),
            format!("{un_lo:.4}"),
            format!("{un_hi:.4}"),
            format!("{co_lo:.4}"),
            format!("{co_hi:.4}"),
            format!("{:.6}", h.q.sum()),
            format!("{:.10}", h.cost),
            h.converged.to_string(),
        ])?;
    }
    w.flush()
}

/// Write all report files into `out_dir`, creating it if needed.
pub fn emit_report(
    result: &SimulationResult,
    case: &NetworkCase,
    limits: &Limits,
    out_dir: &Path,
    extras: &ReportExtras<'_>,
) -> io::Result<ReportPaths> {
    fs::create_dir_all(out_dir)?;
    let paths = ReportPaths {
        trajectory: out_dir.join("trajectory.csv"),
        voltages: out_dir.join("voltages_before_after.txt"),
        summary: out_dir.join("summary.txt"),
        daily: extras.hours.map(|_| out_dir.join("daily.csv")),
    };
    write_trajectory(result, fs::File::create(&paths.trajectory)?)?;
    fs::write(&paths.voltages, voltages_table(case, extras.v_before.as_ref(), &result.final_v))?;
    fs::write(&paths.summary, summary_text(result, case, limits, extras))?;
    if let (Some(hours), Some(p)) = (extras.hours, &paths.daily) {
        daily_table(hours, &result.partition.pq, fs::File::create(p)?)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdgd::Gains;
    use crate::sim::{run_static, PlantMode, RunOptions};

    fn toy_run() -> (NetworkCase, Limits, SimulationResult) {
        let case = crate::parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 0 1 1.1 0.9; 2 1 0 73.6 0 0 1 1 0 0 1 1.1 0.9];\n\
             mpc.gen = [1 0 0 0 0 1 100 1 0 0];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];",
        )
        .unwrap();
        let lim = Limits::uniform(1, 1, (0.95, 1.05), (-0.5, 0.5)).unwrap();
        let opts = RunOptions {
            plant_mode: PlantMode::Linear,
            ..Default::default()
        };
        let r = run_static(&case, &lim, &Gains::default(), &opts).unwrap();
        (case, lim, r)
    }

    #[test]
    fn trajectory_round_trips_at_printed_precision() {
        let (_, _, r) = toy_run();
        let mut buf = Vec::new();
        write_trajectory(&r, &mut buf).unwrap();
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, vec!["t", "q_2", "v_2", "lam_hi_norm", "lam_lo_norm", "mu_hi_norm", "mu_lo_norm", "cost"]);
        let rows: Vec<csv::StringRecord> = rd.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), r.trajectory.samples.len());
        for (row, s) in rows.iter().zip(&r.trajectory.samples) {
            let f = |k: usize| row[k].parse::<f64>().unwrap();
            assert!((f(0) - s.t).abs() <= 5e-7);
            assert!((f(1) - s.state.q[0]).abs() <= 5e-11);
            assert!((f(2) - s.v[0]).abs() <= 5e-11);
            assert!((f(4) - s.state.lam_lo[0]).abs() <= 5e-11);
            assert!((f(7) - s.cost).abs() <= 5e-13);
        }
        let last = rows.last().unwrap();
        let q: f64 = last[1].parse().unwrap();
        let cost: f64 = last[7].parse().unwrap();
        assert!((cost - q * q).abs() < 1e-9);
    }

    #[test]
    fn table_and_summary_layout() {
        let (case, lim, r) = toy_run();
        let before = DVector::from_column_slice(&[1.0, 0.92]);
        let t = voltages_table(&case, Some(&before), &r.final_v);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "bus            1       2");
        assert_eq!(lines[1], "before    1.0000  0.9200");
        assert_eq!(lines[2], "after     1.0000  0.9500");
        let extras = ReportExtras {
            fault: Some(FaultCosts {
                from: 1,
                to: 2,
                at: 10.0,
                pre_cost: 0.04,
                post_cost: 0.05,
            }),
            ..Default::default()
        };
        let s = summary_text(&r, &case, &lim, &extras);
        assert!(s.contains("converged: true\n"));
        assert!(s.contains("binding: v_lo@2\n"), "{s}");
        assert!(s.contains("cost_ratio: 1.250000\n"));
    }

    #[test]
    fn emits_files() {
        let (case, lim, r) = toy_run();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested");
        let paths = emit_report(&r, &case, &lim, &out, &ReportExtras::default()).unwrap();
        assert!(paths.trajectory.exists() && paths.voltages.exists() && paths.summary.exists());
        assert!(paths.daily.is_none());
        let a = fs::read(&paths.trajectory).unwrap();
        emit_report(&r, &case, &lim, &out, &ReportExtras::default()).unwrap();
        assert_eq!(a, fs::read(&paths.trajectory).unwrap());
    }

    #[test]
    fn unwritable_directory_errors() {
        let (case, lim, r) = toy_run();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        fs::write(&file, "x").unwrap();
        assert!(emit_report(&r, &case, &lim, &file.join("sub"), &ReportExtras::default()).is_err());
    }
}
