use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use voltctl::config::{parse_config, ConfigError, PlantChoice, RunConfig, ScenarioKind, TripSpec};
use voltctl::nalgebra::{DMatrix, DVector};
use voltctl::oracle;
use voltctl::pdgd::Limits;
use voltctl::powerflow::{bus_injections, InjectionSet, PowerFlow, PowerFlowOptions};
use voltctl::report::{emit_report, FaultCosts, ReportExtras};
use voltctl::sensitivity::{partition_buses, voltage_sensitivity};
use voltctl::sim::{self, PlantMode, SimulationResult};
use voltctl::{NetworkCase, SolveError};

#[derive(Parser)]
#[command(name = "voltctl", version, about = "Distributed volt/var control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a static, fault or daily scenario and write the report files.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        scenario: Option<RunKind>,
    },
    /// Solve the uncontrolled power flow and print bus voltages.
    Powerflow(Common),
    /// Print the voltage sensitivity matrix as CSV.
    Sensitivity(Common),
    /// Run consistency checks on a case and print a pass/fail table.
    Validate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum RunKind {
    Static,
    Fault,
    Daily,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Nonlinear,
    Linear,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Case file, or bundled:case14 / bundled:case30.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    plant: Option<PlantArg>,
    /// Uniform load factor at PQ buses.
    #[arg(long)]
    scale: Option<f64>,
    /// Branch trip as a:b@t.
    #[arg(long)]
    trip: Option<TripSpec>,
    /// Run twice and fail unless the results are identical.
    #[arg(long)]
    seedless: bool,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
            let mut cfg = parse_config(&text).map_err(|e| Failure::Usage(anyhow::anyhow!("{}: {e}", path.display())))?;
            cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(c) = &common.case {
        cfg.case = Some(c.clone());
    }
    if let Some(p) = common.plant {
        cfg.plant = match p {
            PlantArg::Nonlinear => PlantChoice::Nonlinear,
            PlantArg::Linear => PlantChoice::Linear,
        };
    }
    if let Some(s) = common.scale {
        cfg.load_scale = s;
    }
    if let Some(t) = common.trip {
        cfg.trip = Some(t);
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.display().to_string();
    }
    cfg.validate()?;
    if cfg.case.is_none() {
        return Err(Failure::Usage(anyhow::anyhow!("no case given (use --case or `case` in the config)")));
    }
    Ok(cfg)
}

fn limits_for(case: &NetworkCase, cfg: &RunConfig) -> Result<Limits, Failure> {
    let p = partition_buses(case);
    Ok(Limits::uniform(p.n_load(), p.n_controlled(), (cfg.vmin, cfg.vmax), (cfg.qmin, cfg.qmax))?)
}

fn uncontrolled_voltages(case: &NetworkCase) -> Result<DVector<f64>, Failure> {
    let sol = PowerFlow::new(case).solve(&InjectionSet::from_case(case), &PowerFlowOptions::default(), None)?;
    if !sol.converged {
        return Err(SolveError::PowerFlowDiverged {
            iterations: sol.iterations,
            max_mismatch: sol.max_mismatch,
        }
        .into());
    }
    Ok(sol.v)
}

fn plant_name(cfg: &RunConfig) -> &'static str {
    match cfg.plant {
        PlantChoice::Nonlinear => "nonlinear",
        PlantChoice::Linear => "linear",
    }
}

/// Result of one scenario plus what the report needs.
struct Outcome {
    result: SimulationResult,
    fault: Option<FaultCosts>,
    hours: Option<Vec<sim::HourSummary>>,
    converged: bool,
}

fn simulate(kind: ScenarioKind, case: &NetworkCase, lim: &Limits, cfg: &RunConfig) -> Result<Outcome, Failure> {
    let gains = cfg.gains();
    let opts = cfg.run_options();
    Ok(match kind {
        ScenarioKind::Fault => {
            let Some(t) = cfg.trip else {
                return Err(Failure::Usage(anyhow::anyhow!("fault scenario needs a trip (a:b@t)")));
            };
            let f = sim::run_fault(case, lim, &gains, (t.from, t.to), t.at, &opts)?;
            Outcome {
                converged: f.result.converged,
                fault: Some(FaultCosts {
                    from: t.from,
                    to: t.to,
                    at: t.at,
                    pre_cost: f.pre_cost,
                    post_cost: f.post_cost,
                }),
                result: f.result,
                hours: None,
            }
        }
        ScenarioKind::Daily => {
            let d = sim::run_daily(case, lim, &gains, &cfg.profile, cfg.hour_window, &opts)?;
            Outcome {
                converged: d.hours.iter().all(|h| h.converged),
                result: d.result,
                hours: Some(d.hours),
                fault: None,
            }
        }
        _ => {
            let r = sim::run_static(case, lim, &gains, &opts)?;
            Outcome {
                converged: r.converged,
                result: r,
                fault: None,
                hours: None,
            }
        }
    })
}

fn cmd_run(common: &Common, scenario: Option<RunKind>) -> Result<bool, Failure> {
    let mut cfg = load_config(common)?;
    if let Some(k) = scenario {
        cfg.scenario = match k {
            RunKind::Static => ScenarioKind::Static,
            RunKind::Fault => ScenarioKind::Fault,
            RunKind::Daily => ScenarioKind::Daily,
        };
    }
    if !matches!(cfg.scenario, ScenarioKind::Static | ScenarioKind::Fault | ScenarioKind::Daily) {
        return Err(Failure::Usage(anyhow::anyhow!("`run` handles static, fault and daily scenarios")));
    }
    let case = cfg.load_case()?;
    let lim = limits_for(&case, &cfg)?;
    let outcome = simulate(cfg.scenario, &case, &lim, &cfg)?;
    if common.seedless {
        let again = simulate(cfg.scenario, &case, &lim, &cfg)?;
        if again.result != outcome.result {
            return Err(anyhow::anyhow!("repeated run produced a different trajectory").into());
        }
    }
    let extras = ReportExtras {
        v_before: Some(uncontrolled_voltages(&case)?),
        fault: outcome.fault,
        hours: outcome.hours.as_deref(),
        plant: Some(plant_name(&cfg)),
    };
    let out = PathBuf::from(&cfg.output_dir);
    emit_report(&outcome.result, &case, &lim, &out, &extras)
        .with_context(|| format!("writing report to {}", out.display()))?;
    print!("{}", std::fs::read_to_string(out.join("summary.txt")).context("reading summary")?);
    Ok(outcome.converged)
}

fn cmd_powerflow(common: &Common) -> Result<bool, Failure> {
    let cfg = load_config(common)?;
    let case = cfg.load_case()?;
    let sol = PowerFlow::new(&case).solve(&InjectionSet::from_case(&case), &PowerFlowOptions::default(), None)?;
    let mut text = String::from("bus,vm,va_deg\n");
    for (i, b) in case.buses.iter().enumerate() {
        text.push_str(&format!("{},{:.8},{:.6}\n", b.id, sol.v[i], sol.delta[i].to_degrees()));
    }
    print!("{text}");
    eprintln!(
        "converged: {} after {} iterations, max mismatch {:.3e}",
        sol.converged, sol.iterations, sol.max_mismatch
    );
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("powerflow.csv"), &text).context("writing powerflow.csv")?;
    }
    Ok(sol.converged)
}

fn matrix_csv(ids: &[usize], x: &DMatrix<f64>) -> String {
    let mut s = String::from("bus");
    for id in ids {
        s.push_str(&format!(",{id}"));
    }
    s.push('\n');
    for (r, id) in ids.iter().enumerate() {
        s.push_str(&id.to_string());
        for c in 0..x.ncols() {
            s.push_str(&format!(",{:.10e}", x[(r, c)]));
        }
        s.push('\n');
    }
    s
}

fn cmd_sensitivity(common: &Common) -> Result<bool, Failure> {
    let cfg = load_config(common)?;
    let case = cfg.load_case()?;
    let part = partition_buses(&case);
    let sens = voltage_sensitivity(&voltctl::build_admittance(&case), &part)?;
    let text = matrix_csv(&part.load_bus_ids(), &sens.x);
    print!("{text}");
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("sensitivity.csv"), &text).context("writing sensitivity.csv")?;
    }
    Ok(true)
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn validation_checks(case: &NetworkCase, cfg: &RunConfig) -> Result<Vec<Check>, Failure> {
    let mut checks = Vec::new();
    let pf = PowerFlow::new(case);
    let inj = InjectionSet::from_case(case);
    let sol = pf.solve(&inj, &PowerFlowOptions::default(), None)?;
    let (p, q) = bus_injections(pf.admittance(), &sol.v, &sol.delta);
    let part = partition_buses(case);
    let mut worst: f64 = 0.0;
    for i in 0..case.n_buses() {
        if i != part.slack {
            worst = worst.max((p[i] - inj.p_injection[i]).abs());
        }
    }
    for &i in &part.pq {
        worst = worst.max((q[i] - inj.q_injection[i]).abs());
    }
    checks.push(Check {
        name: "power flow converges",
        pass: sol.converged && worst < 1e-6,
        detail: format!("{} iterations, independent mismatch {worst:.2e}", sol.iterations),
    });

    let sens = voltage_sensitivity(pf.admittance(), &part)?;
    let x = &sens.x;
    let asym = (x - x.transpose()).amax();
    let pd = x.clone().cholesky().is_some();
    checks.push(Check {
        name: "sensitivity symmetric positive definite",
        pass: asym < 1e-9 && pd,
        detail: format!("asymmetry {asym:.2e}, positive definite {pd}"),
    });

    let dq = 0.01;
    let mut worst_col: f64 = 0.0;
    let base_v = DVector::from_iterator(part.n_load(), part.pq.iter().map(|&r| sol.v[r]));
    for (c, &row) in part.pq.iter().enumerate() {
        let mut bumped = inj.clone();
        bumped.q_injection[row] += dq;
        let s2 = pf.solve(&bumped, &PowerFlowOptions::default(), Some(&sol))?;
        let v2 = DVector::from_iterator(part.n_load(), part.pq.iter().map(|&r| s2.v[r]));
        let fd = (v2 - &base_v) / dq;
        let col = x.column(c);
        worst_col = worst_col.max((&fd - col).amax() / col.amax());
    }
    checks.push(Check {
        name: "sensitivity matches finite differences",
        pass: worst_col < 0.10,
        detail: format!("worst column relative error {:.2}%", 100.0 * worst_col),
    });

    let lim = limits_for(case, cfg)?;
    let mut opts = cfg.run_options();
    opts.plant_mode = PlantMode::Linear;
    match sim::run_static(case, &lim, &cfg.gains(), &opts) {
        Ok(r) => {
            let plant = sim::Plant::new(case.clone(), PlantMode::Linear, &DVector::zeros(part.n_controlled()), None)?;
            match oracle::solve_centralized(plant.sensitivity(), &lim) {
                Ok(qp) => {
                    let diff = (&qp.q_star - &r.final_q).amax();
                    checks.push(Check {
                        name: "controller equilibrium matches centralized optimum",
                        pass: r.converged && diff < 1e-4,
                        detail: format!("max |q - q*| {diff:.2e}, optimal cost {:.6}", qp.objective_value),
                    });
                }
                Err(e) => checks.push(Check {
                    name: "controller equilibrium matches centralized optimum",
                    pass: false,
                    detail: e.to_string(),
                }),
            }
            let kkt = oracle::kkt_residual(&r.final_q, &r.final_state, plant.sensitivity(), &lim)?;
            checks.push(Check {
                name: "equilibrium satisfies optimality conditions",
                pass: kkt < oracle::CERTIFY_TOL,
                detail: format!("KKT residual {kkt:.2e}"),
            });
            checks.push(Check {
                name: "multipliers stay non-negative",
                pass: r.violations.min_multiplier >= -1e-9,
                detail: format!("minimum {:.2e}", r.violations.min_multiplier),
            });
        }
        Err(e) => checks.push(Check {
            name: "controller run",
            pass: false,
            detail: e.to_string(),
        }),
    }
    Ok(checks)
}

fn cmd_validate(common: &Common) -> Result<bool, Failure> {
    let cfg = load_config(common)?;
    let case = cfg.load_case()?;
    let checks = validation_checks(&case, &cfg)?;
    for c in &checks {
        println!("{} {:<52} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { common, scenario } => cmd_run(common, *scenario),
        Command::Powerflow(c) => cmd_powerflow(c),
        Command::Sensitivity(c) => cmd_sensitivity(c),
        Command::Validate(c) => cmd_validate(c),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
