use super::*;
use crate::error::CaseError;
use crate::netcase::bundled;
use approx::assert_abs_diff_eq;

/// Lossless 2-bus line with x = 0.1 and a 73.6 MVar load, which sits at
/// 0.92 pu with no compensation.
fn toy() -> NetworkCase {
    crate::parse_case(
        "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 0 1 1.1 0.9; 2 1 0 73.6 0 0 1 1 0 0 1 1.1 0.9];\n\
         mpc.gen = [1 0 0 0 0 1 100 1 0 0];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];",
    )
    .unwrap()
}

fn toy_limits() -> Limits {
    Limits::uniform(1, 1, (0.95, 1.05), (-0.5, 0.5)).unwrap()
}

fn band(case: &NetworkCase, v: (f64, f64)) -> Limits {
    let p = partition_buses(case);
    Limits::uniform(p.n_load(), p.n_controlled(), v, (-0.2, 0.2)).unwrap()
}

fn linear() -> RunOptions {
    RunOptions {
        plant_mode: PlantMode::Linear,
        ..Default::default()
    }
}

#[test]
fn toy_plant_base_point() {
    let mut plant = Plant::new(toy(), PlantMode::Linear, &DVector::zeros(1), None).unwrap();
    assert_abs_diff_eq!(plant.sensitivity().base_v[0], 0.92, epsilon = 1e-9);
    assert_abs_diff_eq!(plant.sensitivity().x[(0, 0)], 0.1, epsilon = 1e-12);
    let v = plant.measure(&DVector::from_element(1, 0.3)).unwrap();
    assert_abs_diff_eq!(v[0], 0.95, epsilon = 1e-9);
}

#[test]
fn toy_reaches_kkt_point() {
    let r = run_static(&toy(), &toy_limits(), &Gains::default(), &linear()).unwrap();
    assert!(r.converged);
    assert!(r.final_residual < DEFAULT_EQ_TOL);
    assert_abs_diff_eq!(r.final_q[0], 0.3, epsilon = 1e-4);
    assert_abs_diff_eq!(r.final_state.lam_lo[0], 6.0, epsilon = 1e-3);
    assert_eq!(r.final_state.lam_hi[0], 0.0);
    assert_eq!(r.final_cost, pdgd::objective(&r.final_q));

    // past the initial transient the residual decays monotonically
    let sens = Plant::new(toy(), PlantMode::Linear, &DVector::zeros(1), None)
        .unwrap()
        .sensitivity()
        .clone()
        .with_base(DVector::from_element(1, 0.92), DVector::zeros(1))
        .unwrap();
    let res: Vec<f64> = r
        .trajectory
        .samples
        .iter()
        .filter(|s| s.t > 20.0)
        .map(|s| pdgd::equilibrium_residual(&s.state, &s.v, &sens, &toy_limits(), &Gains::default()).unwrap())
        .collect();
    assert!(res.len() > 10);
    for w in res.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-6), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn trajectory_times_increase_and_costs_match() {
    let r = run_static(&toy(), &toy_limits(), &Gains::default(), &linear()).unwrap();
    assert_eq!(r.trajectory.samples[0].t, 0.0);
    for w in r.trajectory.samples.windows(2) {
        assert!(w[1].t > w[0].t);
    }
    for s in &r.trajectory.samples {
        assert_eq!(s.cost, pdgd::objective(&s.state.q));
        assert!(s.state.min_multiplier() >= 0.0);
    }
}

#[test]
fn feasible_start_stays_at_zero() {
    let case = bundled::case14();
    let r = run_static(&case, &band(&case, (0.9, 1.1)), &Gains::default(), &Default::default()).unwrap();
    assert!(r.converged);
    for s in &r.trajectory.samples {
        assert_eq!(s.state.q.amax(), 0.0);
    }
    assert_eq!(r.final_cost, 0.0);
}

#[test]
fn sample_and_hold_reaches_same_point() {
    let mut opts = linear();
    opts.controller_period = 0.5;
    let r = run_static(&toy(), &toy_limits(), &Gains::default(), &opts).unwrap();
    assert!(r.converged);
    assert_abs_diff_eq!(r.final_q[0], 0.3, epsilon = 1e-4);
}

#[test]
fn runs_are_deterministic() {
    let case = bundled::case14().scale_loads(&2.5.into()).unwrap();
    let a = run_static(&case, &band(&case, (0.95, 1.05)), &Gains::default(), &Default::default()).unwrap();
    let b = run_static(&case, &band(&case, (0.95, 1.05)), &Gains::default(), &Default::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn event_times_must_increase() {
    let case = toy();
    let mut s = Scenario::new(case, PlantMode::Linear, toy_limits(), Gains::default());
    let ev = |t| TimedEvent {
        time: t,
        event: Event::SetLoadScale(LoadScale::Uniform(1.0)),
    };
    s.events = vec![ev(5.0), ev(5.0)];
    assert!(matches!(integrate(&s), Err(SolveError::Invalid(_))));
    s.events = vec![ev(5.0), ev(2.0 * DEFAULT_HORIZON)];
    assert!(matches!(integrate(&s), Err(SolveError::Invalid(_))));
    s.events = vec![ev(-1.0)];
    assert!(integrate(&s).is_err());
}

#[test]
fn islanding_trip_is_rejected() {
    let case = bundled::case14();
    let err = run_fault(&case, &band(&case, (0.95, 1.05)), &Gains::default(), (7, 8), 10.0, &linear()).unwrap_err();
    assert!(matches!(err, SolveError::Case(CaseError::Islanding { .. })));
}

#[test]
fn load_step_moves_equilibrium_and_reset_flag_zeroes_multipliers() {
    let mut s = Scenario::new(toy(), PlantMode::Linear, toy_limits(), Gains::default());
    s.events.push(TimedEvent {
        time: 2000.0,
        event: Event::SetLoadScale(LoadScale::Uniform(0.5)),
    });
    s.horizon = 5000.0;
    let keep = integrate(&s).unwrap();
    assert_eq!(keep.segments.len(), 2);
    assert_abs_diff_eq!(keep.segments[0].q[0], 0.3, epsilon = 1e-4);
    // half the load keeps the bus in band with no compensation
    assert!(keep.final_q[0].abs() < 1e-4);

    s.reset_multipliers = true;
    let reset = integrate(&s).unwrap();
    let after = reset.trajectory.samples.iter().find(|x| x.t > 2000.0).unwrap();
    assert!(after.state.lam_lo[0] < keep.segments[0].state.lam_lo[0]);
    assert!(reset.final_q[0].abs() < 1e-4);
}

#[test]
fn daily_rejects_bad_profiles() {
    let case = toy();
    let g = Gains::default();
    assert!(run_daily(&case, &toy_limits(), &g, &[1.0; 23], 10.0, &linear()).is_err());
    let mut p = [1.0; 24];
    p[3] = -0.1;
    assert!(run_daily(&case, &toy_limits(), &g, &p, 10.0, &linear()).is_err());
    assert!(run_daily(&case, &toy_limits(), &g, &[1.0; 24], 0.0, &linear()).is_err());
}

#[test]
fn default_profile_shape() {
    let lo = DEFAULT_DAILY_PROFILE.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = DEFAULT_DAILY_PROFILE.iter().cloned().fold(0.0, f64::max);
    assert_abs_diff_eq!(lo, 0.7, epsilon = 0.02);
    assert_abs_diff_eq!(hi, 1.2, epsilon = 0.02);
}

#[test]
fn calibration_recovers_known_scale() {
    let case = bundled::case14();
    let scaled = case.scale_loads(&1.7.into()).unwrap();
    let sol = crate::powerflow::solve_power_flow(&scaled, &InjectionSet::from_case(&scaled), &Default::default()).unwrap();
    let (f, err) = calibrate_load_scale(&case, sol.v.as_slice(), (1.0, 5.0)).unwrap();
    assert_abs_diff_eq!(f, 1.7, epsilon = 1e-5);
    assert!(err < 1e-6);
}
