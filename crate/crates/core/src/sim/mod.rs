//! Closed-loop simulation: controller dynamics against a quasi-static plant.
//!
//! The plant is either the full AC power flow (re-solved, warm-started, at
//! every right-hand-side evaluation) or the linear model `v = base_v + X_c Δq`
//! anchored at a power-flow solution. Controller outputs are added to the
//! scheduled reactive injection at the controlled buses.

pub mod integrator;

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;
use crate::netcase::{LoadScale, NetworkCase};
use crate::pdgd::{self, ControllerState, Gains, Limits};
use crate::powerflow::{InjectionSet, PowerFlow, PowerFlowOptions, PowerFlowSolution};
use crate::sensitivity::{partition_buses, voltage_sensitivity, BusPartition, SensitivityMatrix};

pub use integrator::{IntegratorSettings, OdeSystem, Trapezoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantMode {
    NonlinearPf,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    TripBranch(usize, usize),
    /// Scale loads relative to the scenario's case.
    SetLoadScale(LoadScale),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub time: f64,
    pub event: Event,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub case: NetworkCase,
    pub plant_mode: PlantMode,
    pub limits: Limits,
    pub gains: Gains,
    pub events: Vec<TimedEvent>,
    pub horizon: f64,
    /// Sample-and-hold period for voltage measurements; 0 means continuous.
    pub controller_period: f64,
    pub initial_state: ControllerState,
    pub integrator: IntegratorSettings,
    /// Equilibrium tolerance on the infinity norm of the projected derivative.
    pub eq_tol: f64,
    /// Skip ahead to the next event (or finish) once the residual is below
    /// `eq_tol`.
    pub stop_at_equilibrium: bool,
    /// Zero all multipliers when an event fires.
    pub reset_multipliers: bool,
}

pub const DEFAULT_EQ_TOL: f64 = 1e-6;
pub const DEFAULT_HORIZON: f64 = 1e6;
/// Power-flow tolerance used inside the loop.
pub const PLANT_PF_TOL: f64 = 1e-10;

impl Scenario {
    /// Scenario with default horizon, tolerances and a zero initial state.
    pub fn new(case: NetworkCase, plant_mode: PlantMode, limits: Limits, gains: Gains) -> Self {
        let part = partition_buses(&case);
        Scenario {
            initial_state: ControllerState::zeros(part.n_load(), part.n_controlled()),
            case,
            plant_mode,
            limits,
            gains,
            events: Vec::new(),
            horizon: DEFAULT_HORIZON,
            controller_period: 0.0,
            integrator: IntegratorSettings::default(),
            eq_tol: DEFAULT_EQ_TOL,
            stop_at_equilibrium: true,
            reset_multipliers: false,
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        self.case.validate()?;
        self.limits.validate()?;
        self.gains.validate()?;
        let part = partition_buses(&self.case);
        let (m, c) = (part.n_load(), part.n_controlled());
        if self.limits.n_load() != m || self.limits.n_controlled() != c {
            return Err(SolveError::Dimension(format!(
                "limits sized for {}/{} buses, case has {m} load and {c} controlled",
                self.limits.n_load(),
                self.limits.n_controlled()
            )));
        }
        if self.initial_state.n_load() != m || self.initial_state.n_controlled() != c {
            return Err(SolveError::Dimension("initial state does not match the case".into()));
        }
        if self.initial_state.min_multiplier() < 0.0 {
            return Err(SolveError::NegativeMultiplier {
                which: "initial state",
                value: self.initial_state.min_multiplier(),
            });
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SolveError::Invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.controller_period >= 0.0 && self.controller_period.is_finite()) {
            return Err(SolveError::Invalid("controller period must be non-negative".into()));
        }
        if !(self.eq_tol > 0.0) {
            return Err(SolveError::Invalid("equilibrium tolerance must be positive".into()));
        }
        let mut last = 0.0;
        for (k, ev) in self.events.iter().enumerate() {
            let ok = ev.time.is_finite()
                && ev.time <= self.horizon
                && if k == 0 { ev.time >= 0.0 } else { ev.time > last };
            if !ok {
                return Err(SolveError::Invalid(format!(
                    "event times must be strictly increasing within [0, {}]",
                    self.horizon
                )));
            }
            last = ev.time;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: ControllerState,
    /// Load-bus voltages.
    pub v: DVector<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    fn push(&mut self, t: f64, state: ControllerState, v: DVector<f64>) {
        if let Some(last) = self.samples.last() {
            if t <= last.t {
                return;
            }
        }
        let cost = pdgd::objective(&state.q);
        self.samples.push(Sample { t, state, v, cost });
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

/// Largest limit excursions (positive means violated).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Violations {
    pub v_over: f64,
    pub v_under: f64,
    pub q_over: f64,
    pub q_under: f64,
    pub min_multiplier: f64,
}

impl Violations {
    fn of(state: &ControllerState, v: &DVector<f64>, lim: &Limits) -> Self {
        let worst = |d: DVector<f64>| d.max().max(0.0);
        Violations {
            v_over: worst(v - &lim.v_hi),
            v_under: worst(&lim.v_lo - v),
            q_over: worst(&state.q - &lim.q_hi),
            q_under: worst(&lim.q_lo - &state.q),
            min_multiplier: state.min_multiplier(),
        }
    }

    fn merge(self, o: Violations) -> Self {
        Violations {
            v_over: self.v_over.max(o.v_over),
            v_under: self.v_under.max(o.v_under),
            q_over: self.q_over.max(o.q_over),
            q_under: self.q_under.max(o.q_under),
            min_multiplier: self.min_multiplier.min(o.min_multiplier),
        }
    }

    pub fn max_voltage(&self) -> f64 {
        self.v_over.max(self.v_under)
    }
}

/// State of the run at the end of each inter-event segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub t_start: f64,
    pub t_end: f64,
    pub state: ControllerState,
    /// All-bus voltages from the plant.
    pub v_all: DVector<f64>,
    pub cost: f64,
    pub residual: f64,
    pub converged: bool,
    /// Controller outputs at `t_end`.
    pub q: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub trajectory: Trajectory,
    /// All-bus voltage magnitudes at the end of the run.
    pub final_v: DVector<f64>,
    pub final_q: DVector<f64>,
    pub final_state: ControllerState,
    pub final_cost: f64,
    pub converged: bool,
    pub final_residual: f64,
    /// Maximum excursions over the whole trajectory.
    pub violations: Violations,
    /// Excursions at the final sample.
    pub final_violations: Violations,
    pub segments: Vec<SegmentSummary>,
    pub partition: BusPartition,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

impl SimulationResult {
    /// Load-bus voltages at the end of the run.
    pub fn final_load_v(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.partition.n_load(),
            self.partition.pq.iter().map(|&r| self.final_v[r]),
        )
    }
}

/// The plant with its cached linearization and last power-flow solution.
#[derive(Debug, Clone)]
pub struct Plant {
    mode: PlantMode,
    case: NetworkCase,
    pf: PowerFlow,
    part: BusPartition,
    sens: SensitivityMatrix,
    xc: DMatrix<f64>,
    scheduled: InjectionSet,
    opts: PowerFlowOptions,
    last: PowerFlowSolution,
    cache: Option<(DVector<f64>, DVector<f64>)>,
}

impl Plant {
    /// Build the plant for `case` and anchor it at controller output `q`.
    pub fn new(case: NetworkCase, mode: PlantMode, q: &DVector<f64>, warm: Option<&PowerFlowSolution>) -> Result<Self, SolveError> {
        let pf = PowerFlow::new(&case);
        let part = partition_buses(&case);
        if q.len() != part.n_controlled() {
            return Err(SolveError::Dimension(format!(
                "expected {} controller outputs, got {}",
                part.n_controlled(),
                q.len()
            )));
        }
        let sens = voltage_sensitivity(pf.admittance(), &part)?;
        let xc = sens.x_controlled();
        let scheduled = InjectionSet::from_case(&case);
        let opts = PowerFlowOptions {
            tol: PLANT_PF_TOL,
            max_iter: 30,
        };
        let mut inj = scheduled.clone();
        inj.add_reactive(&part.controlled, q);
        let mut sol = pf.solve(&inj, &opts, warm)?;
        if !sol.converged && warm.is_some() {
            sol = pf.solve(&inj, &opts, None)?;
        }
        if !sol.converged {
            return Err(SolveError::PowerFlowDiverged {
                iterations: sol.iterations,
                max_mismatch: sol.max_mismatch,
            });
        }
        let base_v = DVector::from_iterator(part.n_load(), part.pq.iter().map(|&r| sol.v[r]));
        let sens = sens.with_base(base_v, q.clone())?;
        Ok(Plant {
            mode,
            case,
            pf,
            part,
            sens,
            xc,
            scheduled,
            opts,
            last: sol,
            cache: None,
        })
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn sensitivity(&self) -> &SensitivityMatrix {
        &self.sens
    }

    pub fn partition(&self) -> &BusPartition {
        &self.part
    }

    pub fn last_solution(&self) -> &PowerFlowSolution {
        &self.last
    }

    /// Load-bus voltages produced by controller output `q`.
    pub fn measure(&mut self, q: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        if let Some((cq, cv)) = &self.cache {
            if cq == q {
                return Ok(cv.clone());
            }
        }
        let v = match self.mode {
            PlantMode::Linear => self.sens.predict_voltage(q)?,
            PlantMode::NonlinearPf => {
                let mut inj = self.scheduled.clone();
                inj.add_reactive(&self.part.controlled, q);
                let sol = self.pf.solve(&inj, &self.opts, Some(&self.last))?;
                if !sol.converged {
                    return Err(SolveError::PowerFlowDiverged {
                        iterations: sol.iterations,
                        max_mismatch: sol.max_mismatch,
                    });
                }
                let v = DVector::from_iterator(self.part.n_load(), self.part.pq.iter().map(|&r| sol.v[r]));
                self.last = sol;
                v
            }
        };
        self.cache = Some((q.clone(), v.clone()));
        Ok(v)
    }

    /// All-bus voltages at `q`. In linear mode, load buses take the linear
    /// prediction and the rest keep their setpoints.
    pub fn measure_all(&mut self, q: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        let v_load = self.measure(q)?;
        let mut v = match self.mode {
            PlantMode::NonlinearPf => self.last.v.clone(),
            PlantMode::Linear => DVector::from_iterator(
                self.case.n_buses(),
                self.case.buses.iter().map(|b| b.v_setpoint),
            ),
        };
        for (k, &r) in self.part.pq.iter().enumerate() {
            v[r] = v_load[k];
        }
        Ok(v)
    }

    /// `∂v/∂q` (M×C) used for the implicit solve.
    fn dv_dq(&mut self, q: &DVector<f64>) -> Result<DMatrix<f64>, SolveError> {
        match self.mode {
            PlantMode::Linear => Ok(self.xc.clone()),
            PlantMode::NonlinearPf => {
                self.measure(q)?;
                let local = self.pf.local_voltage_sensitivity(&self.last)?;
                let cols = &self.part.controlled_in_pq;
                Ok(DMatrix::from_fn(self.part.n_load(), cols.len(), |r, c| local[(r, cols[c])]))
            }
        }
    }
}

/// Controller plus plant as an ODE in the stacked controller state.
struct ClosedLoop<'a> {
    plant: Plant,
    limits: &'a Limits,
    gains: &'a Gains,
    m: usize,
    c: usize,
    held_v: Option<DVector<f64>>,
    mask: Vec<bool>,
}

impl ClosedLoop<'_> {
    fn voltages(&mut self, q: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        match &self.held_v {
            Some(v) => Ok(v.clone()),
            None => self.plant.measure(q),
        }
    }

    fn derivative(&mut self, state: &ControllerState) -> Result<DVector<f64>, SolveError> {
        let v = self.voltages(&state.q)?;
        Ok(pdgd::dynamics_rhs_with(state, &v, &self.plant.xc, self.limits, self.gains)?.to_vector())
    }
}

impl OdeSystem for ClosedLoop<'_> {
    fn rhs(&mut self, _t: f64, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        // the Newton iterate may dip slightly below zero; project it for evaluation
        let mut zp = z.clone();
        for (k, &nn) in self.mask.iter().enumerate() {
            if nn && zp[k] < 0.0 {
                zp[k] = 0.0;
            }
        }
        let state = ControllerState::from_vector(&zp, self.m, self.c)?;
        self.derivative(&state)
    }

    fn jacobian(&mut self, _t: f64, z: &DVector<f64>) -> Result<DMatrix<f64>, SolveError> {
        let state = ControllerState::from_vector(z, self.m, self.c)?;
        let v = self.voltages(&state.q)?;
        let dv = if self.held_v.is_some() {
            DMatrix::zeros(self.m, self.c)
        } else {
            self.plant.dv_dq(&state.q)?
        };
        Ok(pdgd::rhs_jacobian(&state, &v, &self.plant.xc, &dv, self.limits, self.gains))
    }

    fn nonnegative(&self) -> &[bool] {
        &self.mask
    }
}

fn case_at(base: &NetworkCase, scale: Option<&LoadScale>, trips: &[(usize, usize)]) -> Result<NetworkCase, SolveError> {
    let mut case = match scale {
        Some(s) => base.scale_loads(s)?,
        None => base.clone(),
    };
    for &(a, b) in trips {
        case = case.trip_branch(a, b)?;
    }
    Ok(case)
}

/// Integrate the closed loop through all events up to the horizon.
pub fn integrate(scenario: &Scenario) -> Result<SimulationResult, SolveError> {
    scenario.validate()?;
    let part = partition_buses(&scenario.case);
    let (m, c) = (part.n_load(), part.n_controlled());
    let mut state = scenario.initial_state.clone();
    let plant = Plant::new(scenario.case.clone(), scenario.plant_mode, &state.q, None)?;
    let mut mask = vec![false; c];
    mask.extend(std::iter::repeat(true).take(2 * m + 2 * c));
    let mut sys = ClosedLoop {
        plant,
        limits: &scenario.limits,
        gains: &scenario.gains,
        m,
        c,
        held_v: None,
        mask,
    };
    let mut integ = Trapezoid::new(scenario.integrator);
    let mut trips: Vec<(usize, usize)> = Vec::new();
    let mut scale: Option<LoadScale> = None;
    let mut traj = Trajectory::default();
    let mut segments = Vec::new();
    let mut violations = Violations {
        min_multiplier: f64::INFINITY,
        ..Default::default()
    };
    let mut t = 0.0;
    let mut steps = 0usize;

    let mut first = 0;
    while first < scenario.events.len() && scenario.events[first].time == 0.0 {
        apply_event(&mut sys, &scenario.events[first].event, &scenario.case, &mut scale, &mut trips, &mut state, scenario)?;
        first += 1;
    }
    let v0 = sys.plant.measure(&state.q)?;
    violations = violations.merge(Violations::of(&state, &v0, &scenario.limits));
    traj.push(t, state.clone(), v0);

    let mut seg_start = 0.0;
    for k in first..=scenario.events.len() {
        let t_end = scenario.events.get(k).map_or(scenario.horizon, |e| e.time);
        let (converged, residual) = integrate_segment(
            &mut sys,
            &mut integ,
            &mut state,
            &mut t,
            t_end,
            scenario,
            &mut traj,
            &mut violations,
            &mut steps,
        )?;
        let v_all = sys.plant.measure_all(&state.q)?;
        segments.push(SegmentSummary {
            t_start: seg_start,
            t_end: t,
            state: state.clone(),
            v_all,
            cost: pdgd::objective(&state.q),
            residual,
            converged,
            q: state.q.clone(),
        });
        if let Some(ev) = scenario.events.get(k) {
            // hold the equilibrium up to the event
            if t < t_end {
                t = t_end;
                let v = sys.plant.measure(&state.q)?;
                traj.push(t, state.clone(), v);
            }
            apply_event(&mut sys, &ev.event, &scenario.case, &mut scale, &mut trips, &mut state, scenario)?;
            integ.restart();
            let v = sys.plant.measure(&state.q)?;
            violations = violations.merge(Violations::of(&state, &v, &scenario.limits));
            seg_start = t;
        }
    }

    let last = segments.last().cloned().ok_or(SolveError::Invalid("empty run".into()))?;
    let v_load = sys.plant.measure(&state.q)?;
    let final_violations = Violations::of(&state, &v_load, &scenario.limits);
    Ok(SimulationResult {
        trajectory: traj,
        final_v: last.v_all,
        final_q: state.q.clone(),
        final_cost: pdgd::objective(&state.q),
        final_state: state,
        converged: last.converged,
        final_residual: last.residual,
        violations,
        final_violations,
        segments,
        partition: part,
        steps_accepted: integ.accepted,
        steps_rejected: integ.rejected,
    })
}

fn apply_event(
    sys: &mut ClosedLoop<'_>,
    event: &Event,
    base: &NetworkCase,
    scale: &mut Option<LoadScale>,
    trips: &mut Vec<(usize, usize)>,
    state: &mut ControllerState,
    scenario: &Scenario,
) -> Result<(), SolveError> {
    match event {
        Event::TripBranch(a, b) => trips.push((*a, *b)),
        Event::SetLoadScale(s) => *scale = Some(s.clone()),
    }
    let case = case_at(base, scale.as_ref(), trips)?;
    let warm = sys.plant.last.clone();
    sys.plant = Plant::new(case, scenario.plant_mode, &state.q, Some(&warm))?;
    if scenario.reset_multipliers {
        let q = state.q.clone();
        *state = ControllerState::zeros(state.n_load(), state.n_controlled());
        state.q = q;
    }
    Ok(())
}

/// Integrate from `t` to `t_end` or until equilibrium. Returns whether the
/// residual fell below the tolerance, and the residual.
#[allow(clippy::too_many_arguments)]
fn integrate_segment(
    sys: &mut ClosedLoop<'_>,
    integ: &mut Trapezoid,
    state: &mut ControllerState,
    t: &mut f64,
    t_end: f64,
    scenario: &Scenario,
    traj: &mut Trajectory,
    violations: &mut Violations,
    steps: &mut usize,
) -> Result<(bool, f64), SolveError> {
    let (m, c) = (sys.m, sys.c);
    let mut z = state.to_vector();
    sys.held_v = None;
    let mut f = sys.derivative(state)?;
    let mut residual = f.amax();
    if residual < scenario.eq_tol && scenario.stop_at_equilibrium {
        return Ok((true, residual));
    }
    let period = scenario.controller_period;
    while *t < t_end {
        if *steps >= scenario.integrator.max_steps {
            return Ok((false, residual));
        }
        let mut t_max = t_end;
        if period > 0.0 {
            // sample at the start of each window and hold over it
            let window_end = ((*t / period).floor() + 1.0) * period;
            t_max = window_end.min(t_end);
            if sys.held_v.is_none() {
                let v = sys.plant.measure(&state.q)?;
                sys.held_v = Some(v);
                f = sys.derivative(state)?;
                integ.restart();
            }
        }
        let acc = integ.step(sys, *t, &z, &f, t_max)?;
        *steps += 1;
        *t = acc.t;
        z = acc.z;
        f = acc.f;
        *state = ControllerState::from_vector(&z, m, c)?;
        if period > 0.0 && *t >= t_max {
            sys.held_v = None;
            f = sys.derivative(state)?;
        }
        let v = sys.plant.measure(&state.q)?;
        *violations = violations.merge(Violations::of(state, &v, &scenario.limits));
        traj.push(*t, state.clone(), v);
        // with held measurements the residual is judged against live voltages
        residual = if sys.held_v.is_some() {
            let held = sys.held_v.take();
            let r = sys.derivative(state)?.amax();
            sys.held_v = held;
            r
        } else {
            f.amax()
        };
        if residual < scenario.eq_tol && scenario.stop_at_equilibrium {
            return Ok((true, residual));
        }
    }
    Ok((residual < scenario.eq_tol, residual))
}

/// Options shared by the scenario runners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub plant_mode: PlantMode,
    pub eq_tol: f64,
    pub horizon: f64,
    pub integrator: IntegratorSettings,
    pub controller_period: f64,
    pub reset_multipliers: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            plant_mode: PlantMode::NonlinearPf,
            eq_tol: DEFAULT_EQ_TOL,
            horizon: DEFAULT_HORIZON,
            integrator: IntegratorSettings::default(),
            controller_period: 0.0,
            reset_multipliers: false,
        }
    }
}

impl RunOptions {
    fn scenario(&self, case: &NetworkCase, limits: &Limits, gains: &Gains) -> Scenario {
        let mut s = Scenario::new(case.clone(), self.plant_mode, limits.clone(), *gains);
        s.eq_tol = self.eq_tol;
        s.horizon = self.horizon;
        s.integrator = self.integrator;
        s.controller_period = self.controller_period;
        s.reset_multipliers = self.reset_multipliers;
        s
    }
}

/// Constant load: integrate from zero until the residual drops below
/// `opts.eq_tol` or the horizon is reached.
pub fn run_static(case: &NetworkCase, limits: &Limits, gains: &Gains, opts: &RunOptions) -> Result<SimulationResult, SolveError> {
    integrate(&opts.scenario(case, limits, gains))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultResult {
    pub result: SimulationResult,
    pub pre_cost: f64,
    pub post_cost: f64,
    pub pre_q: DVector<f64>,
    pub post_q: DVector<f64>,
    pub pre_converged: bool,
}

impl FaultResult {
    pub fn cost_ratio(&self) -> f64 {
        self.post_cost / self.pre_cost
    }
}

/// Trip branch `a`-`b` at `t_trip` and continue to the new equilibrium.
pub fn run_fault(
    case: &NetworkCase,
    limits: &Limits,
    gains: &Gains,
    trip: (usize, usize),
    t_trip: f64,
    opts: &RunOptions,
) -> Result<FaultResult, SolveError> {
    case.trip_branch(trip.0, trip.1)?;
    let mut s = opts.scenario(case, limits, gains);
    if !(t_trip > 0.0) {
        return Err(SolveError::Invalid("trip time must be positive".into()));
    }
    s.horizon = s.horizon.max(t_trip * 2.0);
    s.events.push(TimedEvent {
        time: t_trip,
        event: Event::TripBranch(trip.0, trip.1),
    });
    let result = integrate(&s)?;
    let pre = &result.segments[0];
    let post = result.segments.last().expect("two segments");
    Ok(FaultResult {
        pre_cost: pre.cost,
        post_cost: post.cost,
        pre_q: pre.q.clone(),
        post_q: post.q.clone(),
        pre_converged: pre.converged,
        result,
    })
}

/// Default hourly load factors: overnight valley near 0.7, evening peak
/// near 1.2.
pub const DEFAULT_DAILY_PROFILE: [f64; 24] = [
    0.78, 0.74, 0.71, 0.70, 0.70, 0.73, 0.80, 0.88, 0.95, 1.00, 1.03, 1.05, 1.05, 1.04, 1.03, 1.04,
    1.07, 1.12, 1.18, 1.20, 1.16, 1.06, 0.94, 0.84,
];

/// Default controller window per hour, in seconds of controller time.
pub const DEFAULT_HOUR_WINDOW: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HourSummary {
    pub hour: usize,
    pub factor: f64,
    /// All-bus voltages with no controller output.
    pub v_uncontrolled: DVector<f64>,
    /// All-bus voltages at the end of the hour's controller window.
    pub v_controlled: DVector<f64>,
    pub q: DVector<f64>,
    pub cost: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyResult {
    pub result: SimulationResult,
    pub hours: Vec<HourSummary>,
}

/// 24-hour run: the load factor changes on the hour and the controller is
/// integrated from its warm state for up to `window` seconds each hour.
pub fn run_daily(
    case: &NetworkCase,
    limits: &Limits,
    gains: &Gains,
    profile: &[f64],
    window: f64,
    opts: &RunOptions,
) -> Result<DailyResult, SolveError> {
    if profile.len() != 24 {
        return Err(SolveError::Invalid(format!("profile needs 24 factors, got {}", profile.len())));
    }
    if profile.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(SolveError::Invalid("profile factors must be finite and non-negative".into()));
    }
    if !(window > 0.0 && window.is_finite()) {
        return Err(SolveError::Invalid("hour window must be positive".into()));
    }
    let first = case.scale_loads(&LoadScale::Uniform(profile[0]))?;
    let mut s = opts.scenario(&first, limits, gains);
    s.case = case.clone();
    s.horizon = 24.0 * window;
    s.events = (0..24)
        .map(|h| TimedEvent {
            time: h as f64 * window,
            event: Event::SetLoadScale(LoadScale::Uniform(profile[h])),
        })
        .collect();
    let result = integrate(&s)?;

    let mut hours = Vec::with_capacity(24);
    let part = partition_buses(case);
    let zero = DVector::zeros(part.n_controlled());
    let mut warm: Option<PowerFlowSolution> = None;
    for (h, &factor) in profile.iter().enumerate() {
        let scaled = case.scale_loads(&LoadScale::Uniform(factor))?;
        let mut plant = Plant::new(scaled, PlantMode::NonlinearPf, &zero, warm.as_ref())?;
        let v_uncontrolled = plant.measure_all(&zero)?;
        warm = Some(plant.last_solution().clone());
        let seg = &result.segments[h];
        hours.push(HourSummary {
            hour: h,
            factor,
            v_uncontrolled,
            v_controlled: seg.v_all.clone(),
            q: seg.q.clone(),
            cost: seg.cost,
            residual: seg.residual,
            converged: seg.converged,
        });
    }
    Ok(DailyResult { result, hours })
}

/// Uniform PQ-bus load factor whose uncontrolled power flow best matches
/// `target` (all-bus magnitudes). Returns the factor and the max abs error.
pub fn calibrate_load_scale(case: &NetworkCase, target: &[f64], range: (f64, f64)) -> Result<(f64, f64), SolveError> {
    if target.len() != case.n_buses() {
        return Err(SolveError::Dimension(format!(
            "target has {} voltages, case has {} buses",
            target.len(),
            case.n_buses()
        )));
    }
    let err_at = |f: f64| -> f64 {
        let Ok(scaled) = case.scale_loads(&LoadScale::Uniform(f)) else {
            return f64::INFINITY;
        };
        let pf = PowerFlow::new(&scaled);
        match pf.solve(&InjectionSet::from_case(&scaled), &PowerFlowOptions::default(), None) {
            Ok(sol) if sol.converged => sol
                .v
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    };
    let (lo, hi) = range;
    let n = 80;
    let mut best = (lo, err_at(lo));
    for k in 1..=n {
        let f = lo + (hi - lo) * k as f64 / n as f64;
        let e = err_at(f);
        if e < best.1 {
            best = (f, e);
        }
    }
    // golden-section refinement around the best grid point
    let step = (hi - lo) / n as f64;
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut e1, mut e2) = (err_at(x1), err_at(x2));
    for _ in 0..60 {
        if e1 < e2 {
            b = x2;
            x2 = x1;
            e2 = e1;
            x1 = b - g * (b - a);
            e1 = err_at(x1);
        } else {
            a = x1;
            x1 = x2;
            e1 = e2;
            x2 = a + g * (b - a);
            e2 = err_at(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let e_mid = err_at(mid);
    if e_mid < best.1 {
        best = (mid, e_mid);
    }
    Ok(best)
}

#[cfg(test)]
mod tests;
