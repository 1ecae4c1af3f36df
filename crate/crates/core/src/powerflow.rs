//! Full Newton-Raphson AC power flow in polar coordinates.
//!
//! Unknowns are the angles of every non-slack bus and the magnitudes of every
//! load bus. Generator reactive limits are not enforced, so PV magnitudes stay
//! at their setpoints.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::SolveError;
use crate::netcase::{build_admittance, AdmittanceMatrices, BusKind, NetworkCase};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20;

/// Specified bus injections (generation minus load), indexed like the case's
/// bus list. Reactive entries at slack and PV buses are ignored by the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub p_injection: DVector<f64>,
    pub q_injection: DVector<f64>,
}

impl InjectionSet {
    /// Scheduled injections of the case with no controller output.
    pub fn from_case(case: &NetworkCase) -> Self {
        let n = case.n_buses();
        let mut p = DVector::zeros(n);
        let mut q = DVector::zeros(n);
        for (i, bus) in case.buses.iter().enumerate() {
            p[i] = -bus.p_load;
            q[i] = -bus.q_load;
        }
        for gen in &case.generators {
            if let Some(i) = case.index_of(gen.bus) {
                p[i] += gen.p_gen;
            }
        }
        InjectionSet {
            p_injection: p,
            q_injection: q,
        }
    }

    /// Add reactive outputs at the given bus rows.
    pub fn add_reactive(&mut self, rows: &[usize], q: &DVector<f64>) {
        for (&row, &dq) in rows.iter().zip(q.iter()) {
            self.q_injection[row] += dq;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Voltage magnitudes (pu).
    pub v: DVector<f64>,
    /// Voltage angles (rad), slack at zero.
    pub delta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// A case prepared for repeated solves: admittance and bus sets are built once.
#[derive(Debug, Clone)]
pub struct PowerFlow {
    y: DMatrix<Complex<f64>>,
    adm: AdmittanceMatrices,
    slack: usize,
    /// Non-slack buses (angle unknowns).
    pvpq: Vec<usize>,
    /// Load buses (magnitude unknowns).
    pq: Vec<usize>,
    setpoints: DVector<f64>,
    is_fixed_v: Vec<bool>,
}

impl PowerFlow {
    pub fn new(case: &NetworkCase) -> Self {
        Self::with_admittance(case, build_admittance(case))
    }

    pub fn with_admittance(case: &NetworkCase, adm: AdmittanceMatrices) -> Self {
        let n = case.n_buses();
        let y = DMatrix::from_fn(n, n, |i, j| adm.entry(i, j));
        let slack = case.slack_index();
        let pvpq = (0..n).filter(|&i| i != slack).collect();
        let pq = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
        let setpoints = DVector::from_iterator(n, case.buses.iter().map(|b| b.v_setpoint));
        let is_fixed_v = case.buses.iter().map(|b| b.kind != BusKind::Pq).collect();
        PowerFlow {
            y,
            adm,
            slack,
            pvpq,
            pq,
            setpoints,
            is_fixed_v,
        }
    }

    pub fn admittance(&self) -> &AdmittanceMatrices {
        &self.adm
    }

    pub fn pq_rows(&self) -> &[usize] {
        &self.pq
    }

    /// Flat start: unit magnitude and zero angle at the unknowns, setpoints
    /// at slack and PV buses.
    pub fn flat_start(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.setpoints.len();
        let v = DVector::from_fn(n, |i, _| if self.is_fixed_v[i] { self.setpoints[i] } else { 1.0 });
        (v, DVector::zeros(n))
    }

    fn complex_voltage(v: &DVector<f64>, delta: &DVector<f64>) -> DVector<Complex<f64>> {
        DVector::from_fn(v.len(), |i, _| Complex::from_polar(v[i], delta[i]))
    }

    fn mismatch_vector(&self, inj: &InjectionSet, s: &DVector<Complex<f64>>) -> DVector<f64> {
        let np = self.pvpq.len();
        let mut f = DVector::zeros(np + self.pq.len());
        for (r, &k) in self.pvpq.iter().enumerate() {
            f[r] = s[k].re - inj.p_injection[k];
        }
        for (r, &k) in self.pq.iter().enumerate() {
            f[np + r] = s[k].im - inj.q_injection[k];
        }
        f
    }

    fn jacobian(&self, vc: &DVector<Complex<f64>>) -> DMatrix<f64> {
        let n = vc.len();
        let ibus = &self.y * vc;
        let vnorm = vc.map(|c| c / c.norm());
        let j = Complex::new(0.0, 1.0);
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let ds_dva = DMatrix::from_fn(n, n, |r, c| {
            let inner = if r == c { ibus[r] } else { Complex::new(0.0, 0.0) } - self.y[(r, c)] * vc[c];
            j * vc[r] * inner.conj()
        });
        let ds_dvm = DMatrix::from_fn(n, n, |r, c| {
            let mut val = vc[r] * (self.y[(r, c)] * vnorm[c]).conj();
            if r == c {
                val += ibus[r].conj() * vnorm[r];
            }
            val
        });
        let np = self.pvpq.len();
        let nq = self.pq.len();
        let mut jac = DMatrix::zeros(np + nq, np + nq);
        for (r, &k) in self.pvpq.iter().enumerate() {
            for (c, &m) in self.pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva[(k, m)].re;
            }
            for (c, &m) in self.pq.iter().enumerate() {
                jac[(r, np + c)] = ds_dvm[(k, m)].re;
            }
        }
        for (r, &k) in self.pq.iter().enumerate() {
            for (c, &m) in self.pvpq.iter().enumerate() {
                jac[(np + r, c)] = ds_dva[(k, m)].im;
            }
            for (c, &m) in self.pq.iter().enumerate() {
                jac[(np + r, np + c)] = ds_dvm[(k, m)].im;
            }
        }
        jac
    }

    /// Solve from a flat start, or from `start` when given (warm start).
    pub fn solve(
        &self,
        inj: &InjectionSet,
        opts: &PowerFlowOptions,
        start: Option<&PowerFlowSolution>,
    ) -> Result<PowerFlowSolution, SolveError> {
        let n = self.setpoints.len();
        if inj.p_injection.len() != n || inj.q_injection.len() != n {
            return Err(SolveError::Dimension(format!(
                "injection vectors must have {n} entries"
            )));
        }
        if inj.p_injection.iter().chain(inj.q_injection.iter()).any(|x| !x.is_finite()) {
            return Err(SolveError::NonFinite("power-flow injections"));
        }
        let (mut v, mut delta) = match start {
            Some(s) if s.v.len() == n => {
                let mut v = s.v.clone();
                for i in 0..n {
                    if self.is_fixed_v[i] {
                        v[i] = self.setpoints[i];
                    }
                }
                let mut d = s.delta.clone();
                d[self.slack] = 0.0;
                (v, d)
            }
            _ => self.flat_start(),
        };
        let np = self.pvpq.len();
        let mut iterations = 0;
        loop {
            let vc = Self::complex_voltage(&v, &delta);
            let s = vc.component_mul(&(&self.y * &vc).map(|c| c.conj()));
            let f = self.mismatch_vector(inj, &s);
            let max_mismatch = f.amax();
            if !max_mismatch.is_finite() {
                return Err(SolveError::NonFinite("power-flow mismatch"));
            }
            if max_mismatch < opts.tol || iterations >= opts.max_iter {
                return Ok(PowerFlowSolution {
                    v,
                    delta,
                    converged: max_mismatch < opts.tol,
                    iterations,
                    max_mismatch,
                });
            }
            let jac = self.jacobian(&vc);
            let dx = jac
                .lu()
                .solve(&(-f))
                .ok_or(SolveError::Singular("power-flow Jacobian"))?;
            for (r, &k) in self.pvpq.iter().enumerate() {
                delta[k] += dx[r];
            }
            for (r, &k) in self.pq.iter().enumerate() {
                v[k] += dx[np + r];
            }
            iterations += 1;
        }
    }

    /// Exact local sensitivity dV/dQ over load buses at a solution, taken from
    /// the inverse of the full Newton Jacobian.
    pub fn local_voltage_sensitivity(
        &self,
        sol: &PowerFlowSolution,
    ) -> Result<DMatrix<f64>, SolveError> {
        let vc = Self::complex_voltage(&sol.v, &sol.delta);
        let inv = self
            .jacobian(&vc)
            .try_inverse()
            .ok_or(SolveError::Singular("power-flow Jacobian"))?;
        let np = self.pvpq.len();
        let nq = self.pq.len();
        Ok(inv.view((np, np), (nq, nq)).into_owned())
    }
}

/// Convenience wrapper: build the admittance and solve once.
pub fn solve_power_flow(
    case: &NetworkCase,
    inj: &InjectionSet,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, SolveError> {
    PowerFlow::new(case).solve(inj, opts, None)
}

/// Bus injections from the polar power-flow equations:
/// `P_k = V_k Σ_n |Y_kn| V_n cos(δ_k − δ_n − θ_kn)` and the matching sine form.
pub fn bus_injections(
    adm: &AdmittanceMatrices,
    v: &DVector<f64>,
    delta: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = adm.n();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for k in 0..n {
        for m in 0..n {
            let y = adm.entry(k, m);
            if y.re == 0.0 && y.im == 0.0 {
                continue;
            }
            let (mag, theta) = (y.norm(), y.arg());
            let angle = delta[k] - delta[m] - theta;
            p[k] += v[k] * mag * v[m] * angle.cos();
            q[k] += v[k] * mag * v[m] * angle.sin();
        }
    }
    (p, q)
}

/// Specified minus computed injections at every bus.
pub fn mismatch(
    case: &NetworkCase,
    inj: &InjectionSet,
    sol: &PowerFlowSolution,
) -> (DVector<f64>, DVector<f64>) {
    let adm = build_admittance(case);
    let (p, q) = bus_injections(&adm, &sol.v, &sol.delta);
    (&inj.p_injection - p, &inj.q_injection - q)
}
