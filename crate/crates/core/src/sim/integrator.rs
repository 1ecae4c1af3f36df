//! Adaptive implicit trapezoidal rule.
//!
//! Each step solves `z₁ = z₀ + h/2 (f(z₀) + f(z₁))` by Newton iteration with
//! a Jacobian frozen at the step start. The local error is estimated with
//! Milne's device against an explicit second-order Adams-Bashforth predictor
//! (forward Euler on the first step after a restart). Components flagged as
//! non-negative are clamped at zero after each accepted step; a step that
//! drives one of them far below zero is shortened to land near the crossing.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;

pub trait OdeSystem {
    fn rhs(&mut self, t: f64, z: &DVector<f64>) -> Result<DVector<f64>, SolveError>;
    fn jacobian(&mut self, t: f64, z: &DVector<f64>) -> Result<DMatrix<f64>, SolveError>;
    /// Components that must stay non-negative.
    fn nonnegative(&self) -> &[bool];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Disable error control and take steps of exactly this size.
    pub fixed_step: Option<f64>,
    pub max_newton: usize,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            rtol: 1e-6,
            atol: 1e-8,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1e4,
            fixed_step: None,
            max_newton: 10,
            max_steps: 500_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Accepted {
    pub t: f64,
    pub z: DVector<f64>,
    pub f: DVector<f64>,
    pub h: f64,
}

#[derive(Debug, Clone)]
pub struct Trapezoid {
    pub settings: IntegratorSettings,
    h: f64,
    history: Option<(DVector<f64>, f64)>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trapezoid {
    pub fn new(settings: IntegratorSettings) -> Self {
        Trapezoid {
            h: settings.fixed_step.unwrap_or(settings.h_init),
            settings,
            history: None,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Forget the multistep history, e.g. after a discontinuity in the system.
    pub fn restart(&mut self) {
        self.history = None;
        if self.settings.fixed_step.is_none() {
            self.h = self.h.min(self.settings.h_init.max(self.h * 1e-3));
        }
    }

    fn weights(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        a.zip_map(b, |x, y| self.settings.atol + self.settings.rtol * x.abs().max(y.abs()))
    }

    /// Advance from `(t, z)` where `f = f(t, z)`, never past `t_max`.
    pub fn step<S: OdeSystem>(
        &mut self,
        sys: &mut S,
        t: f64,
        z: &DVector<f64>,
        f: &DVector<f64>,
        t_max: f64,
    ) -> Result<Accepted, SolveError> {
        let fixed = self.settings.fixed_step.is_some();
        let mut jac: Option<DMatrix<f64>> = None;
        loop {
            let remaining = t_max - t;
            let mut h = self.h.min(remaining).min(self.settings.h_max);
            // avoid a sliver step right before t_max
            if !fixed && remaining - h < 1e-3 * h {
                h = remaining;
            }
            if h <= self.settings.h_min && remaining > self.settings.h_min {
                return Err(SolveError::StepUnderflow { t });
            }
            let (z_pred, factor) = match &self.history {
                Some((f_prev, h_prev)) => {
                    let w = h / h_prev;
                    let pred = z + (f * (1.0 + 0.5 * w) - f_prev * (0.5 * w)) * h;
                    (pred, 1.0 / (3.0 * (1.0 + 1.0 / w)))
                }
                None => (z + f * h, 0.5),
            };
            let j = match &jac {
                Some(j) => j.clone(),
                None => {
                    let j = sys.jacobian(t, z)?;
                    jac = Some(j.clone());
                    j
                }
            };
            let n = z.len();
            let iter_matrix = DMatrix::<f64>::identity(n, n) - j * (0.5 * h);
            let Some(lu) = Some(iter_matrix.lu()).filter(|lu| lu.is_invertible()) else {
                return Err(SolveError::Singular("trapezoid iteration matrix"));
            };
            let mut z1 = z_pred.clone();
            let mut converged = false;
            let mut failed = false;
            for _ in 0..self.settings.max_newton {
                let f1 = match sys.rhs(t + h, &z1) {
                    Ok(v) => v,
                    Err(SolveError::PowerFlowDiverged { .. }) | Err(SolveError::NonFinite(_)) => {
                        failed = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let resid = &z1 - z - (f + &f1) * (0.5 * h);
                let dz = lu.solve(&(-resid)).ok_or(SolveError::Singular("trapezoid iteration"))?;
                z1 += &dz;
                let w = self.weights(z, &z1);
                let size = dz.zip_map(&w, |d, w| (d / w).abs()).amax();
                if !size.is_finite() {
                    failed = true;
                    break;
                }
                if size < 1e-3 {
                    converged = true;
                    break;
                }
            }
            if !converged || failed {
                self.rejected += 1;
                if fixed {
                    return Err(SolveError::StepUnderflow { t });
                }
                self.h = h * 0.25;
                continue;
            }

            // keep flagged components non-negative
            let mask = sys.nonnegative().to_vec();
            let mut crossing: Option<f64> = None;
            for k in 0..n {
                if mask[k] && z1[k] < 0.0 {
                    let deep = z1[k] < -self.settings.atol;
                    if deep && z[k] > 0.0 && !fixed && h > 1e3 * self.settings.h_min {
                        let frac = z[k] / (z[k] - z1[k]);
                        crossing = Some(crossing.map_or(frac, |c: f64| c.min(frac)));
                    }
                }
            }
            if let Some(frac) = crossing {
                if frac < 0.9 {
                    self.rejected += 1;
                    self.h = h * frac.max(0.05);
                    self.history = None;
                    continue;
                }
            }
            for k in 0..n {
                if mask[k] && z1[k] < 0.0 {
                    z1[k] = 0.0;
                }
            }

            let f1 = match sys.rhs(t + h, &z1) {
                Ok(v) => v,
                Err(SolveError::PowerFlowDiverged { .. }) | Err(SolveError::NonFinite(_)) if !fixed => {
                    self.rejected += 1;
                    self.h = h * 0.25;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !fixed {
                let w = self.weights(z, &z1);
                let err = (&z1 - &z_pred)
                    .zip_map(&w, |d, w| (d * factor / w).abs())
                    .amax();
                if !err.is_finite() || err > 1.0 {
                    self.rejected += 1;
                    let shrink = if err.is_finite() { (0.9 * err.powf(-1.0 / 3.0)).max(0.1) } else { 0.1 };
                    self.h = h * shrink;
                    jac = None;
                    continue;
                }
                let grow = if err > 0.0 { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) } else { 5.0 };
                self.h = (h * grow).min(self.settings.h_max);
            }
            self.history = Some((f.clone(), h));
            self.accepted += 1;
            return Ok(Accepted {
                t: t + h,
                z: z1,
                f: f1,
                h,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// dz/dt = A z with a stiff and a slow mode.
    struct Linear {
        a: DMatrix<f64>,
        mask: Vec<bool>,
    }

    impl OdeSystem for Linear {
        fn rhs(&mut self, _t: f64, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
            Ok(&self.a * z)
        }
        fn jacobian(&mut self, _t: f64, _z: &DVector<f64>) -> Result<DMatrix<f64>, SolveError> {
            Ok(self.a.clone())
        }
        fn nonnegative(&self) -> &[bool] {
            &self.mask
        }
    }

    fn run(sys: &mut Linear, z0: DVector<f64>, t_end: f64, settings: IntegratorSettings) -> DVector<f64> {
        let mut integ = Trapezoid::new(settings);
        let (mut t, mut z) = (0.0, z0);
        let mut f = sys.rhs(t, &z).unwrap();
        while t < t_end {
            let acc = integ.step(sys, t, &z, &f, t_end).unwrap();
            t = acc.t;
            z = acc.z;
            f = acc.f;
        }
        z
    }

    #[test]
    fn decay_matches_exponential() {
        let mut sys = Linear {
            a: DMatrix::from_row_slice(2, 2, &[-1000.0, 0.0, 0.0, -0.5]),
            mask: vec![false, false],
        };
        let z = run(&mut sys, DVector::from_column_slice(&[1.0, 1.0]), 4.0, Default::default());
        assert!((z[1] - (-2.0f64).exp()).abs() < 1e-5, "{}", z[1]);
        assert!(z[0].abs() < 1e-6);
    }

    #[test]
    fn fixed_steps_converge_at_second_order() {
        let mut sys = Linear {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            mask: vec![false, false],
        };
        let exact = DVector::from_column_slice(&[1.0f64.cos(), -1.0f64.sin()]);
        let err = |h: f64, sys: &mut Linear| {
            let s = IntegratorSettings {
                fixed_step: Some(h),
                ..Default::default()
            };
            (run(sys, DVector::from_column_slice(&[1.0, 0.0]), 1.0, s) - &exact).amax()
        };
        let e1 = err(0.05, &mut sys);
        let e2 = err(0.025, &mut sys);
        let ratio = e1 / e2;
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn flagged_component_never_negative() {
        // z0 decays through zero if unconstrained: dz0/dt = -1
        struct Drain {
            mask: Vec<bool>,
        }
        impl OdeSystem for Drain {
            fn rhs(&mut self, _t: f64, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
                let rate = if z[0] > 0.0 { -1.0 } else { 0.0 };
                Ok(DVector::from_column_slice(&[rate]))
            }
            fn jacobian(&mut self, _t: f64, _z: &DVector<f64>) -> Result<DMatrix<f64>, SolveError> {
                Ok(DMatrix::zeros(1, 1))
            }
            fn nonnegative(&self) -> &[bool] {
                &self.mask
            }
        }
        let mut sys = Drain { mask: vec![true] };
        let mut integ = Trapezoid::new(Default::default());
        let (mut t, mut z) = (0.0, DVector::from_column_slice(&[0.5]));
        let mut f = sys.rhs(t, &z).unwrap();
        while t < 3.0 {
            let acc = integ.step(&mut sys, t, &z, &f, 3.0).unwrap();
            assert!(acc.z[0] >= 0.0);
            (t, z, f) = (acc.t, acc.z, acc.f);
        }
        assert_eq!(z[0], 0.0);
    }
}
