//! Least-injection reactive power problem and its primal-dual gradient dynamics.
//!
//! Problem: minimize `Σ q_i²` subject to `v_lo ≤ v(q) ≤ v_hi` at every load
//! bus and `q_lo ≤ q ≤ q_hi` at every controller. The dynamics descend the
//! Lagrangian in `q` and ascend it in the four multiplier vectors, with a
//! positive projection keeping multipliers non-negative:
//!
//! ```text
//! dq_i/dt  = −k_q [2 q_i + Σ_j X[j][i] (λ̄_j − λ̲_j) + μ̄_i − μ̲_i]
//! dλ̄_j/dt  =  k_λ [v_j − v̄_j]⁺_{λ̄_j}       dλ̲_j/dt = k_λ [v̲_j − v_j]⁺_{λ̲_j}
//! dμ̄_i/dt  =  k_μ [q_i − Q̄_i]⁺_{μ̄_i}       dμ̲_i/dt = k_μ [Q̲_i − q_i]⁺_{μ̲_i}
//! ```
//!
//! `v` in the multiplier updates is the measured plant voltage; `X` is the
//! constant sensitivity matrix. `q` itself is never clipped to its box.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;
use crate::sensitivity::SensitivityMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    /// Per load bus (M).
    pub v_lo: DVector<f64>,
    pub v_hi: DVector<f64>,
    /// Per controller (C).
    pub q_lo: DVector<f64>,
    pub q_hi: DVector<f64>,
}

impl Limits {
    pub fn uniform(m: usize, c: usize, v_band: (f64, f64), q_band: (f64, f64)) -> Result<Self, SolveError> {
        let lim = Limits {
            v_lo: DVector::from_element(m, v_band.0),
            v_hi: DVector::from_element(m, v_band.1),
            q_lo: DVector::from_element(c, q_band.0),
            q_hi: DVector::from_element(c, q_band.1),
        };
        lim.validate()?;
        Ok(lim)
    }

    pub fn n_load(&self) -> usize {
        self.v_lo.len()
    }

    pub fn n_controlled(&self) -> usize {
        self.q_lo.len()
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if self.v_lo.len() != self.v_hi.len() || self.q_lo.len() != self.q_hi.len() {
            return Err(SolveError::Dimension("limit vectors differ in length".into()));
        }
        let ordered = |lo: &DVector<f64>, hi: &DVector<f64>| {
            lo.iter().zip(hi.iter()).all(|(l, h)| l.is_finite() && h.is_finite() && l < h)
        };
        if !ordered(&self.v_lo, &self.v_hi) || !ordered(&self.q_lo, &self.q_hi) {
            return Err(SolveError::Invalid("limits must be finite with lo < hi".into()));
        }
        Ok(())
    }
}

/// Primal outputs and the four multiplier vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub q: DVector<f64>,
    pub lam_hi: DVector<f64>,
    pub lam_lo: DVector<f64>,
    pub mu_hi: DVector<f64>,
    pub mu_lo: DVector<f64>,
}

impl ControllerState {
    pub fn zeros(m: usize, c: usize) -> Self {
        ControllerState {
            q: DVector::zeros(c),
            lam_hi: DVector::zeros(m),
            lam_lo: DVector::zeros(m),
            mu_hi: DVector::zeros(c),
            mu_lo: DVector::zeros(c),
        }
    }

    pub fn n_load(&self) -> usize {
        self.lam_hi.len()
    }

    pub fn n_controlled(&self) -> usize {
        self.q.len()
    }

    /// Stack as `[q, λ̄, λ̲, μ̄, μ̲]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let parts = [&self.q, &self.lam_hi, &self.lam_lo, &self.mu_hi, &self.mu_lo];
        DVector::from_iterator(
            parts.iter().map(|p| p.len()).sum(),
            parts.iter().flat_map(|p| p.iter().copied()),
        )
    }

    pub fn from_vector(z: &DVector<f64>, m: usize, c: usize) -> Result<Self, SolveError> {
        if z.len() != 3 * c + 2 * m {
            return Err(SolveError::Dimension(format!(
                "state vector has {} entries, expected {}",
                z.len(),
                3 * c + 2 * m
            )));
        }
        let seg = |start: usize, len: usize| DVector::from_column_slice(&z.as_slice()[start..start + len]);
        Ok(ControllerState {
            q: seg(0, c),
            lam_hi: seg(c, m),
            lam_lo: seg(c + m, m),
            mu_hi: seg(c + 2 * m, c),
            mu_lo: seg(2 * c + 2 * m, c),
        })
    }

    /// Smallest entry over all multiplier vectors.
    pub fn min_multiplier(&self) -> f64 {
        [&self.lam_hi, &self.lam_lo, &self.mu_hi, &self.mu_lo]
            .iter()
            .flat_map(|v| v.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    fn check(&self, m: usize, c: usize) -> Result<(), SolveError> {
        if self.q.len() != c
            || self.mu_hi.len() != c
            || self.mu_lo.len() != c
            || self.lam_hi.len() != m
            || self.lam_lo.len() != m
        {
            return Err(SolveError::Dimension(format!(
                "controller state does not match {m} load buses and {c} controllers"
            )));
        }
        if self.to_vector().iter().any(|x| !x.is_finite()) {
            return Err(SolveError::NonFinite("controller state"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub k_q: f64,
    pub k_lam: f64,
    pub k_mu: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            k_q: 1.0,
            k_lam: 1.0,
            k_mu: 1.0,
        }
    }
}

impl Gains {
    pub fn scaled(self, factor: f64) -> Gains {
        Gains {
            k_q: self.k_q * factor,
            k_lam: self.k_lam * factor,
            k_mu: self.k_mu * factor,
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if [self.k_q, self.k_lam, self.k_mu].iter().all(|k| k.is_finite() && *k > 0.0) {
            Ok(())
        } else {
            Err(SolveError::Invalid("gains must be positive".into()))
        }
    }
}

pub fn objective(q: &DVector<f64>) -> f64 {
    q.norm_squared()
}

pub fn objective_gradient(q: &DVector<f64>) -> DVector<f64> {
    q * 2.0
}

/// `L = f(q) + λ̲ᵀ(v̲ − v) + λ̄ᵀ(v − v̄) + μ̲ᵀ(Q̲ − q) + μ̄ᵀ(q − Q̄)`.
pub fn lagrangian(state: &ControllerState, v: &DVector<f64>, lim: &Limits) -> f64 {
    objective(&state.q)
        + state.lam_lo.dot(&(&lim.v_lo - v))
        + state.lam_hi.dot(&(v - &lim.v_hi))
        + state.mu_lo.dot(&(&lim.q_lo - &state.q))
        + state.mu_hi.dot(&(&state.q - &lim.q_hi))
}

/// `[rate]⁺_multiplier`: the rate itself while the multiplier is positive,
/// and only its non-negative part at the boundary.
pub fn positive_projection(rate: f64, multiplier: f64) -> Result<f64, SolveError> {
    if multiplier < 0.0 || multiplier.is_nan() {
        return Err(SolveError::NegativeMultiplier {
            which: "positive projection",
            value: multiplier,
        });
    }
    Ok(if multiplier > 0.0 { rate } else { rate.max(0.0) })
}

/// The bracketed term of the primal update, `∇_q L` with `∂v/∂q = X_c`.
pub fn primal_gradient(state: &ControllerState, xc: &DMatrix<f64>) -> DVector<f64> {
    objective_gradient(&state.q) + xc.tr_mul(&(&state.lam_hi - &state.lam_lo)) + &state.mu_hi
        - &state.mu_lo
}

/// Time derivative of the controller state given measured load-bus voltages.
pub fn dynamics_rhs(
    state: &ControllerState,
    v_measured: &DVector<f64>,
    sens: &SensitivityMatrix,
    lim: &Limits,
    gains: &Gains,
) -> Result<ControllerState, SolveError> {
    dynamics_rhs_with(state, v_measured, &sens.x_controlled(), lim, gains)
}

/// [`dynamics_rhs`] with the M×C block of `X` precomputed.
pub fn dynamics_rhs_with(
    state: &ControllerState,
    v_measured: &DVector<f64>,
    xc: &DMatrix<f64>,
    lim: &Limits,
    gains: &Gains,
) -> Result<ControllerState, SolveError> {
    let (m, c) = xc.shape();
    state.check(m, c)?;
    if v_measured.len() != m || lim.n_load() != m || lim.n_controlled() != c {
        return Err(SolveError::Dimension(format!(
            "voltages/limits do not match {m} load buses and {c} controllers"
        )));
    }
    if v_measured.iter().any(|x| !x.is_finite()) {
        return Err(SolveError::NonFinite("measured voltage"));
    }
    let project = |rates: DVector<f64>, mult: &DVector<f64>, k: f64| -> Result<DVector<f64>, SolveError> {
        let mut out = DVector::zeros(rates.len());
        for i in 0..rates.len() {
            out[i] = k * positive_projection(rates[i], mult[i])?;
        }
        Ok(out)
    };
    Ok(ControllerState {
        q: primal_gradient(state, xc) * -gains.k_q,
        lam_hi: project(v_measured - &lim.v_hi, &state.lam_hi, gains.k_lam)?,
        lam_lo: project(&lim.v_lo - v_measured, &state.lam_lo, gains.k_lam)?,
        mu_hi: project(&state.q - &lim.q_hi, &state.mu_hi, gains.k_mu)?,
        mu_lo: project(&lim.q_lo - &state.q, &state.mu_lo, gains.k_mu)?,
    })
}

/// Infinity norm of the projected derivative.
pub fn equilibrium_residual(
    state: &ControllerState,
    v: &DVector<f64>,
    sens: &SensitivityMatrix,
    lim: &Limits,
    gains: &Gains,
) -> Result<f64, SolveError> {
    Ok(dynamics_rhs(state, v, sens, lim, gains)?.to_vector().amax())
}

/// Jacobian of the stacked right-hand side with respect to the stacked state,
/// treating `v` as a function of `q` with derivative `dv_dq` (M×C). Projected
/// components that are clamped contribute zero rows.
pub fn rhs_jacobian(
    state: &ControllerState,
    v: &DVector<f64>,
    xc: &DMatrix<f64>,
    dv_dq: &DMatrix<f64>,
    lim: &Limits,
    gains: &Gains,
) -> DMatrix<f64> {
    let (m, c) = xc.shape();
    let n = 3 * c + 2 * m;
    let (o_lh, o_ll, o_mh, o_ml) = (c, c + m, c + 2 * m, 2 * c + 2 * m);
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..c {
        jac[(i, i)] = -2.0 * gains.k_q;
        for j in 0..m {
            jac[(i, o_lh + j)] = -gains.k_q * xc[(j, i)];
            jac[(i, o_ll + j)] = gains.k_q * xc[(j, i)];
        }
        jac[(i, o_mh + i)] = -gains.k_q;
        jac[(i, o_ml + i)] = gains.k_q;
    }
    let passes = |rate: f64, mult: f64| mult > 0.0 || rate > 0.0;
    for j in 0..m {
        if passes(v[j] - lim.v_hi[j], state.lam_hi[j]) {
            for i in 0..c {
                jac[(o_lh + j, i)] = gains.k_lam * dv_dq[(j, i)];
            }
        }
        if passes(lim.v_lo[j] - v[j], state.lam_lo[j]) {
            for i in 0..c {
                jac[(o_ll + j, i)] = -gains.k_lam * dv_dq[(j, i)];
            }
        }
    }
    for i in 0..c {
        if passes(state.q[i] - lim.q_hi[i], state.mu_hi[i]) {
            jac[(o_mh + i, i)] = gains.k_mu;
        }
        if passes(lim.q_lo[i] - state.q[i], state.mu_lo[i]) {
            jac[(o_ml + i, i)] = -gains.k_mu;
        }
    }
    jac
}
