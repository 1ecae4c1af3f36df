//! Centralized solution of the least-injection problem on the linear plant,
//! used to certify equilibria of the distributed dynamics.
//!
//! The problem `min ‖q‖²` s.t. `v_lo ≤ base_v + X_c (q − base_q) ≤ v_hi`,
//! `q_lo ≤ q ≤ q_hi` is a strictly convex QP. It is solved with a dual
//! active-set method in the style of Goldfarb and Idnani: start from the
//! unconstrained minimizer `q = 0` and repeatedly add the most violated
//! constraint, dropping active constraints whose multipliers would turn
//! negative. Limits are treated as closed.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;
use crate::pdgd::{ControllerState, Limits};
use crate::sensitivity::SensitivityMatrix;

pub const SOLVER_TOL: f64 = 1e-10;
pub const CERTIFY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constraint {
    /// Upper voltage limit at load-bus position j.
    VoltageUpper(usize),
    VoltageLower(usize),
    /// Upper output limit at controller position i.
    OutputUpper(usize),
    OutputLower(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub q_star: DVector<f64>,
    /// Multipliers in the layout of the controller state (`q` = `q_star`).
    pub multipliers: ControllerState,
    pub active: Vec<Constraint>,
    pub objective_value: f64,
    pub kkt_residual: f64,
}

/// Constraints stacked as `A q ≤ b`.
struct Stacked {
    a: DMatrix<f64>,
    b: DVector<f64>,
    tags: Vec<Constraint>,
}

fn stack(sens: &SensitivityMatrix, lim: &Limits) -> Result<Stacked, SolveError> {
    let xc = sens.x_controlled();
    let (m, c) = xc.shape();
    if lim.n_load() != m || lim.n_controlled() != c {
        return Err(SolveError::Dimension("limits do not match the sensitivity model".into()));
    }
    lim.validate()?;
    // v(q) = offset + X_c q
    let offset = &sens.base_v - &xc * &sens.base_q;
    let rows = 2 * m + 2 * c;
    let mut a = DMatrix::zeros(rows, c);
    let mut b = DVector::zeros(rows);
    let mut tags = Vec::with_capacity(rows);
    for j in 0..m {
        let r = 2 * j;
        for i in 0..c {
            a[(r, i)] = xc[(j, i)];
            a[(r + 1, i)] = -xc[(j, i)];
        }
        b[r] = lim.v_hi[j] - offset[j];
        b[r + 1] = offset[j] - lim.v_lo[j];
        tags.push(Constraint::VoltageUpper(j));
        tags.push(Constraint::VoltageLower(j));
    }
    for i in 0..c {
        let r = 2 * m + 2 * i;
        a[(r, i)] = 1.0;
        a[(r + 1, i)] = -1.0;
        b[r] = lim.q_hi[i];
        b[r + 1] = -lim.q_lo[i];
        tags.push(Constraint::OutputUpper(i));
        tags.push(Constraint::OutputLower(i));
    }
    Ok(Stacked { a, b, tags })
}

fn unstack(y: &DVector<f64>, q: &DVector<f64>, m: usize, c: usize) -> ControllerState {
    let mut s = ControllerState::zeros(m, c);
    s.q = q.clone();
    for j in 0..m {
        s.lam_hi[j] = y[2 * j];
        s.lam_lo[j] = y[2 * j + 1];
    }
    for i in 0..c {
        s.mu_hi[i] = y[2 * m + 2 * i];
        s.mu_lo[i] = y[2 * m + 2 * i + 1];
    }
    s
}

fn finish(
    q: DVector<f64>,
    y: DVector<f64>,
    st: &Stacked,
    sens: &SensitivityMatrix,
    lim: &Limits,
) -> QpSolution {
    let (m, c) = (lim.n_load(), lim.n_controlled());
    let active = st
        .tags
        .iter()
        .enumerate()
        .filter(|&(k, _)| (st.a.row(k).dot(&q.transpose()) - st.b[k]).abs() <= 1e-9)
        .map(|(_, t)| *t)
        .collect();
    let multipliers = unstack(&y, &q, m, c);
    let kkt = kkt_residual(&q, &multipliers, sens, lim).unwrap_or(f64::INFINITY);
    QpSolution {
        objective_value: q.norm_squared(),
        q_star: q,
        multipliers,
        active,
        kkt_residual: kkt,
    }
}

/// Solve the centralized problem with the dual active-set method.
pub fn solve_centralized(sens: &SensitivityMatrix, lim: &Limits) -> Result<QpSolution, SolveError> {
    let st = stack(sens, lim)?;
    let c = st.a.ncols();
    let rows = st.a.nrows();
    // Hessian of ‖q‖² is 2I
    let h = DMatrix::<f64>::identity(c, c) * 2.0;
    let scale = 1.0 + st.b.amax();
    let mut q = DVector::<f64>::zeros(c);
    let mut y = DVector::<f64>::zeros(rows);
    let mut working: Vec<usize> = Vec::new();
    let max_outer = 50 * (rows + 1);

    for _ in 0..max_outer {
        // most violated constraint
        let violation = &st.a * &q - &st.b;
        let Some((p, s_p)) = violation
            .iter()
            .enumerate()
            .filter(|(k, _)| !working.contains(k))
            .map(|(k, &s)| (k, s))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if s_p <= SOLVER_TOL * scale {
            let sol = finish(q, y, &st, sens, lim);
            return Ok(sol);
        }
        let a_p = st.a.row(p).transpose();
        loop {
            let k = working.len();
            let dim = c + k;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (c, c)).copy_from(&h);
            for (col, &w) in working.iter().enumerate() {
                for i in 0..c {
                    kkt[(i, c + col)] = st.a[(w, i)];
                    kkt[(c + col, i)] = st.a[(w, i)];
                }
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, c).copy_from(&(-&a_p));
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or(SolveError::Singular("active-set KKT system"))?;
            let z = sol.rows(0, c).into_owned();
            let r = sol.rows(c, k).into_owned();

            // largest step keeping the working-set multipliers non-negative
            let mut partial: Option<(f64, usize)> = None;
            for (idx, &w) in working.iter().enumerate() {
                if r[idx] < -1e-14 {
                    let t = -y[w] / r[idx];
                    if partial.map_or(true, |(best, _)| t < best) {
                        partial = Some((t, idx));
                    }
                }
            }
            let curvature = a_p.dot(&z);
            let s_now = a_p.dot(&q) - st.b[p];
            // with c independent rows in the working set z vanishes up to
            // rounding, and a noise-sized curvature would give a huge step
            let full = if k < c && -curvature > 1e-12 * a_p.norm_squared() {
                Some(-s_now / curvature)
            } else {
                None
            };
            match (full, partial) {
                (None, None) => return Err(SolveError::Infeasible),
                (Some(t_full), partial) if partial.map_or(true, |(t, _)| t_full <= t) => {
                    q += &z * t_full;
                    for (idx, &w) in working.iter().enumerate() {
                        y[w] += t_full * r[idx];
                    }
                    y[p] += t_full;
                    working.push(p);
                    break;
                }
                (_, Some((t, idx))) => {
                    q += &z * t;
                    for (i2, &w) in working.iter().enumerate() {
                        y[w] += t * r[i2];
                    }
                    y[p] += t;
                    let dropped = working.remove(idx);
                    y[dropped] = 0.0;
                }
                (Some(_), None) => unreachable!(),
            }
        }
    }
    let violation = (&st.a * &q - &st.b).max();
    if violation <= SOLVER_TOL * scale {
        Ok(finish(q, y, &st, sens, lim))
    } else {
        Err(SolveError::Infeasible)
    }
}

/// Brute-force reference: try every subset of at most C constraints as the
/// active set and keep the feasible, dual-feasible candidate. Intended for
/// small problems (at most 20 stacked constraints).
pub fn solve_by_enumeration(sens: &SensitivityMatrix, lim: &Limits) -> Result<QpSolution, SolveError> {
    let st = stack(sens, lim)?;
    let rows = st.a.nrows();
    let c = st.a.ncols();
    if rows > 20 {
        return Err(SolveError::Invalid(format!("{rows} constraints is too many to enumerate")));
    }
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << rows) {
        let set: Vec<usize> = (0..rows).filter(|k| mask & (1 << k) != 0).collect();
        if set.len() > c {
            continue;
        }
        // min ‖q‖² with A_S q = b_S:  q = −A_Sᵀ y / 2,  y = −2 (A_S A_Sᵀ)⁻¹ b_S
        let (q, y_s) = if set.is_empty() {
            (DVector::zeros(c), DVector::zeros(0))
        } else {
            let a_s = DMatrix::from_fn(set.len(), c, |r, i| st.a[(set[r], i)]);
            let b_s = DVector::from_fn(set.len(), |r, _| st.b[set[r]]);
            let gram = &a_s * a_s.transpose();
            if gram.determinant().abs() < 1e-14 {
                continue;
            }
            let Some(y_s) = gram.lu().solve(&(b_s * -2.0)) else { continue };
            (a_s.tr_mul(&y_s) * -0.5, y_s)
        };
        if y_s.iter().any(|&v| v < -1e-12) {
            continue;
        }
        if (&st.a * &q - &st.b).iter().any(|&s| s > 1e-9) {
            continue;
        }
        let mut y = DVector::zeros(rows);
        for (r, &k) in set.iter().enumerate() {
            y[k] = y_s[r].max(0.0);
        }
        let f = q.norm_squared();
        if best.as_ref().map_or(true, |(bf, _, _)| f < *bf - 1e-15) {
            best = Some((f, q, y));
        }
    }
    let (_, q, y) = best.ok_or(SolveError::Infeasible)?;
    Ok(finish(q, y, &st, sens, lim))
}

/// Infinity norm over stationarity, primal feasibility, dual feasibility and
/// complementarity of a candidate primal-dual pair on the linear plant.
pub fn kkt_residual(
    q: &DVector<f64>,
    multipliers: &ControllerState,
    sens: &SensitivityMatrix,
    lim: &Limits,
) -> Result<f64, SolveError> {
    let xc = sens.x_controlled();
    let (m, c) = xc.shape();
    if q.len() != c
        || multipliers.n_controlled() != c
        || multipliers.n_load() != m
        || lim.n_load() != m
        || lim.n_controlled() != c
    {
        return Err(SolveError::Dimension("KKT inputs disagree in size".into()));
    }
    let v = sens.predict_voltage(q)?;
    let stationarity = q * 2.0 + xc.tr_mul(&(&multipliers.lam_hi - &multipliers.lam_lo)) + &multipliers.mu_hi
        - &multipliers.mu_lo;
    let mut worst = stationarity.amax();
    let mut take = |x: f64| worst = worst.max(x);
    for j in 0..m {
        let up = v[j] - lim.v_hi[j];
        let lo = lim.v_lo[j] - v[j];
        take(up.max(0.0));
        take(lo.max(0.0));
        take((-multipliers.lam_hi[j]).max(0.0));
        take((-multipliers.lam_lo[j]).max(0.0));
        take((multipliers.lam_hi[j] * up).abs());
        take((multipliers.lam_lo[j] * lo).abs());
    }
    for i in 0..c {
        let up = q[i] - lim.q_hi[i];
        let lo = lim.q_lo[i] - q[i];
        take(up.max(0.0));
        take(lo.max(0.0));
        take((-multipliers.mu_hi[i]).max(0.0));
        take((-multipliers.mu_lo[i]).max(0.0));
        take((multipliers.mu_hi[i] * up).abs());
        take((multipliers.mu_lo[i] * lo).abs());
    }
    Ok(worst)
}
