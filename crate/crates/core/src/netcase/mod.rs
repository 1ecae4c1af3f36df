//! Network model: buses, branches and generators in per-unit on the system
//! MVA base, plus nodal admittance assembly and the topology/load edits used
//! by the scenarios (line trips, load scaling).

mod parse;

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Complex, DMatrix};

use crate::error::CaseError;

pub use parse::{parse_case, write_case};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Real power demand (pu).
    pub p_load: f64,
    /// Reactive power demand (pu).
    pub q_load: f64,
    /// Shunt conductance at 1 pu voltage (pu).
    pub g_shunt: f64,
    /// Shunt susceptance at 1 pu voltage (pu).
    pub b_shunt: f64,
    /// Voltage magnitude setpoint (pu). Initial guess only for PQ buses.
    pub v_setpoint: f64,
    pub has_controller: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (pu).
    pub b_sh: f64,
    /// Off-nominal turns ratio on the from side, 1.0 for lines.
    pub tap_ratio: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn joins(&self, a: usize, b: usize) -> bool {
        (self.from_bus == a && self.to_bus == b) || (self.from_bus == b && self.to_bus == a)
    }

    pub fn series_admittance(&self) -> Complex<f64> {
        Complex::new(1.0, 0.0) / Complex::new(self.r, self.x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    /// Scheduled real power output (pu).
    pub p_gen: f64,
    pub v_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

/// Per-bus load multipliers. Buses absent from a `PerBus` map keep their load.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadScale {
    Uniform(f64),
    PerBus(BTreeMap<usize, f64>),
}

impl From<f64> for LoadScale {
    fn from(f: f64) -> Self {
        LoadScale::Uniform(f)
    }
}

impl NetworkCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Row index of a bus id in every per-bus vector and matrix.
    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus(&self, id: usize) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Check every structural invariant of a case.
    pub fn validate(&self) -> Result<(), CaseError> {
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(CaseError::Unsupported(format!(
                "base MVA must be positive, got {}",
                self.base_mva
            )));
        }
        let mut seen = BTreeMap::new();
        let mut slack: Option<usize> = None;
        for bus in &self.buses {
            if seen.insert(bus.id, ()).is_some() {
                return Err(CaseError::DuplicateBus(bus.id));
            }
            let fields = [bus.p_load, bus.q_load, bus.g_shunt, bus.b_shunt, bus.v_setpoint];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(CaseError::InvalidBus(bus.id, "non-finite data".into()));
            }
            match bus.kind {
                BusKind::Slack => {
                    if let Some(prev) = slack {
                        return Err(CaseError::MultipleSlack(prev, bus.id));
                    }
                    slack = Some(bus.id);
                }
                BusKind::Pv | BusKind::Pq => {}
            }
            if bus.kind != BusKind::Pq && bus.v_setpoint <= 0.0 {
                return Err(CaseError::InvalidBus(
                    bus.id,
                    "voltage setpoint must be positive".into(),
                ));
            }
            if bus.has_controller && bus.kind != BusKind::Pq {
                return Err(CaseError::InvalidBus(
                    bus.id,
                    "controllers are only allowed at load buses".into(),
                ));
            }
        }
        if slack.is_none() {
            return Err(CaseError::NoSlack);
        }
        for br in &self.branches {
            for id in [br.from_bus, br.to_bus] {
                if !seen.contains_key(&id) {
                    return Err(CaseError::UnknownBus {
                        context: format!("branch {}-{}", br.from_bus, br.to_bus),
                        id,
                    });
                }
            }
            if ![br.r, br.x, br.b_sh, br.tap_ratio].iter().all(|v| v.is_finite()) {
                return Err(CaseError::Unsupported(format!(
                    "branch {}-{} has non-finite data",
                    br.from_bus, br.to_bus
                )));
            }
            if br.in_service && br.x == 0.0 {
                return Err(CaseError::ZeroReactance {
                    from: br.from_bus,
                    to: br.to_bus,
                });
            }
            if br.tap_ratio <= 0.0 {
                return Err(CaseError::BadTap {
                    from: br.from_bus,
                    to: br.to_bus,
                    tap: br.tap_ratio,
                });
            }
        }
        for gen in &self.generators {
            match self.bus(gen.bus) {
                None => {
                    return Err(CaseError::UnknownBus {
                        context: "generator".into(),
                        id: gen.bus,
                    })
                }
                Some(b) if b.kind == BusKind::Pq => {
                    return Err(CaseError::InvalidBus(
                        gen.bus,
                        "generator attached to a load bus".into(),
                    ))
                }
                Some(_) => {}
            }
            if !gen.p_gen.is_finite() || !gen.v_setpoint.is_finite() {
                return Err(CaseError::InvalidBus(gen.bus, "non-finite generator data".into()));
            }
        }
        for bus in &self.buses {
            if bus.kind == BusKind::Pv && !self.generators.iter().any(|g| g.bus == bus.id) {
                return Err(CaseError::InvalidBus(bus.id, "PV bus without a generator".into()));
            }
        }
        Ok(())
    }

    /// True when every bus is reachable from the slack over in-service branches.
    pub fn is_connected(&self) -> bool {
        let n = self.n_buses();
        if n == 0 {
            return false;
        }
        let index: BTreeMap<usize, usize> =
            self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            if let (Some(&f), Some(&t)) = (index.get(&br.from_bus), index.get(&br.to_bus)) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for &m in &adj[k] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Copy of the case with the first in-service branch joining `a` and `b`
    /// taken out of service.
    pub fn trip_branch(&self, a: usize, b: usize) -> Result<NetworkCase, CaseError> {
        let pos = self
            .branches
            .iter()
            .position(|br| br.in_service && br.joins(a, b))
            .ok_or(CaseError::NoSuchBranch { from: a, to: b })?;
        let mut out = self.clone();
        out.branches[pos].in_service = false;
        if !out.is_connected() {
            return Err(CaseError::Islanding { from: a, to: b });
        }
        Ok(out)
    }

    /// Copy of the case with load-bus demand multiplied by `scale`. Slack and
    /// PV bus data are left untouched.
    pub fn scale_loads(&self, scale: &LoadScale) -> Result<NetworkCase, CaseError> {
        let mut out = self.clone();
        match scale {
            LoadScale::Uniform(f) => {
                check_factor(*f)?;
                for bus in out.buses.iter_mut().filter(|b| b.kind == BusKind::Pq) {
                    bus.p_load *= f;
                    bus.q_load *= f;
                }
            }
            LoadScale::PerBus(map) => {
                for (&id, &f) in map {
                    check_factor(f)?;
                    let bus = out
                        .buses
                        .iter_mut()
                        .find(|b| b.id == id)
                        .ok_or_else(|| CaseError::UnknownBus {
                            context: "load scale".into(),
                            id,
                        })?;
                    if bus.kind != BusKind::Pq {
                        return Err(CaseError::InvalidScale(format!("bus {id} is not a load bus")));
                    }
                    bus.p_load *= f;
                    bus.q_load *= f;
                }
            }
        }
        Ok(out)
    }

    /// Place controllers at exactly the listed load buses.
    pub fn with_controllers(&self, ids: &[usize]) -> Result<NetworkCase, CaseError> {
        let mut out = self.clone();
        for bus in out.buses.iter_mut() {
            bus.has_controller = false;
        }
        for &id in ids {
            let bus = out
                .buses
                .iter_mut()
                .find(|b| b.id == id)
                .ok_or_else(|| CaseError::UnknownBus {
                    context: "controller list".into(),
                    id,
                })?;
            if bus.kind != BusKind::Pq {
                return Err(CaseError::InvalidBus(id, "controllers are only allowed at load buses".into()));
            }
            bus.has_controller = true;
        }
        Ok(out)
    }
}

fn check_factor(f: f64) -> Result<(), CaseError> {
    if f.is_finite() && f >= 0.0 {
        Ok(())
    } else {
        Err(CaseError::InvalidScale(format!("factor must be finite and non-negative, got {f}")))
    }
}

/// Real and imaginary parts of the nodal admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrices {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bus_index: BTreeMap<usize, usize>,
}

impl AdmittanceMatrices {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn entry(&self, k: usize, n: usize) -> Complex<f64> {
        Complex::new(self.g[(k, n)], self.b[(k, n)])
    }
}

/// Assemble Y = G + jB from in-service branches and bus shunts.
///
/// Each branch contributes the standard pi model: series admittance
/// `y = 1/(r + jx)`, half the line charging at each terminal, and the tap
/// ratio applied on the from side.
pub fn build_admittance(case: &NetworkCase) -> AdmittanceMatrices {
    let n = case.n_buses();
    let bus_index: BTreeMap<usize, usize> =
        case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
    for br in case.branches.iter().filter(|b| b.in_service) {
        let f = bus_index[&br.from_bus];
        let t = bus_index[&br.to_bus];
        let ys = br.series_admittance();
        let charging = Complex::new(0.0, br.b_sh / 2.0);
        let tap = br.tap_ratio;
        let ytt = ys + charging;
        y[(f, f)] += ytt / (tap * tap);
        y[(t, t)] += ytt;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex::new(bus.g_shunt, bus.b_shunt);
    }
    AdmittanceMatrices {
        g: y.map(|c| c.re),
        b: y.map(|c| c.im),
        bus_index,
    }
}

/// Bundled IEEE test systems in MATPOWER case format.
pub mod bundled {
    use super::{parse_case, NetworkCase};

    pub const CASE14: &str = include_str!("../../../../data/case14.m");
    pub const CASE30: &str = include_str!("../../../../data/case30.m");

    pub fn case14() -> NetworkCase {
        parse_case(CASE14).expect("bundled case14 parses")
    }

    pub fn case30() -> NetworkCase {
        parse_case(CASE30).expect("bundled case30 parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_bus(r: f64, x: f64) -> NetworkCase {
        NetworkCase {
            name: "two_bus".into(),
            base_mva: 100.0,
            buses: vec![
                Bus {
                    id: 1,
                    kind: BusKind::Slack,
                    p_load: 0.0,
                    q_load: 0.0,
                    g_shunt: 0.0,
                    b_shunt: 0.0,
                    v_setpoint: 1.0,
                    has_controller: false,
                },
                Bus {
                    id: 2,
                    kind: BusKind::Pq,
                    p_load: 0.0,
                    q_load: 0.0,
                    g_shunt: 0.0,
                    b_shunt: 0.0,
                    v_setpoint: 1.0,
                    has_controller: true,
                },
            ],
            branches: vec![Branch {
                from_bus: 1,
                to_bus: 2,
                r,
                x,
                b_sh: 0.0,
                tap_ratio: 1.0,
                in_service: true,
            }],
            generators: vec![Generator {
                bus: 1,
                p_gen: 0.0,
                v_setpoint: 1.0,
            }],
        }
    }

    #[test]
    fn lossless_two_bus_susceptance() {
        let adm = build_admittance(&two_bus(0.0, 0.1));
        assert_abs_diff_eq!(adm.b[(0, 0)], -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(adm.b[(0, 1)], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(adm.b[(1, 0)], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(adm.b[(1, 1)], -10.0, epsilon = 1e-12);
        assert!(adm.g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn lossy_two_bus_off_diagonal() {
        // 1/(0.01 + j0.1) = (0.01 - j0.1) / 0.0101
        let adm = build_admittance(&two_bus(0.01, 0.1));
        assert_abs_diff_eq!(adm.g[(0, 1)], -0.990_099_009_900_990_1, epsilon = 1e-12);
        assert_abs_diff_eq!(adm.b[(0, 1)], 9.900_990_099_009_901, epsilon = 1e-12);
        assert_abs_diff_eq!(adm.g[(0, 0)], 0.990_099_009_900_990_1, epsilon = 1e-12);
    }

    #[test]
    fn trip_rejects_islanding_and_missing_branch() {
        let c = two_bus(0.0, 0.1);
        assert_eq!(c.trip_branch(1, 2), Err(CaseError::Islanding { from: 1, to: 2 }));
        let c14 = bundled::case14();
        assert_eq!(c14.trip_branch(1, 14), Err(CaseError::NoSuchBranch { from: 1, to: 14 }));
    }

    #[test]
    fn trip_4_5_zeroes_entry() {
        let c14 = bundled::case14();
        let tripped = c14.trip_branch(5, 4).unwrap();
        let adm = build_admittance(&tripped);
        let (i4, i5) = (adm.bus_index[&4], adm.bus_index[&5]);
        assert_eq!(adm.b[(i4, i5)], 0.0);
        assert_eq!(adm.g[(i5, i4)], 0.0);
        // the original case is untouched
        assert!(c14.branches.iter().all(|b| b.in_service));
    }

    #[test]
    fn scale_loads_identity_zero_and_negative() {
        let c14 = bundled::case14();
        assert_eq!(c14.scale_loads(&1.0.into()).unwrap(), c14);
        let zero = c14.scale_loads(&0.0.into()).unwrap();
        for (a, b) in zero.buses.iter().zip(&c14.buses) {
            if a.kind == BusKind::Pq {
                assert_eq!((a.p_load, a.q_load), (0.0, 0.0));
            } else {
                assert_eq!(a, b);
            }
        }
        assert!(matches!(
            c14.scale_loads(&LoadScale::Uniform(-0.5)),
            Err(CaseError::InvalidScale(_))
        ));
    }

    #[test]
    fn per_bus_scale_touches_only_named_buses() {
        let c14 = bundled::case14();
        let map = BTreeMap::from([(14, 2.0)]);
        let scaled = c14.scale_loads(&LoadScale::PerBus(map)).unwrap();
        let b14 = scaled.bus(14).unwrap();
        assert_abs_diff_eq!(b14.p_load, 2.0 * c14.bus(14).unwrap().p_load);
        assert_eq!(scaled.bus(13), c14.bus(13));
        let bad = BTreeMap::from([(2, 2.0)]);
        assert!(c14.scale_loads(&LoadScale::PerBus(bad)).is_err());
    }

    #[test]
    fn controllers_only_on_load_buses() {
        let c14 = bundled::case14();
        let sub = c14.with_controllers(&[4, 14]).unwrap();
        assert_eq!(sub.buses.iter().filter(|b| b.has_controller).count(), 2);
        assert!(c14.with_controllers(&[2]).is_err());
        assert!(c14.with_controllers(&[99]).is_err());
    }
}
