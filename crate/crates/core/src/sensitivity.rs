//! Linear voltage/reactive-power model used by the controller.
//!
//! With the decoupled Jacobian `[[-B, G], [-G, -B]]`, real-power balance held
//! (`ΔP = 0`) and only load-bus magnitudes free, eliminating the angles over
//! the non-slack set `A` gives
//!
//! ```text
//! ΔV_L = X ΔQ_L,   X = −(G_LA B_AA⁻¹ G_AL + B_LL)⁻¹
//! ```
//!
//! where `L` is the set of load buses. `X` depends only on the admittance, so
//! it is built once per topology.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;
use crate::netcase::{AdmittanceMatrices, BusKind, NetworkCase};

/// Row indices of each bus class, in case bus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusPartition {
    pub slack: usize,
    pub pv: Vec<usize>,
    /// Load buses (the M voltage-constrained buses).
    pub pq: Vec<usize>,
    /// Controlled buses (the C controllers), a subset of `pq`.
    pub controlled: Vec<usize>,
    /// Position of each controlled bus within `pq`.
    pub controlled_in_pq: Vec<usize>,
    /// Bus ids, indexed by row.
    pub bus_ids: Vec<usize>,
}

impl BusPartition {
    pub fn n_load(&self) -> usize {
        self.pq.len()
    }

    pub fn n_controlled(&self) -> usize {
        self.controlled.len()
    }

    pub fn load_bus_ids(&self) -> Vec<usize> {
        self.pq.iter().map(|&r| self.bus_ids[r]).collect()
    }

    pub fn controlled_bus_ids(&self) -> Vec<usize> {
        self.controlled.iter().map(|&r| self.bus_ids[r]).collect()
    }

    /// Position of a bus id among the load buses.
    pub fn load_position(&self, id: usize) -> Option<usize> {
        self.pq.iter().position(|&r| self.bus_ids[r] == id)
    }

    /// Position of a bus id among the controllers.
    pub fn controller_position(&self, id: usize) -> Option<usize> {
        self.controlled.iter().position(|&r| self.bus_ids[r] == id)
    }
}

pub fn partition_buses(case: &NetworkCase) -> BusPartition {
    let mut pv = Vec::new();
    let mut pq = Vec::new();
    let mut controlled = Vec::new();
    let mut controlled_in_pq = Vec::new();
    for (i, bus) in case.buses.iter().enumerate() {
        match bus.kind {
            BusKind::Slack => {}
            BusKind::Pv => pv.push(i),
            BusKind::Pq => {
                if bus.has_controller {
                    controlled.push(i);
                    controlled_in_pq.push(pq.len());
                }
                pq.push(i);
            }
        }
    }
    BusPartition {
        slack: case.slack_index(),
        pv,
        pq,
        controlled,
        controlled_in_pq,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
    }
}

/// `ΔV = X ΔQ` over load buses, with the linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    /// M×M, entry (j, i) is ∂v_j/∂Q_i.
    pub x: DMatrix<f64>,
    pub partition: BusPartition,
    /// Load-bus voltages at the linearization point (length M).
    pub base_v: DVector<f64>,
    /// Controller outputs at the linearization point (length C).
    pub base_q: DVector<f64>,
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Build `X` from the admittance. The base point starts at `v = 1`, `q = 0`;
/// set it with [`SensitivityMatrix::with_base`].
pub fn voltage_sensitivity(
    adm: &AdmittanceMatrices,
    part: &BusPartition,
) -> Result<SensitivityMatrix, SolveError> {
    let n = adm.n();
    if part.bus_ids.len() != n {
        return Err(SolveError::Dimension(format!(
            "partition covers {} buses, admittance has {n}",
            part.bus_ids.len()
        )));
    }
    let a: Vec<usize> = (0..n).filter(|&i| i != part.slack).collect();
    let l = &part.pq;
    let b_aa = submatrix(&adm.b, &a, &a);
    let g_al = submatrix(&adm.g, &a, l);
    let g_la = submatrix(&adm.g, l, &a);
    let b_ll = submatrix(&adm.b, l, l);
    let angle_coupling = b_aa
        .lu()
        .solve(&g_al)
        .ok_or(SolveError::Singular("non-slack susceptance block"))?;
    let reduced = -(g_la * angle_coupling + b_ll);
    let x = reduced
        .try_inverse()
        .ok_or(SolveError::Singular("reduced voltage/reactive-power matrix"))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite("sensitivity matrix"));
    }
    Ok(SensitivityMatrix {
        x,
        partition: part.clone(),
        base_v: DVector::from_element(l.len(), 1.0),
        base_q: DVector::zeros(part.n_controlled()),
    })
}

impl SensitivityMatrix {
    pub fn n_load(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_controlled(&self) -> usize {
        self.partition.n_controlled()
    }

    /// M×C block: columns of `X` at controlled buses.
    pub fn x_controlled(&self) -> DMatrix<f64> {
        let cols = &self.partition.controlled_in_pq;
        DMatrix::from_fn(self.n_load(), cols.len(), |r, c| self.x[(r, cols[c])])
    }

    pub fn with_base(mut self, base_v: DVector<f64>, base_q: DVector<f64>) -> Result<Self, SolveError> {
        if base_v.len() != self.n_load() || base_q.len() != self.n_controlled() {
            return Err(SolveError::Dimension(format!(
                "base point needs {} voltages and {} outputs",
                self.n_load(),
                self.n_controlled()
            )));
        }
        self.base_v = base_v;
        self.base_q = base_q;
        Ok(self)
    }

    /// Linear plant: `v = base_v + X_c (q − base_q)`.
    pub fn predict_voltage(&self, q: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        if q.len() != self.n_controlled() {
            return Err(SolveError::Dimension(format!(
                "expected {} controller outputs, got {}",
                self.n_controlled(),
                q.len()
            )));
        }
        Ok(&self.base_v + self.x_controlled() * (q - &self.base_q))
    }

    /// Copy with off-diagonal entries zeroed between buses that share no
    /// in-service branch. Experimental; not used by default.
    pub fn truncate_to_neighbors(&self, case: &NetworkCase) -> SensitivityMatrix {
        let ids = self.partition.load_bus_ids();
        let mut out = self.clone();
        for (r, &a) in ids.iter().enumerate() {
            for (c, &b) in ids.iter().enumerate() {
                let adjacent = a == b
                    || case
                        .branches
                        .iter()
                        .any(|br| br.in_service && br.joins(a, b));
                if !adjacent {
                    out.x[(r, c)] = 0.0;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcase::{build_admittance, bundled};
    use approx::assert_abs_diff_eq;

    fn toy() -> NetworkCase {
        crate::parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 0 1 1.1 0.9; 2 1 0 0 0 0 1 1 0 0 1 1.1 0.9];\n\
             mpc.gen = [1 0 0 0 0 1 100 1 0 0];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];",
        )
        .unwrap()
    }

    #[test]
    fn partitions() {
        let p14 = partition_buses(&bundled::case14());
        assert_eq!(p14.load_bus_ids(), vec![4, 5, 7, 9, 10, 11, 12, 13, 14]);
        assert_eq!(p14.controlled_bus_ids(), p14.load_bus_ids());
        assert_eq!(p14.pv.iter().map(|&r| p14.bus_ids[r]).collect::<Vec<_>>(), vec![2, 3, 6, 8]);
        let p30 = partition_buses(&bundled::case30());
        assert_eq!((p30.n_load(), p30.n_controlled()), (24, 24));
        let p2 = partition_buses(&toy());
        assert_eq!((p2.load_bus_ids(), p2.n_controlled()), (vec![2], 1));
    }

    #[test]
    fn toy_sensitivity_is_inverse_susceptance() {
        let case = toy();
        let s = voltage_sensitivity(&build_admittance(&case), &partition_buses(&case)).unwrap();
        assert_abs_diff_eq!(s.x[(0, 0)], 0.1, epsilon = 1e-14);
    }

    #[test]
    fn predict_at_base_and_toy_step() {
        let case = toy();
        let s = voltage_sensitivity(&build_admittance(&case), &partition_buses(&case))
            .unwrap()
            .with_base(DVector::from_element(1, 0.92), DVector::zeros(1))
            .unwrap();
        assert_eq!(s.predict_voltage(&DVector::zeros(1)).unwrap()[0], 0.92);
        assert_abs_diff_eq!(
            s.predict_voltage(&DVector::from_element(1, 0.3)).unwrap()[0],
            0.95,
            epsilon = 1e-15
        );
        assert!(s.predict_voltage(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn case14_entries_nonnegative() {
        let case = bundled::case14();
        let s = voltage_sensitivity(&build_admittance(&case), &partition_buses(&case)).unwrap();
        for j in 0..s.n_load() {
            assert!(s.x[(j, j)] > 0.0);
            for i in 0..s.n_load() {
                assert!(s.x[(j, i)] >= 0.0, "X[{j}][{i}] = {}", s.x[(j, i)]);
            }
        }
    }

    #[test]
    fn subset_of_controllers_restricts_columns() {
        let case = bundled::case14().with_controllers(&[9, 14]).unwrap();
        let s = voltage_sensitivity(&build_admittance(&case), &partition_buses(&case)).unwrap();
        let xc = s.x_controlled();
        assert_eq!(xc.shape(), (9, 2));
        let p9 = s.partition.load_position(9).unwrap();
        assert_eq!(xc[(3, 0)], s.x[(3, p9)]);
    }

    #[test]
    fn neighbor_truncation_keeps_adjacent_entries() {
        let case = bundled::case14();
        let s = voltage_sensitivity(&build_admittance(&case), &partition_buses(&case)).unwrap();
        let t = s.truncate_to_neighbors(&case);
        let (p4, p5, p14) = (
            s.partition.load_position(4).unwrap(),
            s.partition.load_position(5).unwrap(),
            s.partition.load_position(14).unwrap(),
        );
        assert_eq!(t.x[(p4, p5)], s.x[(p4, p5)]);
        assert_eq!(t.x[(p4, p14)], 0.0);
    }
}
