//! Optimal distributed volt/var control by primal-dual gradient dynamics.
//!
//! The crate couples a reactive-power controller, one agent per load bus,
//! to a quasi-static AC power-flow plant. The controller descends the
//! Lagrangian of a least-injection problem in its reactive outputs while
//! ascending in the multipliers of the voltage and output limits.
//!
//! Layout:
//! - [`netcase`]: case parsing, admittance assembly, topology and load edits
//! - [`powerflow`]: Newton-Raphson AC power flow (the plant)
//! - [`sensitivity`]: decoupled voltage/reactive-power sensitivity model
//! - [`pdgd`]: objective, Lagrangian and projected saddle-point dynamics
//! - [`oracle`]: centralized active-set QP used to certify equilibria
//! - [`sim`]: closed-loop integration for static, fault and daily scenarios
//! - [`config`], [`report`]: run configuration and file outputs

pub mod config;
pub mod error;
pub mod netcase;
pub mod oracle;
pub mod pdgd;
pub mod powerflow;
pub mod report;
pub mod sensitivity;
pub mod sim;

pub use error::{CaseError, SolveError};
pub use nalgebra;
pub use netcase::{build_admittance, parse_case, AdmittanceMatrices, NetworkCase};
