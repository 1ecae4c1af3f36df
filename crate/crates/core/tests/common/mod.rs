#![allow(dead_code)]

use std::path::Path;

use voltctl::netcase::{bundled, NetworkCase};
use voltctl::pdgd::Limits;
use voltctl::sensitivity::partition_buses;

/// Published uncontrolled 14-bus profile under heavy load.
pub const HEAVY_PROFILE_14: [f64; 14] = [
    1.0600, 1.0450, 1.0100, 0.9382, 0.9393, 1.0700, 0.9806, 1.0900, 0.9362, 0.9348, 0.9899, 1.0167, 0.9927, 0.8970,
];

/// Heavy-load factor on PQ-bus loads fitted to [`HEAVY_PROFILE_14`].
pub const HEAVY_SCALE_14: f64 = 3.10;
/// Light-load factor that pushes the 30-bus case above 1.05 pu.
pub const LIGHT_SCALE_30: f64 = 0.5;

pub fn heavy14() -> NetworkCase {
    bundled::case14().scale_loads(&HEAVY_SCALE_14.into()).unwrap()
}

pub fn light30() -> NetworkCase {
    bundled::case30().scale_loads(&LIGHT_SCALE_30.into()).unwrap()
}

/// 0.95-1.05 pu voltage band and ±0.2 pu output box.
pub fn limits(case: &NetworkCase) -> Limits {
    let p = partition_buses(case);
    Limits::uniform(p.n_load(), p.n_controlled(), (0.95, 1.05), (-0.2, 0.2)).unwrap()
}

/// Lossless 2-bus line, x = 0.1, 73.6 MVar load: 0.92 pu uncompensated.
pub fn toy() -> NetworkCase {
    voltctl::parse_case(
        "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 0 1 1.1 0.9; 2 1 0 73.6 0 0 1 1 0 0 1 1.1 0.9];\n\
         mpc.gen = [1 0 0 0 0 1 100 1 0 0];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];",
    )
    .unwrap()
}

pub fn toy_limits() -> Limits {
    Limits::uniform(1, 1, (0.95, 1.05), (-0.5, 0.5)).unwrap()
}

/// `(bus, vm, va_deg)` rows from a reference fixture.
pub fn reference(name: &str) -> Vec<(usize, f64, f64)> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let mut rd = csv::Reader::from_path(path).unwrap();
    rd.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect()
}
