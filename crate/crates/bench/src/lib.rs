//! Shared fixtures for the benchmarks.

use fvcal_core::constitutive::{Elastic, Hardening, Material};
use fvcal_core::fem::{FeModel, Schedule};
use fvcal_core::mesh::{build_notched_plate, NotchedPlateSpec};
use fvcal_core::params::ParamSpace;
use fvcal_core::synth::{self, MeasurementSet};

pub fn steel() -> Material<f64> {
    Material { elastic: Elastic { e: 200_000.0, nu: 0.3 }, hardening: Hardening::Voce { y: 330.0, s: 1000.0, d: 10.0 } }
}

/// Notched plate at edge length `h` with the nominal schedule and noiseless
/// data from [`steel`].
pub fn plate(h: f64) -> (FeModel, MeasurementSet) {
    let mesh = build_notched_plate(&NotchedPlateSpec::default().with_edge_length(h)).unwrap();
    let model = FeModel::new(mesh, 1.0, Schedule::nominal()).unwrap();
    let data = synth::generate(&model, &steel()).unwrap();
    (model, data)
}

pub fn plastic_space() -> ParamSpace {
    ParamSpace::new(&steel(), &["Y", "S", "D"]).unwrap()
}

pub const GUESS: [f64; 3] = [360.0, 920.0, 6.0];
