//! Calibration of finite-strain elastoplastic material parameters from
//! full-field displacement and load data.
//!
//! Two inverse methods are provided: finite element model updating (FEMU),
//! which fits a full forward simulation to the measurements, and the virtual
//! fields method (VFM), which only needs constitutive updates driven by the
//! measured kinematics. Gradients of both objectives come from forward or
//! adjoint local sensitivities built on forward-mode automatic
//! differentiation.

pub mod ad;
pub mod constitutive;
pub mod error;
pub mod fem;
pub mod femu;
pub mod gradcheck;
pub mod mesh;
pub mod mls;
pub mod optimize;
pub mod params;
pub mod sparse;
pub mod synth;
pub mod vfm;

pub use error::{Error, Result};

pub use constitutive::{Elastic, Hardening, Material};
pub use fem::{FeModel, Schedule, Trajectory};
pub use femu::FemuProblem;
pub use mesh::{Mesh, NotchedPlateSpec};
pub use optimize::{Bounds, OptOptions};
pub use params::{HardeningKind, ParamSpace};
pub use synth::MeasurementSet;
pub use vfm::{VfmProblem, VirtualField};
