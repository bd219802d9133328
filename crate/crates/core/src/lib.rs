//! Simulation, observability analysis and Kalman-filter calibration of the
//! der_a aggregated distributed energy resource model.

pub mod ad;
pub mod error;
pub mod estimation;
pub mod integrator;
pub mod io;
pub mod model;
pub mod observability;
pub mod scenario;
pub mod smoothing;
pub mod system;

pub use error::{Error, Result};
