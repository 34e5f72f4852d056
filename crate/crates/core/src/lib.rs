//! Mixed-dimensional finite-volume forward modeling of direct-current
//! geoelectrical surveys: a 3D conductive bulk coupled to 1D reduced
//! electrodes and a 2D reduced resistive liner.

pub mod coupling;
pub mod error;
pub mod fv;
pub mod io;
pub mod mesh;
pub mod scenario;
pub mod solver;
pub mod sparse;
pub mod spatial;
pub mod survey;
pub mod sweep;

pub use error::{Error, Result, Warning};
