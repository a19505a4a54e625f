//! Simulation of lithographic atom-chip magnetic traps and the magnetic
//! conveyor belt: wire fields, well landscapes, thermal transport and the
//! merging of two Ioffe-Pritchard traps.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod merge;
pub mod minimize;
pub mod scene;
pub mod units;
pub mod waveforms;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

pub use error::{Error, Result};
