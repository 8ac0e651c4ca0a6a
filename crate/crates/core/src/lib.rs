//! Spherically symmetric Vlasov-Poisson dynamics on a fixed positive ion
//! background: the deviation g = F - f is transported along backward
//! characteristics, the field is obtained from Gauss's law, and a set of
//! diagnostics measures the spatial decay of the charge density.

pub mod acceptance;
pub mod characteristics;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod interp;
pub mod model;
pub mod par;
pub mod phase_grid;
pub mod quadrature;
pub mod report;
pub mod solver;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
