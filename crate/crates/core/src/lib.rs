//! Tagged-particle dynamics in a hard-sphere Rayleigh gas on the unit torus,
//! its idealized linear Boltzmann counterpart, and the diffusive limit.

pub mod bounds;
pub mod contact;
pub mod error;
pub mod grid;
pub mod harness;
pub mod histogram;
pub mod hydro;
pub mod ideal;
pub mod kinetics;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod tree;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::Vec3;
