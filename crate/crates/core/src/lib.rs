//! Approximate unitary synthesis over a CZ + ZSX instruction set.
//!
//! The pipeline has three stages: a classifier ranks circuit templates for a
//! target unitary, an encoder suggests starting angles for a template, and a
//! gradient-based refiner tunes those angles until the target fidelity is
//! reached.

pub mod error;
pub mod gradsim;
pub mod neural;
pub mod qmat;
pub mod synth;
pub mod tasks;
pub mod templates;

pub use error::{Error, Result};
